"""Smoke test for the `twostream` extension module.

Run with the built library on the path as `twostream.so`, e.g. via
`cargo test -p twostream-python`, which stages it in a temporary directory.
"""

import json
import os
import sys
import tempfile

import twostream


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    p = twostream.softmax([1.0, 2.0, 3.0])
    assert close(sum(p), 1.0, 1e-12), p
    assert p[0] < p[1] < p[2]

    m = twostream.normalize_attention([0.5, -1.0, 2.0, 0.0])
    assert close(sum(m), 4.0, 1e-9), m

    w = twostream.learn_weights(
        [[0.9, 0.1], [0.2, 0.8]],
        [[0.6, 0.4], [0.4, 0.6]],
        [0, 1],
        lambda_=0.1,
        epsilon=0.05,
    )
    for w_static, w_motion in w:
        assert close(w_static + w_motion, 1.0, 1e-12)
        assert min(w_static, w_motion) >= 0.05 - 1e-15
    # the static stream separates both classes better here
    assert w[0][0] > w[0][1] and w[1][0] > w[1][1], w

    cases = twostream.gradcheck(3)
    assert len(cases) > 40 and all(err <= 1e-4 for _, err in cases)

    with tempfile.TemporaryDirectory() as tmp:
        config = json.dumps({"num_classes": 3, "train_per_class": 2, "test_per_class": 1})
        manifest = twostream.generate_dataset(os.path.join(tmp, "data"), config)
        with open(manifest) as f:
            entries = json.load(f)
        assert len(entries["train"]) == 6 and len(entries["test"]) == 3
        try:
            twostream.evaluate(os.path.join(tmp, "missing.json"), tmp)
        except FileNotFoundError as e:
            assert str(e).startswith("manifest-not-found"), e
        else:
            raise AssertionError("missing manifest accepted")
        try:
            twostream.generate_dataset(tmp, json.dumps({"signal_frames": 0}))
        except ValueError as e:
            assert str(e).startswith("bad-config"), e
        else:
            raise AssertionError("invalid config accepted")

    print("python smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
