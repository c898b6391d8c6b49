use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use twostream_core::collab::{collaborative_optimize, guide_step, CollabParams, GuideParams, StreamFeatures};
use twostream_core::data::{generate_synthetic, SyntheticConfig};
use twostream_core::fusion::{late_fusion, learn_weights, predict, FusionWeights, StreamScores};
use twostream_core::pipeline::{AttentionConfig, StreamModel, TrainConfig};
use twostream_core::spatial::{
    argmax, cam_map, normalize_attention, spatial_forward, weighted_pool, ActivationGrid, AttentionMap, SpatialHead,
    StreamTag,
};
use twostream_core::temporal::{affinity, attend_features, temporal_scores, FeatureSequence, HiddenStates};
use twostream_core::tensor::{conv2d_3x3, softmax};
use twostream_core::Tensor;

fn vec_in(len: impl Into<prop::collection::SizeRange>, range: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-range..range, len)
}

fn matrix(
    rows: std::ops::RangeInclusive<usize>,
    cols: std::ops::RangeInclusive<usize>,
    range: f64,
) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (rows, cols).prop_flat_map(move |(r, c)| prop::collection::vec(vec_in(c, range), r))
}

fn conv_oracle(x: &[f64], h: usize, w: usize, ci: usize, k: &[f64], b: &[f64]) -> Vec<f64> {
    let co = b.len();
    let mut out = vec![0.0; h * w * co];
    for y in 0..h {
        for xx in 0..w {
            for o in 0..co {
                let mut acc = b[o];
                for dy in 0..3 {
                    for dx in 0..3 {
                        let (sy, sx) = (y as isize + dy as isize - 1, xx as isize + dx as isize - 1);
                        if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                            continue;
                        }
                        for i in 0..ci {
                            acc += x[((sy as usize) * w + sx as usize) * ci + i] * k[((dy * 3 + dx) * ci + i) * co + o];
                        }
                    }
                }
                out[(y * w + xx) * co + o] = acc;
            }
        }
    }
    out
}

fn head_with(weights: Vec<f64>, k: usize, c: usize) -> SpatialHead {
    SpatialHead::new(
        Tensor::zeros(&[3, 3, 1, k]),
        Tensor::zeros(&[k]),
        Tensor::new(vec![k, c], weights).unwrap(),
        Tensor::zeros(&[c]),
    )
    .unwrap()
}

fn scores_strategy() -> impl Strategy<Value = Vec<StreamScores>> {
    (2usize..5, 1usize..12).prop_flat_map(|(c, n)| {
        prop::collection::vec(
            (
                prop::collection::vec(0.0..1.0f64, c),
                prop::collection::vec(0.0..1.0f64, c),
                0..c,
            ),
            n,
        )
        .prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (s, m, y))| StreamScores::new(format!("v{i}"), Some(y), s, m).unwrap())
                .collect()
        })
    })
}

fn on_simplex(z: &[f64]) -> bool {
    z.iter().all(|&v| v >= 0.0) && (z.iter().sum::<f64>() - 1.0).abs() < 1e-12
}

fn in_envelope(o: &[f64], segments: &[Vec<f64>], tol: f64) -> bool {
    o.iter().enumerate().all(|(d, &v)| {
        let lo = segments.iter().map(|s| s[d]).fold(f64::INFINITY, f64::min);
        let hi = segments.iter().map(|s| s[d]).fold(f64::NEG_INFINITY, f64::max);
        v >= lo - tol && v <= hi + tol
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_distribution_and_shift_invariant(v in vec_in(1..20, 50.0), shift in -100.0..100.0f64) {
        let p = softmax(&v).unwrap();
        prop_assert!(on_simplex(&p));
        let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
        for (a, b) in p.iter().zip(softmax(&shifted).unwrap()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_matches_nested_loops(
        (h, w, ci, co) in (1usize..=8, 1usize..=8, 1usize..=4, 1usize..=4),
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let (x, k, b) = (draw(h * w * ci), draw(9 * ci * co), draw(co));
        let out = conv2d_3x3(
            &Tensor::new(vec![h, w, ci], x.clone()).unwrap(),
            &Tensor::new(vec![3, 3, ci, co], k.clone()).unwrap(),
            &Tensor::new(vec![co], b.clone()).unwrap(),
        )
        .unwrap();
        prop_assert_eq!(out.shape(), &[h, w, co][..]);
        for (a, e) in out.data().iter().zip(conv_oracle(&x, h, w, ci, &k, &b)) {
            prop_assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_attention_sums_to_cell_count(map in vec_in(1..40, 30.0), shift in -50.0..50.0f64) {
        let a = normalize_attention(&map, 0).unwrap();
        prop_assert!(a.values.iter().all(|&v| v >= 0.0));
        prop_assert!((a.values.iter().sum::<f64>() - map.len() as f64).abs() < 1e-9);
        let shifted: Vec<f64> = map.iter().map(|x| x + shift).collect();
        let b = normalize_attention(&shifted, 0).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn spatial_argmax_agrees_with_cam_scores(
        (h, w, k, c) in (1usize..5, 1usize..5, 1usize..5, 2usize..5),
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid: Vec<f64> = (0..h * w * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let weights: Vec<f64> = (0..k * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grid = ActivationGrid::new(h, w, k, grid).unwrap();
        let head = head_with(weights, k, c);
        let logits = spatial_forward(&grid, &head).unwrap();
        let s: Vec<f64> = (0..c).map(|j| cam_map(&grid, &head, j).unwrap().1).collect();
        // logits are s_c divided by the cell count
        for (l, sc) in logits.iter().zip(&s) {
            prop_assert!((l * grid.cells() as f64 - sc).abs() < 1e-9);
        }
        prop_assert_eq!(argmax(&logits), argmax(&s));
    }

    #[test]
    fn uniform_pooling_is_average_pooling((h, w, k) in (1usize..6, 1usize..6, 1usize..6), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..h * w * k).map(|_| rng.random_range(-5.0..5.0)).collect();
        let grid = ActivationGrid::new(h, w, k, values).unwrap();
        let pooled = weighted_pool(&grid, &AttentionMap::uniform(h * w)).unwrap();
        for (ch, p) in pooled.iter().enumerate() {
            let avg = (0..h * w).map(|i| grid.cell(i)[ch]).sum::<f64>() / (h * w) as f64;
            prop_assert!((p - avg).abs() < 1e-12);
        }
    }

    #[test]
    fn affinity_is_symmetric_bounded_and_equivariant(states in matrix(1..=8, 1..=6, 3.0), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let t = states.len();
        let c = affinity(&HiddenStates { states: states.clone() }).unwrap();
        let d = c.data();
        for i in 0..t {
            for j in 0..t {
                prop_assert_eq!(d[i * t + j], d[j * t + i]);
                prop_assert!(d[i * t + j].abs() <= 1.0);
            }
        }
        let gamma = temporal_scores(&c).unwrap();
        let mut perm: Vec<usize> = (0..t).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| states[i].clone()).collect();
        let gp = temporal_scores(&affinity(&HiddenStates { states: permuted }).unwrap()).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            prop_assert!((gp[i] - gamma[src]).abs() < 1e-12);
        }
    }

    #[test]
    fn attended_features_stay_in_envelope(frames in matrix(1..=10, 1..=6, 5.0), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma: Vec<f64> = (0..frames.len()).map(|_| rng.random_range(-10.0..10.0)).collect();
        let seq = FeatureSequence::new(frames.clone()).unwrap();
        let out = attend_features(&seq, &gamma).unwrap();
        prop_assert!(on_simplex(&out.weights));
        prop_assert!(in_envelope(&out.pooled, &frames, 1e-12));
    }

    #[test]
    fn collaborative_coefficients_stay_on_simplex(
        (vs, vm) in (1usize..=5, 1usize..=5, 1usize..=5).prop_flat_map(|(ns, nm, d)| {
            (matrix(ns..=ns, d..=d, 3.0), matrix(nm..=nm, d..=d, 3.0))
        }),
        seed in any::<u64>(),
        rounds in 1usize..6,
    ) {
        let d = vs[0].len();
        let params = CollabParams::init(&mut ChaCha8Rng::seed_from_u64(seed), d, 4);
        let s = StreamFeatures::new(vs.clone(), StreamTag::Static).unwrap();
        let m = StreamFeatures::new(vm.clone(), StreamTag::Motion).unwrap();
        // every intermediate round is the final round of a shorter run
        for r in 1..=rounds {
            let st = collaborative_optimize(&s, &m, &params, r).unwrap();
            prop_assert!(on_simplex(&st.z_static) && on_simplex(&st.z_motion));
            prop_assert!(in_envelope(&st.o_static, &vs, 1e-9));
            prop_assert!(in_envelope(&st.o_motion, &vm, 1e-9));
        }
    }

    #[test]
    fn zero_guidance_converges_in_one_round(
        (vs, vm) in (1usize..=5, 1usize..=5, 1usize..=5).prop_flat_map(|(ns, nm, d)| {
            (matrix(ns..=ns, d..=d, 3.0), matrix(nm..=nm, d..=d, 3.0))
        }),
    ) {
        let params = CollabParams::zeros(vs[0].len(), 3);
        let s = StreamFeatures::new(vs, StreamTag::Static).unwrap();
        let m = StreamFeatures::new(vm, StreamTag::Motion).unwrap();
        let st = collaborative_optimize(&s, &m, &params, 10).unwrap();
        prop_assert_eq!(st.rounds, 1);
    }

    #[test]
    fn scaling_targets_scales_merged_feature_when_projection_is_zero(
        v in matrix(1..=6, 1..=4, 3.0),
        seed in any::<u64>(),
        scale in 0.1..10.0f64,
    ) {
        let d = v[0].len();
        let mut params = GuideParams::init(&mut ChaCha8Rng::seed_from_u64(seed), d, d, 3);
        params.proj = Tensor::zeros(params.proj.shape());
        let guide = v[0].clone();
        let (z, o) = guide_step(&StreamFeatures::new(v.clone(), StreamTag::Motion).unwrap(), &guide, &params).unwrap();
        let scaled: Vec<Vec<f64>> = v.iter().map(|r| r.iter().map(|x| x * scale).collect()).collect();
        let (z2, o2) = guide_step(&StreamFeatures::new(scaled, StreamTag::Motion).unwrap(), &guide, &params).unwrap();
        prop_assert_eq!(argmax(&z), argmax(&z2));
        for (a, b) in o.iter().zip(&o2) {
            prop_assert!((a * scale - b).abs() < 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn learned_weights_lie_on_floored_simplex(
        scores in scores_strategy(),
        lambda in 0.0..1.0f64,
        epsilon in 0.0..0.49f64,
        scale in 0.01..100.0f64,
    ) {
        let w = learn_weights(&scores, lambda, epsilon).unwrap();
        for [a, b] in &w.weights {
            prop_assert!((a + b - 1.0).abs() < 1e-12);
            prop_assert!(*a >= epsilon - 1e-15 && *b >= epsilon - 1e-15);
        }
        let rescaled: Vec<StreamScores> = scores
            .iter()
            .map(|s| {
                let row = |r: &Vec<f64>| r.iter().map(|x| x * scale).collect();
                StreamScores::new(s.video_id.clone(), s.label, row(&s.rows[0]), row(&s.rows[1])).unwrap()
            })
            .collect();
        prop_assert_eq!(learn_weights(&rescaled, lambda, epsilon).unwrap(), w);
    }

    #[test]
    fn uniform_weights_reduce_to_late_fusion(scores in scores_strategy()) {
        let w = FusionWeights::uniform(scores[0].classes());
        for s in &scores {
            prop_assert_eq!(predict(&w, s).unwrap(), late_fusion(s).unwrap());
        }
    }
}

#[test]
fn attention_off_is_plain_pooling() {
    let data = generate_synthetic(&SyntheticConfig {
        num_classes: 3,
        train_per_class: 2,
        test_per_class: 0,
        ..SyntheticConfig::default()
    })
    .unwrap();
    for stream in [StreamTag::Static, StreamTag::Motion] {
        let model = StreamModel::init(stream, AttentionConfig::NONE, 16, 3, &TrainConfig::default());
        let out = model.forward(&data.train).unwrap();
        for (video, o) in data.train.iter().zip(&out) {
            let frames = video.frames(stream);
            let cells = frames[0].cells();
            let mut expect = vec![0.0; frames[0].channels()];
            for grid in frames {
                for i in 0..cells {
                    for (e, v) in expect.iter_mut().zip(grid.cell(i)) {
                        *e += v / (cells * frames.len()) as f64;
                    }
                }
            }
            for (a, b) in o.pooled.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}
