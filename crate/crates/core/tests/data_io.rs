use twostream_core::data::{
    generate_synthetic, load_dataset, read_fvs, write_dataset, write_fvs, Manifest, SyntheticConfig, VideoSample,
};
use twostream_core::spatial::StreamTag;

/// Mean static activation over planted cells of planted frames.
fn planted_average(v: &VideoSample) -> Vec<f64> {
    let k = v.grid_dims().2;
    let mut avg = vec![0.0; k];
    let n = (v.planted_frames.len() * v.planted_cells.len()) as f64;
    for &t in &v.planted_frames {
        for &c in &v.planted_cells {
            for (a, x) in avg.iter_mut().zip(v.static_frames[t].cell(c)) {
                *a += x / n;
            }
        }
    }
    avg
}

#[test]
fn nearest_centroid_separates_classes_at_snr_4() {
    let cfg = SyntheticConfig::default();
    assert_eq!(cfg.snr(), 4.0);
    let data = generate_synthetic(&cfg).unwrap();
    let c = data.num_classes();
    let k = cfg.channels;
    let mut centroids = vec![vec![0.0; k]; c];
    let mut counts = vec![0.0; c];
    for v in &data.train {
        for (a, x) in centroids[v.label].iter_mut().zip(planted_average(v)) {
            *a += x;
        }
        counts[v.label] += 1.0;
    }
    for (row, n) in centroids.iter_mut().zip(&counts) {
        row.iter_mut().for_each(|x| *x /= n);
    }
    let correct = data
        .test
        .iter()
        .filter(|v| {
            let f = planted_average(v);
            let dist = |m: &Vec<f64>| m.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..c)
                .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                .unwrap();
            best == v.label
        })
        .count();
    let acc = correct as f64 / data.test.len() as f64;
    assert!(acc >= 0.95, "nearest-centroid accuracy {acc}");
}

/// Noise is drawn in the same order regardless of sigma, so the noiseless
/// twin of a dataset isolates the planted signal exactly.
#[test]
fn planted_energy_matches_configured_ratio() {
    let noisy_cfg = SyntheticConfig {
        num_classes: 5,
        train_per_class: 200,
        test_per_class: 0,
        signal_amplitude: 3.0,
        noise_sigma: 1.5,
        seed: 11,
        ..SyntheticConfig::default()
    };
    let clean_cfg = SyntheticConfig {
        noise_sigma: 0.0,
        ..noisy_cfg.clone()
    };
    let noisy = generate_synthetic(&noisy_cfg).unwrap();
    let clean = generate_synthetic(&clean_cfg).unwrap();
    assert_eq!(noisy.train.len(), 1000);
    let expected = noisy_cfg.snr().powi(2);
    for stream in [StreamTag::Static, StreamTag::Motion] {
        let (mut signal, mut noise) = (0.0, 0.0);
        for (n, s) in noisy.train.iter().zip(&clean.train) {
            assert_eq!(n.planted_cells, s.planted_cells);
            for &t in &n.planted_frames {
                for &c in &n.planted_cells {
                    for (a, b) in n.frames(stream)[t].cell(c).iter().zip(s.frames(stream)[t].cell(c)) {
                        signal += b * b;
                        noise += (a - b).powi(2);
                    }
                }
            }
        }
        let ratio = signal / noise;
        assert!(
            (ratio / expected - 1.0).abs() <= 0.1,
            "{stream:?}: energy ratio {ratio}, expected {expected}"
        );
    }
}

#[test]
fn dataset_survives_disk_round_trip() {
    let data = generate_synthetic(&SyntheticConfig {
        num_classes: 3,
        train_per_class: 2,
        val_per_class: 1,
        test_per_class: 1,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = write_dataset(dir.path(), &data).unwrap();
    let manifest = Manifest::read(&manifest_path).unwrap();
    assert_eq!(manifest.train.len(), 6);
    assert_eq!(manifest.val.len(), 3);
    let back = load_dataset(&manifest_path).unwrap();
    for (a, b) in [
        (&data.train, &back.train),
        (&data.val, &back.val),
        (&data.test, &back.test),
    ] {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!((&x.id, x.label), (&y.id, y.label));
            assert_eq!(x.planted_frames, y.planted_frames);
            let flat = |v: &VideoSample| -> Vec<f64> {
                v.static_frames
                    .iter()
                    .chain(&v.motion_frames)
                    .flat_map(|g| g.values().to_vec())
                    .collect()
            };
            for (p, q) in flat(x).iter().zip(flat(y)) {
                assert!((p - q).abs() <= p.abs() * f32::EPSILON as f64);
            }
        }
    }
    // rewriting the loaded set reproduces the files byte for byte
    let again = tempfile::tempdir().unwrap();
    write_dataset(again.path(), &back).unwrap();
    for e in &manifest.train {
        let name = std::path::Path::new(&e.path).file_name().unwrap();
        let a = std::fs::read(dir.path().join(name)).unwrap();
        let b = std::fs::read(again.path().join(name)).unwrap();
        assert_eq!(a, b, "{}", e.id);
    }
}

#[test]
fn fvs_file_round_trip_keeps_stem_as_id() {
    let data = generate_synthetic(&SyntheticConfig {
        num_classes: 2,
        train_per_class: 1,
        test_per_class: 0,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clip-7.fvs");
    write_fvs(&path, &data.train[1]).unwrap();
    let back = read_fvs(&path).unwrap();
    assert_eq!(back.id, "clip-7");
    assert_eq!(back.label, 1);
    assert_eq!(read_fvs(&dir.path().join("missing.fvs")).unwrap_err().category(), "io");
}

#[test]
fn same_config_same_bytes() {
    let cfg = SyntheticConfig {
        num_classes: 2,
        train_per_class: 3,
        test_per_class: 1,
        ..SyntheticConfig::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_dataset(a.path(), &generate_synthetic(&cfg).unwrap()).unwrap();
    write_dataset(b.path(), &generate_synthetic(&cfg).unwrap()).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 9);
    for n in names {
        assert_eq!(
            std::fs::read(a.path().join(&n)).unwrap(),
            std::fs::read(b.path().join(&n)).unwrap()
        );
    }
}
