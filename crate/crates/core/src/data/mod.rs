//! Synthetic two-stream videos with planted attention ground truth, the FVS
//! binary sample format and the JSON split manifest.

mod fvs;
mod manifest;

pub use fvs::{read_fvs, write_fvs, FVS_MAGIC, FVS_VERSION};
pub use manifest::{load_dataset, write_dataset, Manifest, ManifestEntry};

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{ActivationGrid, StreamTag};

/// Phase step of the rotating class pattern between consecutive planted
/// frames. At pi/3 the frame-to-frame difference has the same norm as the
/// pattern itself, so both streams carry equal signal energy.
const PATTERN_PHASE_STEP: f64 = PI / 3.0;

/// One labeled video: `T` static and `T` motion activation grids.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub id: String,
    pub label: usize,
    pub static_frames: Vec<ActivationGrid>,
    pub motion_frames: Vec<ActivationGrid>,
    pub planted_frames: Vec<usize>,
    pub planted_cells: Vec<usize>,
}

impl VideoSample {
    pub fn frames(&self, stream: StreamTag) -> &[ActivationGrid] {
        match stream {
            StreamTag::Static => &self.static_frames,
            StreamTag::Motion => &self.motion_frames,
        }
    }

    pub fn len(&self) -> usize {
        self.static_frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.static_frames.is_empty()
    }

    /// `(height, width, channels)` of the grids.
    pub fn grid_dims(&self) -> (usize, usize, usize) {
        let g = &self.static_frames[0];
        (g.height(), g.width(), g.channels())
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.static_frames.len();
        if t == 0 || self.motion_frames.len() != t {
            return Err(Error::BadConfig(format!(
                "video {}: {} static vs {} motion frames",
                self.id,
                t,
                self.motion_frames.len()
            )));
        }
        let dims = self.grid_dims();
        let same = |g: &ActivationGrid| (g.height(), g.width(), g.channels()) == dims;
        if !self.static_frames.iter().chain(&self.motion_frames).all(same) {
            return Err(Error::BadConfig(format!("video {}: grids differ in shape", self.id)));
        }
        if self.planted_frames.iter().any(|&f| f >= t) || self.planted_cells.iter().any(|&c| c >= dims.0 * dims.1) {
            return Err(Error::BadConfig(format!(
                "video {}: planted index out of range",
                self.id
            )));
        }
        Ok(())
    }
}

/// Train / validation / test splits.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub train: Vec<VideoSample>,
    pub val: Vec<VideoSample>,
    pub test: Vec<VideoSample>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .map(|v| v.label + 1)
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub frames: usize,
    pub grid_height: usize,
    pub grid_width: usize,
    pub channels: usize,
    /// Length of the planted temporal window.
    pub signal_frames: usize,
    pub block_height: usize,
    pub block_width: usize,
    /// RMS per-entry amplitude of the planted pattern.
    pub signal_amplitude: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_classes: 5,
            train_per_class: 40,
            val_per_class: 0,
            test_per_class: 20,
            frames: 8,
            grid_height: 4,
            grid_width: 4,
            channels: 16,
            signal_frames: 3,
            block_height: 2,
            block_width: 2,
            signal_amplitude: 4.0,
            noise_sigma: 1.0,
            seed: 1,
        }
    }
}

impl SyntheticConfig {
    /// Signal-to-noise amplitude ratio.
    pub fn snr(&self) -> f64 {
        self.signal_amplitude / self.noise_sigma
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_classes", self.num_classes),
            ("frames", self.frames),
            ("grid_height", self.grid_height),
            ("grid_width", self.grid_width),
            ("channels", self.channels),
            ("signal_frames", self.signal_frames),
            ("block_height", self.block_height),
            ("block_width", self.block_width),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::BadConfig(format!("{name} must be positive")));
        }
        if self.train_per_class + self.val_per_class + self.test_per_class == 0 {
            return Err(Error::BadConfig("no videos requested".into()));
        }
        if self.signal_frames > self.frames {
            return Err(Error::BadConfig("signal_frames exceeds frames".into()));
        }
        if self.block_height > self.grid_height || self.block_width > self.grid_width {
            return Err(Error::BadConfig("planted block larger than the grid".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::BadConfig("noise_sigma must be finite and >= 0".into()));
        }
        if !self.signal_amplitude.is_finite() {
            return Err(Error::BadConfig("signal_amplitude must be finite".into()));
        }
        Ok(())
    }
}

/// Per-class static pattern pair `(P, Q)`: `P` has random +-1 entries and
/// `Q = P * r` with `r` a balanced +-1 mask, so `P . Q = 0` for even `K`.
fn class_patterns(rng: &mut ChaCha8Rng, classes: usize, k: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    (0..classes)
        .map(|_| {
            let p: Vec<f64> = (0..k).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            let mut mask: Vec<f64> = (0..k).map(|i| if i < k / 2 { 1.0 } else { -1.0 }).collect();
            mask.shuffle(rng);
            let q = p.iter().zip(&mask).map(|(a, b)| a * b).collect();
            (p, q)
        })
        .collect()
}

/// Static pattern at planted step `tau`: `cos(tau theta) P + sin(tau theta) Q`.
fn static_pattern(p: &[f64], q: &[f64], tau: usize) -> Vec<f64> {
    let (s, c) = (tau as f64 * PATTERN_PHASE_STEP).sin_cos();
    p.iter().zip(q).map(|(a, b)| c * a + s * b).collect()
}

/// Generates every split. Labels cycle through the classes; all randomness
/// comes from one generator seeded with `cfg.seed`, so the output is a pure
/// function of the config.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let patterns = class_patterns(&mut rng, cfg.num_classes, cfg.channels);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::BadConfig(e.to_string()))?;
    let mut split = |name: &str, per_class: usize| -> Vec<VideoSample> {
        (0..per_class * cfg.num_classes)
            .map(|i| {
                make_video(
                    cfg,
                    &patterns,
                    &noise,
                    &mut rng,
                    format!("{name}-{i:05}"),
                    i % cfg.num_classes,
                )
            })
            .collect()
    };
    let train = split("train", cfg.train_per_class);
    let val = split("val", cfg.val_per_class);
    let test = split("test", cfg.test_per_class);
    Ok(Dataset { train, val, test })
}

fn make_video(
    cfg: &SyntheticConfig,
    patterns: &[(Vec<f64>, Vec<f64>)],
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
    id: String,
    label: usize,
) -> VideoSample {
    let (h, w, k) = (cfg.grid_height, cfg.grid_width, cfg.channels);
    let start = rng.random_range(0..=cfg.frames - cfg.signal_frames);
    let y0 = rng.random_range(0..=h - cfg.block_height);
    let x0 = rng.random_range(0..=w - cfg.block_width);
    let planted_frames: Vec<usize> = (start..start + cfg.signal_frames).collect();
    let planted_cells: Vec<usize> = (y0..y0 + cfg.block_height)
        .flat_map(|y| (x0..x0 + cfg.block_width).map(move |x| y * w + x))
        .collect();

    let (p, q) = &patterns[label];
    let noisy_grid = |rng: &mut ChaCha8Rng| {
        let values = (0..h * w * k).map(|_| noise.sample(rng)).collect();
        ActivationGrid::new(h, w, k, values).expect("dimensions validated")
    };
    let mut static_frames: Vec<ActivationGrid> = (0..cfg.frames).map(|_| noisy_grid(rng)).collect();
    let mut motion_frames: Vec<ActivationGrid> = (0..cfg.frames).map(|_| noisy_grid(rng)).collect();

    let amp = cfg.signal_amplitude;
    let mut previous = vec![0.0; k];
    for (tau, &t) in planted_frames.iter().enumerate() {
        let current = static_pattern(p, q, tau);
        let delta: Vec<f64> = current.iter().zip(&previous).map(|(a, b)| a - b).collect();
        for &cell in &planted_cells {
            let s = &mut static_frames[t].values_mut()[cell * k..(cell + 1) * k];
            for (v, pat) in s.iter_mut().zip(&current) {
                *v += amp * pat;
            }
            let m = &mut motion_frames[t].values_mut()[cell * k..(cell + 1) * k];
            for (v, d) in m.iter_mut().zip(&delta) {
                *v += amp * d;
            }
        }
        previous = current;
    }

    VideoSample {
        id,
        label,
        static_frames,
        motion_frames,
        planted_frames,
        planted_cells,
    }
}
