//! Staged training (per-stream attention networks, then the collaborative
//! stage, then fusion weights), evaluation metrics, the ablation suite and
//! model checkpoints.

mod ablation;
mod checkpoint;
mod collab_stage;
mod eval;
mod stream;

pub use ablation::{ablation_suite, run_ablation, AblationOutcome, AblationRow, AblationTable};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use collab_stage::{train_collaborative, CollabModel, TrainedModels};
pub use eval::{average_precision, evaluate, evaluate_scores, EvalReport};
pub use stream::{
    attention_localization, train_stream, AttentionConfig, Localization, StreamModel, StreamOutput, TwoStream,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::fusion::DEFAULT_LAMBDA;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub lr_drop_factor: f64,
    /// Iterations without held-out improvement before the learning rate drops.
    pub patience: usize,
    pub max_lr_drops: usize,
    /// Held-out evaluation period in iterations.
    pub eval_every: usize,
    pub seed: u64,
    /// Collaborative rounds unrolled during training and inference.
    pub unroll_rounds: usize,
    pub lambda: f64,
    pub epsilon: f64,
    /// Train stream parameters jointly in the collaborative stage instead of
    /// freezing them.
    pub finetune_streams: bool,
    pub cam_channels: usize,
    pub lstm_hidden: usize,
    pub collab_hidden: usize,
    pub max_segments: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 0.0001,
            batch_size: 16,
            max_iterations: 1000,
            lr_drop_factor: 10.0,
            patience: 200,
            max_lr_drops: 2,
            eval_every: 50,
            seed: 1,
            unroll_rounds: 2,
            lambda: DEFAULT_LAMBDA,
            epsilon: 0.0,
            finetune_streams: false,
            cam_channels: 16,
            lstm_hidden: 32,
            collab_hidden: 16,
            max_segments: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::BadConfig(what.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be >= 0");
        }
        if !(self.lr_drop_factor >= 1.0 && self.lr_drop_factor.is_finite()) {
            return bad("lr_drop_factor must be >= 1");
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.unroll_rounds == 0 {
            return bad("batch_size, eval_every and unroll_rounds must be positive");
        }
        if self.cam_channels == 0 || self.lstm_hidden == 0 || self.collab_hidden == 0 || self.max_segments == 0 {
            return bad("model sizes must be positive");
        }
        if !(self.lambda >= 0.0) || !(0.0..0.5).contains(&self.epsilon) {
            return bad("lambda must be >= 0 and epsilon in [0, 0.5)");
        }
        Ok(())
    }
}

/// `v <- momentum v - lr (g + weight_decay p)`, then `p <- p + v`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(shape_err(format!(
            "sgd step over {} params, {} grads, {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = cfg.momentum * *v - lr * (g + cfg.weight_decay * *p);
        *p += *v;
    }
    Ok(())
}

/// Seeded mini-batch order: each epoch is a fresh permutation, consumed in
/// chunks of `batch_size` (the last chunk of an epoch may be shorter).
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        BatchSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            pos: n,
            batch_size: batch_size.max(1),
        }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.order.is_empty() {
            return Vec::new();
        }
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }
}

/// Loss curve and schedule events of one training run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub losses: Vec<f64>,
    /// Iterations at which the learning rate was divided.
    pub lr_drops: Vec<usize>,
    pub final_learning_rate: f64,
}

/// Held-out quality: higher accuracy wins, lower loss breaks ties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct HeldOut {
    pub accuracy: f64,
    pub loss: f64,
}

impl HeldOut {
    fn beats(&self, other: &HeldOut) -> bool {
        self.accuracy > other.accuracy || (self.accuracy == other.accuracy && self.loss < other.loss)
    }
}

/// Mini-batch SGD with the plateau schedule. `step` returns the batch loss
/// and one gradient per tensor of `params` (`None` for frozen tensors);
/// `held_out` scores the current model.
pub(crate) fn fit<M>(
    model: &mut M,
    n: usize,
    cfg: &TrainConfig,
    seed: u64,
    params: fn(&mut M) -> Vec<&mut Tensor>,
    mut step: impl FnMut(&M, &[usize]) -> Result<(f64, Vec<Option<Vec<f64>>>)>,
    mut held_out: impl FnMut(&M) -> Result<HeldOut>,
) -> Result<TrainLog> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::NoTrainingData);
    }
    let mut velocity: Vec<Vec<f64>> = params(model).iter().map(|t| vec![0.0; t.len()]).collect();
    let mut sampler = BatchSampler::new(n, cfg.batch_size, seed);
    let mut lr = cfg.learning_rate;
    let mut log = TrainLog::default();
    let mut best: Option<HeldOut> = None;
    let mut since_best = 0;
    for it in 0..cfg.max_iterations {
        let batch = sampler.next_batch();
        let (loss, grads) = step(model, &batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteFunction(loss));
        }
        log.losses.push(loss);
        for ((t, g), v) in params(model).into_iter().zip(&grads).zip(velocity.iter_mut()) {
            if let Some(g) = g {
                sgd_step(t.data_mut(), g, v, lr, cfg)?;
            }
        }
        if (it + 1) % cfg.eval_every == 0 && log.lr_drops.len() < cfg.max_lr_drops {
            let score = held_out(model)?;
            if best.is_none_or(|b| score.beats(&b)) {
                best = Some(score);
                since_best = 0;
            } else {
                since_best += cfg.eval_every;
                if since_best >= cfg.patience {
                    lr /= cfg.lr_drop_factor;
                    log.lr_drops.push(it + 1);
                    since_best = 0;
                }
            }
        }
    }
    log.final_learning_rate = lr;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_examples() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0; 2];
        sgd_step(&mut p, &[0.0, 0.0], &mut v, 0.1, &cfg).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);

        let vanilla = TrainConfig {
            momentum: 0.0,
            ..cfg.clone()
        };
        sgd_step(&mut p, &[0.5, 1.0], &mut v, 0.1, &vanilla).unwrap();
        assert_eq!(p, vec![1.0 - 0.1 * 0.5, -2.0 - 0.1 * 1.0]);

        // two momentum steps on a scalar, unrolled by hand
        let full = TrainConfig::default();
        let (lr, mu, wd) = (0.01, 0.9, 1e-4);
        let (p0, g1, g2) = (0.7, 0.3, -0.2);
        let v1 = -lr * (g1 + wd * p0);
        let p1 = p0 + v1;
        let v2 = mu * v1 - lr * (g2 + wd * p1);
        let p2 = p1 + v2;
        let mut p = [p0];
        let mut v = [0.0];
        sgd_step(&mut p, &[g1], &mut v, lr, &full).unwrap();
        sgd_step(&mut p, &[g2], &mut v, lr, &full).unwrap();
        assert!((p[0] - p2).abs() <= 1e-12 && (v[0] - v2).abs() <= 1e-12);

        let err = sgd_step(&mut [0.0], &[0.0, 1.0], &mut [0.0], lr, &full).unwrap_err();
        assert_eq!(err.category(), "shape-mismatch");
    }

    #[test]
    fn sampler_covers_each_epoch() {
        let mut s = BatchSampler::new(10, 4, 3);
        let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next_batch()).collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        let a: Vec<Vec<usize>> = (0..6).map(|_| BatchSampler::new(10, 4, 3).next_batch()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                momentum: 1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                epsilon: 0.5,
                ..TrainConfig::default()
            },
        ] {
            assert_eq!(bad.validate().unwrap_err().category(), "bad-config");
        }
        let parsed: TrainConfig = serde_json::from_str(r#"{"seed": 9}"#).unwrap();
        assert_eq!(parsed.seed, 9);
        assert_eq!(parsed.learning_rate, 0.001);
    }
}
