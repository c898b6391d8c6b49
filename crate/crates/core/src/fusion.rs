//! Two-stream score fusion: per-category adaptive weights learned from
//! training scores, plus the late (score averaging) and early (feature
//! concatenation) baselines.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::pipeline::{sgd_step, TrainConfig};
use crate::spatial::{argmax, uniform_tensor};
use crate::temporal::linear_softmax_graph;
use crate::tensor::{Graph, Tensor};

/// Balance between positive and negative samples, chosen by cross-validation
/// in the original experiments.
pub const DEFAULT_LAMBDA: f64 = 5e-3;

/// Stacked softmax scores of one video: row 0 static, row 1 motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamScores {
    pub video_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    pub rows: [Vec<f64>; 2],
}

impl StreamScores {
    pub fn new(
        video_id: impl Into<String>,
        label: Option<usize>,
        static_row: Vec<f64>,
        motion_row: Vec<f64>,
    ) -> Result<Self> {
        if static_row.is_empty() || static_row.len() != motion_row.len() {
            return Err(shape_err(format!(
                "score rows of length {} and {}",
                static_row.len(),
                motion_row.len()
            )));
        }
        Ok(StreamScores {
            video_id: video_id.into(),
            label,
            rows: [static_row, motion_row],
        })
    }

    pub fn classes(&self) -> usize {
        self.rows[0].len()
    }

    /// Column `j`: both streams' scores for category `j`.
    pub fn column(&self, j: usize) -> [f64; 2] {
        [self.rows[0][j], self.rows[1][j]]
    }
}

/// Per-category weights `(w_static, w_motion)` on the `epsilon`-floored simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    pub weights: Vec<[f64; 2]>,
    pub lambda: f64,
    pub epsilon: f64,
}

impl FusionWeights {
    /// Equal weights for every category, which reduces to late fusion.
    pub fn uniform(classes: usize) -> Self {
        FusionWeights {
            weights: vec![[0.5, 0.5]; classes],
            lambda: 0.0,
            epsilon: 0.0,
        }
    }

    pub fn classes(&self) -> usize {
        self.weights.len()
    }

    /// `{ "<category>": [w1, w2], ..., "lambda": .., "epsilon": .. }`
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (j, w) in self.weights.iter().enumerate() {
            map.insert(j.to_string(), serde_json::json!([w[0], w[1]]));
        }
        map.insert("lambda".into(), serde_json::json!(self.lambda));
        map.insert("epsilon".into(), serde_json::json!(self.epsilon));
        serde_json::Value::Object(map)
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::BadConfig("fusion weights must be a JSON object".into()))?;
        let number = |key: &str| {
            obj.get(key)
                .and_then(serde_json::Value::as_f64)
                .ok_or_else(|| Error::BadConfig(format!("missing numeric {key:?}")))
        };
        let lambda = number("lambda")?;
        let epsilon = number("epsilon")?;
        let mut rows = BTreeMap::new();
        for (k, v) in obj {
            if k == "lambda" || k == "epsilon" {
                continue;
            }
            let Ok(j) = k.parse::<usize>() else {
                continue;
            };
            let pair: [f64; 2] = serde_json::from_value(v.clone())?;
            rows.insert(j, pair);
        }
        if rows.keys().copied().ne(0..rows.len()) {
            return Err(Error::BadConfig("category ids must be 0..c without gaps".into()));
        }
        Ok(FusionWeights {
            weights: rows.into_values().collect(),
            lambda,
            epsilon,
        })
    }
}

fn classes_of(scores: &[StreamScores]) -> Result<usize> {
    let c = scores.first().ok_or(Error::NoTrainingData)?.classes();
    if scores.iter().any(|s| s.classes() != c) {
        return Err(shape_err("score matrices with different class counts"));
    }
    Ok(c)
}

/// `q_j = sum_{label = j} S_i J_j - lambda * sum_{label != j} S_i J_j`.
pub fn coefficient_vector(scores: &[StreamScores], j: usize, lambda: f64) -> Result<[f64; 2]> {
    let c = classes_of(scores)?;
    if j >= c {
        return Err(Error::BadClass { class: j, classes: c });
    }
    let mut pos = [0.0; 2];
    let mut neg = [0.0; 2];
    for s in scores {
        let label = s
            .label
            .ok_or_else(|| Error::BadConfig(format!("training score {} has no label", s.video_id)))?;
        if label >= c {
            return Err(Error::BadLabel { label, classes: c });
        }
        let col = s.column(j);
        let acc = if label == j { &mut pos } else { &mut neg };
        acc[0] += col[0];
        acc[1] += col[1];
    }
    Ok([pos[0] - lambda * neg[0], pos[1] - lambda * neg[1]])
}

/// Maximizes `W_j . q_j` over `{w1 + w2 = 1, w_i >= epsilon}` for each
/// category. The objective is linear on a segment, so the optimum sits at
/// the endpoint favoring the larger coefficient; exact ties split evenly.
pub fn learn_weights(scores: &[StreamScores], lambda: f64, epsilon: f64) -> Result<FusionWeights> {
    if !(lambda >= 0.0) {
        return Err(Error::BadConfig(format!("lambda must be >= 0, got {lambda}")));
    }
    if !(0.0..0.5).contains(&epsilon) {
        return Err(Error::BadConfig(format!("epsilon must be in [0, 0.5), got {epsilon}")));
    }
    let c = classes_of(scores)?;
    let weights = (0..c)
        .map(|j| {
            let q = coefficient_vector(scores, j, lambda)?;
            Ok(if q[0] > q[1] {
                [1.0 - epsilon, epsilon]
            } else if q[0] < q[1] {
                [epsilon, 1.0 - epsilon]
            } else {
                [0.5, 0.5]
            })
        })
        .collect::<Result<_>>()?;
    Ok(FusionWeights {
        weights,
        lambda,
        epsilon,
    })
}

/// Category-specific fused scores `W_i . S J_i`.
pub fn fused_scores(weights: &FusionWeights, scores: &StreamScores) -> Result<Vec<f64>> {
    if weights.classes() != scores.classes() {
        return Err(shape_err(format!(
            "{} fusion weights for {} classes",
            weights.classes(),
            scores.classes()
        )));
    }
    Ok(weights
        .weights
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let col = scores.column(i);
            w[0] * col[0] + w[1] * col[1]
        })
        .collect())
}

/// Category with the highest fused score; ties go to the smaller index.
pub fn predict(weights: &FusionWeights, scores: &StreamScores) -> Result<usize> {
    Ok(argmax(&fused_scores(weights, scores)?))
}

/// Argmax of the mean of the two score rows.
pub fn late_fusion(scores: &StreamScores) -> Result<usize> {
    if scores.rows[0].len() != scores.rows[1].len() || scores.rows[0].is_empty() {
        return Err(shape_err("score rows differ in length"));
    }
    let mean: Vec<f64> = scores.rows[0]
        .iter()
        .zip(&scores.rows[1])
        .map(|(a, b)| 0.5 * a + 0.5 * b)
        .collect();
    Ok(argmax(&mean))
}

/// Linear softmax classifier over the concatenated static and motion features.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyFusion {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl EarlyFusion {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        EarlyFusion {
            weights: Tensor::zeros(&[dim, classes]),
            bias: Tensor::zeros(&[classes]),
        }
    }

    /// Mini-batch SGD on cross-entropy, deterministic in `cfg.seed`.
    pub fn train(features: &[Vec<f64>], labels: &[usize], classes: usize, cfg: &TrainConfig) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::NoTrainingData);
        }
        if features.len() != labels.len() {
            return Err(shape_err("one label per feature vector"));
        }
        let dim = features[0].len();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xEA51);
        let mut model = EarlyFusion {
            weights: uniform_tensor(&mut rng, &[dim, classes], 0.08),
            bias: Tensor::zeros(&[classes]),
        };
        let mut velocity = vec![vec![0.0; dim * classes], vec![0.0; classes]];
        let mut batches = crate::pipeline::BatchSampler::new(features.len(), cfg.batch_size, cfg.seed ^ 0xEA52);
        for _ in 0..cfg.max_iterations {
            let idx = batches.next_batch();
            let mut g = Graph::new();
            let w = g.param(&model.weights);
            let b = g.param(&model.bias);
            let data: Vec<f64> = idx.iter().flat_map(|&i| features[i].iter().copied()).collect();
            let x = g.constant_from(&[idx.len(), dim], data)?;
            let p = linear_softmax_graph(&mut g, x, w, b)?;
            let batch_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let loss = g.cross_entropy(p, &batch_labels)?;
            g.backward(loss)?;
            let grads = [g.grad(w).expect("param").to_vec(), g.grad(b).expect("param").to_vec()];
            let mut params = [&mut model.weights, &mut model.bias];
            for ((t, grad), vel) in params.iter_mut().zip(&grads).zip(velocity.iter_mut()) {
                sgd_step(t.data_mut(), grad, vel, cfg.learning_rate, cfg)?;
            }
        }
        Ok(model)
    }

    pub fn probabilities(&self, feature: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let w = g.constant(self.weights.clone());
        let b = g.constant(self.bias.clone());
        let x = g.constant_from(&[1, feature.len()], feature.to_vec())?;
        let p = linear_softmax_graph(&mut g, x, w, b)?;
        Ok(g.value(p).to_vec())
    }

    pub fn predict(&self, feature: &[f64]) -> Result<usize> {
        Ok(argmax(&self.probabilities(feature)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn labeled(label: usize, s: Vec<f64>, m: Vec<f64>) -> StreamScores {
        StreamScores::new(format!("v{label}"), Some(label), s, m).unwrap()
    }

    #[test]
    fn coefficient_examples() {
        let one = [labeled(0, vec![0.9, 0.1], vec![0.6, 0.4])];
        assert_eq!(coefficient_vector(&one, 0, 0.0).unwrap(), [0.9, 0.6]);

        let neg = [labeled(1, vec![0.2, 0.8], vec![0.1, 0.9])];
        assert_eq!(coefficient_vector(&neg, 0, 1.0).unwrap(), [-0.2, -0.1]);

        let mixed = [
            labeled(0, vec![0.7, 0.2, 0.1], vec![0.5, 0.3, 0.2]),
            labeled(1, vec![0.1, 0.6, 0.3], vec![0.2, 0.7, 0.1]),
            labeled(0, vec![0.4, 0.4, 0.2], vec![0.6, 0.1, 0.3]),
            labeled(2, vec![0.3, 0.3, 0.4], vec![0.25, 0.25, 0.5]),
        ];
        let lambda = 0.5;
        for j in 0..3 {
            let mut want = [0.0; 2];
            for s in &mixed {
                let sign = if s.label == Some(j) { 1.0 } else { -lambda };
                want[0] += sign * s.rows[0][j];
                want[1] += sign * s.rows[1][j];
            }
            let got = coefficient_vector(&mixed, j, lambda).unwrap();
            assert!((got[0] - want[0]).abs() < 1e-15 && (got[1] - want[1]).abs() < 1e-15);
        }
        assert!(matches!(coefficient_vector(&[], 0, 0.0), Err(Error::NoTrainingData)));
    }

    #[test]
    fn learn_examples() {
        let tie = [labeled(0, vec![1.0], vec![1.0])];
        assert_eq!(learn_weights(&tie, 0.0, 0.0).unwrap().weights, vec![[0.5, 0.5]]);
        let favor = [labeled(0, vec![2.0], vec![1.0])];
        assert_eq!(learn_weights(&favor, 0.0, 0.0).unwrap().weights, vec![[1.0, 0.0]]);
        let floored = learn_weights(&favor, 0.0, 0.1).unwrap();
        assert!((floored.weights[0][0] - 0.9).abs() < 1e-15 && floored.weights[0][1] == 0.1);
        assert!(learn_weights(&favor, -1.0, 0.0).is_err());
        assert!(learn_weights(&favor, 0.0, 0.5).is_err());
        assert!(matches!(learn_weights(&[], 0.0, 0.0), Err(Error::NoTrainingData)));
    }

    #[test]
    fn closed_form_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let scores: Vec<StreamScores> = (0..6)
                .map(|i| {
                    let s: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
                    let m: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
                    labeled(i % 3, s, m)
                })
                .collect();
            let eps = 0.05;
            let w = learn_weights(&scores, 0.3, eps).unwrap();
            for j in 0..3 {
                let q = coefficient_vector(&scores, j, 0.3).unwrap();
                let best = (0..=1000)
                    .map(|s| s as f64 * 1e-3)
                    .filter(|w1| *w1 >= eps - 1e-12 && *w1 <= 1.0 - eps + 1e-12)
                    .map(|w1| w1 * q[0] + (1.0 - w1) * q[1])
                    .fold(f64::NEG_INFINITY, f64::max);
                let got = w.weights[j][0] * q[0] + w.weights[j][1] * q[1];
                assert!((got - best).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn predict_examples() {
        let s = StreamScores::new("t", None, vec![0.6, 0.4], vec![0.1, 0.9]).unwrap();
        assert_eq!(late_fusion(&s).unwrap(), 1);
        assert_eq!(predict(&FusionWeights::uniform(2), &s).unwrap(), 1);

        let single = StreamScores::new("t", None, vec![1.0], vec![1.0]).unwrap();
        assert_eq!(predict(&FusionWeights::uniform(1), &single).unwrap(), 0);

        let s3 = StreamScores::new("t", None, vec![0.5, 0.3, 0.2], vec![0.1, 0.3, 0.6]).unwrap();
        let w = FusionWeights {
            weights: vec![[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]],
            lambda: 0.0,
            epsilon: 0.0,
        };
        // fused: [0.5, 0.3, 0.6]
        assert_eq!(predict(&w, &s3).unwrap(), 2);
        assert!(predict(&FusionWeights::uniform(2), &s3).is_err());

        let same = StreamScores::new("t", None, vec![0.2, 0.5, 0.3], vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(late_fusion(&same).unwrap(), 1);
    }

    #[test]
    fn json_round_trip() {
        let w = FusionWeights {
            weights: (0..12)
                .map(|j| if j % 2 == 0 { [1.0, 0.0] } else { [0.25, 0.75] })
                .collect(),
            lambda: DEFAULT_LAMBDA,
            epsilon: 0.0,
        };
        let text = serde_json::to_string(&w.to_json()).unwrap();
        let back = FusionWeights::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, w);
        assert!(text.contains("\"lambda\":0.005"));
    }

    #[test]
    fn early_fusion_zero_weights_predict_class_zero() {
        let e = EarlyFusion::zeros(4, 3);
        let p = e.probabilities(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(e.predict(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 0);
    }

    #[test]
    fn early_fusion_learns_separable_data() {
        let features: Vec<Vec<f64>> = (0..30)
            .map(|i| {
                let c = (i % 3) as f64;
                vec![c, 1.0 - c, (i as f64 * 0.01), c * c]
            })
            .collect();
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            max_iterations: 400,
            batch_size: 10,
            ..TrainConfig::default()
        };
        let model = EarlyFusion::train(&features, &labels, 3, &cfg).unwrap();
        let correct = features
            .iter()
            .zip(&labels)
            .filter(|(f, &l)| model.predict(f).unwrap() == l)
            .count();
        assert_eq!(correct, 30);
    }
}
