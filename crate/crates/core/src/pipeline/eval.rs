use serde::{Deserialize, Serialize};

use super::collab_stage::TrainedModels;
use crate::data::VideoSample;
use crate::error::{shape_err, Error, Result};
use crate::fusion::{fused_scores, predict, FusionWeights, StreamScores};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Row `i`, column `j`: fraction of class-`i` videos predicted as `j`.
    /// Classes absent from the test set get an all-zero row.
    pub confusion: Vec<Vec<f64>>,
    pub map_score: f64,
    pub average_precision: Vec<Option<f64>>,
    pub samples: usize,
}

/// Average precision of a ranking: the mean, over relevant items, of the
/// precision at each relevant item's rank. `None` without relevant items.
pub fn average_precision(ranked_relevance: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &rel) in ranked_relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Accuracy and confusion under fusion `predict`, and MAP over the fused
/// per-category scores (ranked descending, ties by video id).
pub fn evaluate_scores(scores: &[StreamScores], weights: &FusionWeights) -> Result<EvalReport> {
    if scores.is_empty() {
        return Err(Error::NoTestData);
    }
    let c = weights.classes();
    let mut counts = vec![vec![0usize; c]; c];
    let mut fused = Vec::with_capacity(scores.len());
    let mut correct = 0;
    for s in scores {
        let label = s
            .label
            .ok_or_else(|| shape_err(format!("test video {} has no label", s.video_id)))?;
        if label >= c {
            return Err(Error::BadLabel { label, classes: c });
        }
        let p = predict(weights, s)?;
        counts[label][p] += 1;
        correct += usize::from(p == label);
        fused.push(fused_scores(weights, s)?);
    }
    let confusion = counts
        .iter()
        .map(|row| {
            let n: usize = row.iter().sum();
            row.iter()
                .map(|&k| if n == 0 { 0.0 } else { k as f64 / n as f64 })
                .collect()
        })
        .collect();
    let average_precision: Vec<Option<f64>> = (0..c)
        .map(|j| {
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&a, &b| {
                fused[b][j]
                    .total_cmp(&fused[a][j])
                    .then_with(|| scores[a].video_id.cmp(&scores[b].video_id))
            });
            let rel: Vec<bool> = order.iter().map(|&i| scores[i].label == Some(j)).collect();
            average_precision(&rel)
        })
        .collect();
    let present: Vec<f64> = average_precision.iter().flatten().copied().collect();
    Ok(EvalReport {
        accuracy: correct as f64 / scores.len() as f64,
        confusion,
        map_score: present.iter().sum::<f64>() / present.len() as f64,
        average_precision,
        samples: scores.len(),
    })
}

pub fn evaluate(test: &[VideoSample], models: &TrainedModels, weights: &FusionWeights) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::NoTestData);
    }
    evaluate_scores(&models.scores(test)?, weights)
}
