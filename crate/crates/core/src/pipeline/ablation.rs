use serde::Serialize;

use super::collab_stage::{train_collaborative, TrainedModels};
use super::eval::evaluate_scores;
use super::stream::{AttentionConfig, TwoStream};
use super::TrainConfig;
use crate::data::{Dataset, VideoSample};
use crate::error::{Error, Result};
use crate::fusion::{learn_weights, EarlyFusion, FusionWeights, StreamScores};
use crate::spatial::argmax;

/// One results row: single-stream accuracies where they apply, plus the
/// two-stream accuracy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub name: String,
    #[serde(rename = "static")]
    pub static_acc: Option<f64>,
    #[serde(rename = "motion")]
    pub motion_acc: Option<f64>,
    pub two_stream: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Every filled cell as `(row/column, accuracy)`.
    pub fn entries(&self) -> Vec<(String, f64)> {
        self.rows
            .iter()
            .flat_map(|r| {
                [
                    ("static", r.static_acc),
                    ("motion", r.motion_acc),
                    ("two-stream", r.two_stream),
                ]
                .into_iter()
                .filter_map(move |(col, v)| v.map(|v| (format!("{}/{col}", r.name), v)))
            })
            .collect()
    }

    /// Fixed-width text rendering, one row per line.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(6);
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let mut out = format!(
            "{:<width$}  {:>10}  {:>10}  {:>10}\n",
            "method", "static", "motion", "two-stream"
        );
        for r in &self.rows {
            out += &format!(
                "{:<width$}  {:>10}  {:>10}  {:>10}\n",
                r.name,
                cell(r.static_acc),
                cell(r.motion_acc),
                cell(r.two_stream)
            );
        }
        out
    }
}

/// The table plus the full model (both attention levels, collaborative
/// stage, adaptive weights) it was measured with.
#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub table: AblationTable,
    pub full: TrainedModels,
    pub weights: FusionWeights,
}

fn accuracy(rows: &[Vec<f64>], videos: &[VideoSample]) -> f64 {
    let correct = rows.iter().zip(videos).filter(|(r, v)| argmax(r) == v.label).count();
    correct as f64 / videos.len() as f64
}

fn stacked(s: &[Vec<f64>], m: &[Vec<f64>], videos: &[VideoSample]) -> Result<Vec<StreamScores>> {
    videos
        .iter()
        .zip(s.iter().zip(m))
        .map(|(v, (a, b))| StreamScores::new(v.id.clone(), Some(v.label), a.clone(), b.clone()))
        .collect()
}

fn pooled_pair(streams: &TwoStream, videos: &[VideoSample]) -> Result<Vec<Vec<f64>>> {
    let s = streams.static_model.forward(videos)?;
    let m = streams.motion_model.forward(videos)?;
    Ok(s.into_iter()
        .zip(m)
        .map(|(a, b)| [a.pooled, b.pooled].concat())
        .collect())
}

/// Trains every attention level for both streams, then the collaborative
/// stage, adaptive weights and early fusion on top of the full-attention
/// streams, and scores all of them on the test split.
pub fn run_ablation(data: &Dataset, cfg: &TrainConfig) -> Result<AblationOutcome> {
    let test = &data.test;
    if test.is_empty() {
        return Err(Error::NoTestData);
    }
    let classes = data.num_classes();
    let late = FusionWeights::uniform(classes);
    let mut rows = Vec::new();
    let mut full_streams = None;
    for attention in [
        AttentionConfig::NONE,
        AttentionConfig::SPATIAL,
        AttentionConfig::TEMPORAL,
        AttentionConfig::FULL,
    ] {
        let (streams, _) = TwoStream::train(data, attention, cfg)?;
        let s = streams.static_model.scores(test)?;
        let m = streams.motion_model.scores(test)?;
        let two = evaluate_scores(&stacked(&s, &m, test)?, &late)?.accuracy;
        rows.push(AblationRow {
            name: attention.label().to_string(),
            static_acc: Some(accuracy(&s, test)),
            motion_acc: Some(accuracy(&m, test)),
            two_stream: Some(two),
        });
        if attention == AttentionConfig::FULL {
            full_streams = Some(streams);
        }
    }
    let streams = full_streams.expect("full attention trained");
    let two_row = |name: &str, v: f64| AblationRow {
        name: name.to_string(),
        static_acc: None,
        motion_acc: None,
        two_stream: Some(v),
    };

    let train_features = pooled_pair(&streams, &data.train)?;
    let labels: Vec<usize> = data.train.iter().map(|v| v.label).collect();
    let early = EarlyFusion::train(&train_features, &labels, classes, cfg)?;
    let test_features = pooled_pair(&streams, test)?;
    let early_rows: Vec<Vec<f64>> = test_features
        .iter()
        .map(|f| early.probabilities(f))
        .collect::<Result<_>>()?;
    rows.push(two_row("STA+early fusion", accuracy(&early_rows, test)));
    rows.push(two_row("STA+late fusion", rows[3].two_stream.expect("filled")));

    let (collab, streams, _) = train_collaborative(data, &streams, cfg)?;
    let collab_models = TrainedModels {
        streams: streams.clone(),
        collab: Some(collab),
    };
    let collab_test = collab_models.scores(test)?;
    let cs: Vec<Vec<f64>> = collab_test.iter().map(|s| s.rows[0].clone()).collect();
    let cm: Vec<Vec<f64>> = collab_test.iter().map(|s| s.rows[1].clone()).collect();
    rows.push(AblationRow {
        name: "STA+CLN".to_string(),
        static_acc: Some(accuracy(&cs, test)),
        motion_acc: Some(accuracy(&cm, test)),
        two_stream: Some(evaluate_scores(&collab_test, &late)?.accuracy),
    });

    let stream_only = TrainedModels { streams, collab: None };
    let awl = learn_weights(&stream_only.scores(&data.train)?, cfg.lambda, cfg.epsilon)?;
    rows.push(two_row(
        "STA+AWL",
        evaluate_scores(&stream_only.scores(test)?, &awl)?.accuracy,
    ));

    let weights = learn_weights(&collab_models.scores(&data.train)?, cfg.lambda, cfg.epsilon)?;
    rows.push(two_row(
        "STA+CLN+AWL",
        evaluate_scores(&collab_test, &weights)?.accuracy,
    ));

    Ok(AblationOutcome {
        table: AblationTable { rows },
        full: collab_models,
        weights,
    })
}

pub fn ablation_suite(data: &Dataset, cfg: &TrainConfig) -> Result<AblationTable> {
    Ok(run_ablation(data, cfg)?.table)
}
