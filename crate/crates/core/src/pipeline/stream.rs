use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fit, HeldOut, TrainConfig, TrainLog};
use crate::data::{Dataset, VideoSample};
use crate::error::{shape_err, Error, Result};
use crate::spatial::{
    argmax, cam_activations_graph, cam_maps_graph, normalize_attention_graph, spatial_logits_graph,
    weighted_pool_graph, SpatialHead, SpatialVars, StreamTag,
};
use crate::temporal::{
    affinity_graph, attend_graph, linear_softmax_graph, lstm_graph, temporal_scores_graph, HeadVars, LstmParams,
    LstmVars, TemporalHeads,
};
use crate::tensor::{Graph, Tensor, Var};

/// Which attention levels are active. Disabled levels fall back to uniform
/// weights, so all-off is plain average pooling over cells and frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub spatial: bool,
    pub temporal: bool,
}

impl AttentionConfig {
    pub const NONE: AttentionConfig = AttentionConfig {
        spatial: false,
        temporal: false,
    };
    pub const SPATIAL: AttentionConfig = AttentionConfig {
        spatial: true,
        temporal: false,
    };
    pub const TEMPORAL: AttentionConfig = AttentionConfig {
        spatial: false,
        temporal: true,
    };
    pub const FULL: AttentionConfig = AttentionConfig {
        spatial: true,
        temporal: true,
    };

    pub fn label(self) -> &'static str {
        match (self.spatial, self.temporal) {
            (false, false) => "Frame",
            (true, false) => "Frame+SA",
            (false, true) => "Frame+TA",
            (true, true) => "Frame+STA",
        }
    }
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig::FULL
    }
}

/// One stream's spatial-temporal attention network: CAM spatial head,
/// weighted pooling, LSTM with affinity-based temporal attention, and the
/// two temporal classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamModel {
    pub stream: StreamTag,
    pub attention: AttentionConfig,
    pub spatial: SpatialHead,
    pub lstm: LstmParams,
    pub heads: TemporalHeads,
}

pub(crate) struct StreamVars {
    pub spatial: SpatialVars,
    pub lstm: LstmVars,
    pub heads: HeadVars,
}

impl StreamVars {
    /// Same order as `StreamModel::tensors_mut`.
    pub(crate) fn all(&self) -> Vec<Var> {
        let mut v = self.spatial.all();
        v.extend(self.lstm.all());
        v.extend(self.heads.all());
        v
    }
}

/// Graph nodes of one batched forward pass over `B` videos of `T` frames.
pub(crate) struct StreamGraph {
    /// `[B T, C]`, spatial attention only.
    pub spatial_probs: Option<Var>,
    /// Normalized spatial maps `[B T, g]`.
    pub attention: Var,
    /// Pooled frame features `[B, T, K]`.
    pub alpha: Var,
    /// `[B, T]`, temporal attention only.
    pub gamma: Option<Var>,
    /// Temporal weights `[B, T]`.
    pub weights: Var,
    pub p_feat: Var,
    pub p_lstm: Var,
}

/// Per-video outputs of a trained stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamOutput {
    /// Mean of the feature-head and LSTM-head probabilities.
    pub probabilities: Vec<f64>,
    pub feature_probs: Vec<f64>,
    pub lstm_probs: Vec<f64>,
    /// Normalized spatial map per frame (`g` values, mean 1).
    pub spatial_attention: Vec<Vec<f64>>,
    pub gamma: Option<Vec<f64>>,
    pub temporal_weights: Vec<f64>,
    /// Attended frame features `softmax(gamma)_i * alpha_i`.
    pub attended: Vec<Vec<f64>>,
    pub pooled: Vec<f64>,
}

const FORWARD_CHUNK: usize = 64;

impl StreamModel {
    pub fn init(
        stream: StreamTag,
        attention: AttentionConfig,
        in_channels: usize,
        classes: usize,
        cfg: &TrainConfig,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(2).wrapping_add(stream.index() as u64));
        StreamModel {
            stream,
            attention,
            spatial: SpatialHead::init(&mut rng, in_channels, cfg.cam_channels, classes),
            lstm: LstmParams::init(&mut rng, in_channels, cfg.lstm_hidden),
            heads: TemporalHeads::init(&mut rng, in_channels, cfg.lstm_hidden, classes),
        }
    }

    pub fn classes(&self) -> usize {
        self.heads.classes()
    }

    pub fn in_channels(&self) -> usize {
        self.lstm.input_size()
    }

    pub(crate) fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        let mut v: Vec<_> = self.spatial.tensors().into();
        v.extend(self.lstm.tensors());
        v.extend(self.heads.tensors());
        v
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<_> = self.spatial.tensors_mut().into();
        v.extend(self.lstm.tensors_mut());
        v.extend(self.heads.tensors_mut());
        v
    }

    /// Spatial parameters are only trainable when spatial attention is on.
    pub(crate) fn bind(&self, g: &mut Graph, trainable: bool) -> StreamVars {
        StreamVars {
            spatial: self.spatial.bind(g, trainable && self.attention.spatial),
            lstm: self.lstm.bind(g, trainable),
            heads: self.heads.bind(g, trainable),
        }
    }

    pub fn forward(&self, videos: &[VideoSample]) -> Result<Vec<StreamOutput>> {
        let mut out = Vec::with_capacity(videos.len());
        for chunk in videos.chunks(FORWARD_CHUNK) {
            let refs: Vec<&VideoSample> = chunk.iter().collect();
            let mut g = Graph::new();
            let vars = self.bind(&mut g, false);
            let sg = stream_graph(&mut g, self, &vars, &refs, None)?;
            out.extend(collect_outputs(&g, &sg, chunk.len())?);
        }
        Ok(out)
    }

    /// Class probabilities per video.
    pub fn scores(&self, videos: &[VideoSample]) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward(videos)?.into_iter().map(|o| o.probabilities).collect())
    }
}

/// Builds the batched forward pass. With `labels`, the CAM of each frame
/// uses the video label; otherwise the frame's own spatial prediction.
pub(crate) fn stream_graph(
    g: &mut Graph,
    model: &StreamModel,
    vars: &StreamVars,
    videos: &[&VideoSample],
    labels: Option<&[usize]>,
) -> Result<StreamGraph> {
    let first = videos.first().ok_or(Error::NoTrainingData)?;
    let steps = first.len();
    let (h, w, k) = first.grid_dims();
    if k != model.in_channels() {
        return Err(shape_err(format!(
            "{k} input channels for a model of {}",
            model.in_channels()
        )));
    }
    let frames = videos.len() * steps;
    let cells = h * w;
    let mut data = Vec::with_capacity(frames * cells * k);
    for v in videos {
        if v.len() != steps || v.grid_dims() != (h, w, k) {
            return Err(shape_err(format!("video {} differs in shape from {}", v.id, first.id)));
        }
        for grid in v.frames(model.stream) {
            data.extend_from_slice(grid.values());
        }
    }
    let x = g.constant_from(&[frames, h, w, k], data)?;
    let x_cells = g.reshape(x, &[frames, cells, k])?;

    let (spatial_probs, attention) = if model.attention.spatial {
        let acts = cam_activations_graph(g, x, &vars.spatial)?;
        let kc = *g.shape(acts).last().expect("4-d");
        let acts = g.reshape(acts, &[frames, cells, kc])?;
        let logits = spatial_logits_graph(g, acts, vars.spatial.weights, vars.spatial.bias)?;
        let probs = g.softmax(logits)?;
        let classes: Vec<usize> = match labels {
            Some(l) => l.iter().flat_map(|&c| std::iter::repeat_n(c, steps)).collect(),
            None => {
                let c = model.classes();
                g.value(probs).chunks(c).map(argmax).collect()
            }
        };
        let maps = cam_maps_graph(g, acts, vars.spatial.weights, &classes)?;
        (Some(probs), normalize_attention_graph(g, maps)?)
    } else {
        (None, g.constant_from(&[frames, cells], vec![1.0; frames * cells])?)
    };

    let alpha = weighted_pool_graph(g, x_cells, attention)?;
    let alpha = g.reshape(alpha, &[videos.len(), steps, k])?;
    let hidden = lstm_graph(g, alpha, &vars.lstm)?;

    let (gamma, weights) = if model.attention.temporal {
        let aff = affinity_graph(g, hidden)?;
        let gamma = temporal_scores_graph(g, aff)?;
        (Some(gamma), g.softmax(gamma)?)
    } else {
        let n = videos.len() * steps;
        (
            None,
            g.constant_from(&[videos.len(), steps], vec![1.0 / steps as f64; n])?,
        )
    };

    let pooled = attend_graph(g, alpha, weights)?;
    let p_feat = linear_softmax_graph(g, pooled, vars.heads.feature_weights, vars.heads.feature_bias)?;
    let n = *g.shape(hidden).last().expect("3-d");
    let last = g.narrow(hidden, 1, steps - 1, 1)?;
    let last = g.reshape(last, &[videos.len(), n])?;
    let p_lstm = linear_softmax_graph(g, last, vars.heads.lstm_weights, vars.heads.lstm_bias)?;
    Ok(StreamGraph {
        spatial_probs,
        attention,
        alpha,
        gamma,
        weights,
        p_feat,
        p_lstm,
    })
}

/// Equal-weight sum of the connection (pooled feature), temporal (last
/// hidden state) and spatial (per-frame GAP) cross-entropy losses.
pub(crate) fn stream_loss(g: &mut Graph, sg: &StreamGraph, labels: &[usize], steps: usize) -> Result<Var> {
    let connection = g.cross_entropy(sg.p_feat, labels)?;
    let temporal = g.cross_entropy(sg.p_lstm, labels)?;
    let mut loss = g.add(connection, temporal)?;
    if let Some(p) = sg.spatial_probs {
        let frame_labels: Vec<usize> = labels.iter().flat_map(|&c| std::iter::repeat_n(c, steps)).collect();
        let spatial = g.cross_entropy(p, &frame_labels)?;
        loss = g.add(loss, spatial)?;
    }
    Ok(loss)
}

fn collect_outputs(g: &Graph, sg: &StreamGraph, batch: usize) -> Result<Vec<StreamOutput>> {
    let ashape = g.shape(sg.alpha).to_vec();
    let (steps, k) = (ashape[1], ashape[2]);
    let cells = g.shape(sg.attention)[1];
    let c = g.shape(sg.p_feat)[1];
    let (alpha, attn, weights) = (g.value(sg.alpha), g.value(sg.attention), g.value(sg.weights));
    let (pf, pl) = (g.value(sg.p_feat), g.value(sg.p_lstm));
    let gamma = sg.gamma.map(|v| g.value(v));
    Ok((0..batch)
        .map(|b| {
            let feature_probs = pf[b * c..(b + 1) * c].to_vec();
            let lstm_probs = pl[b * c..(b + 1) * c].to_vec();
            let probabilities = feature_probs
                .iter()
                .zip(&lstm_probs)
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
            let tw = weights[b * steps..(b + 1) * steps].to_vec();
            let attended: Vec<Vec<f64>> = (0..steps)
                .map(|t| {
                    let row = &alpha[(b * steps + t) * k..(b * steps + t + 1) * k];
                    row.iter().map(|v| v * tw[t]).collect()
                })
                .collect();
            let mut pooled = vec![0.0; k];
            for row in &attended {
                for (p, v) in pooled.iter_mut().zip(row) {
                    *p += v;
                }
            }
            StreamOutput {
                probabilities,
                feature_probs,
                lstm_probs,
                spatial_attention: (0..steps)
                    .map(|t| attn[(b * steps + t) * cells..(b * steps + t + 1) * cells].to_vec())
                    .collect(),
                gamma: gamma.map(|gm| gm[b * steps..(b + 1) * steps].to_vec()),
                temporal_weights: tw,
                attended,
                pooled,
            }
        })
        .collect())
}

/// Accuracy and mean negative log-likelihood of `scores` against labels.
pub(crate) fn score_quality(scores: &[Vec<f64>], videos: &[VideoSample]) -> HeldOut {
    let n = videos.len().max(1) as f64;
    let correct = scores.iter().zip(videos).filter(|(s, v)| argmax(s) == v.label).count();
    let loss = scores
        .iter()
        .zip(videos)
        .map(|(s, v)| -s[v.label].max(crate::tensor::CE_CLIP).ln())
        .sum::<f64>();
    HeldOut {
        accuracy: correct as f64 / n,
        loss: loss / n,
    }
}

/// Held-out videos for the learning-rate schedule: validation if present,
/// training otherwise.
pub(crate) fn held_out_videos(data: &Dataset) -> &[VideoSample] {
    if data.val.is_empty() {
        &data.train
    } else {
        &data.val
    }
}

pub(crate) fn check_labels(videos: &[VideoSample], classes: usize) -> Result<()> {
    match videos.iter().find(|v| v.label >= classes) {
        Some(v) => Err(Error::BadLabel {
            label: v.label,
            classes,
        }),
        None => Ok(()),
    }
}

/// Stage one: trains one stream on the training split by minimizing the
/// three-head loss with the plateau learning-rate schedule.
pub fn train_stream(
    data: &Dataset,
    stream: StreamTag,
    attention: AttentionConfig,
    cfg: &TrainConfig,
) -> Result<(StreamModel, TrainLog)> {
    cfg.validate()?;
    let train = &data.train;
    let first = train.first().ok_or(Error::NoTrainingData)?;
    let classes = data.num_classes();
    check_labels(train, classes)?;
    let mut model = StreamModel::init(stream, attention, first.grid_dims().2, classes, cfg);
    let held_out = held_out_videos(data);
    let steps = first.len();
    let log = fit(
        &mut model,
        train.len(),
        cfg,
        cfg.seed ^ (0x5EED_0000 + stream.index() as u64),
        StreamModel::tensors_mut,
        |m, batch| {
            let videos: Vec<&VideoSample> = batch.iter().map(|&i| &train[i]).collect();
            let labels: Vec<usize> = videos.iter().map(|v| v.label).collect();
            let mut g = Graph::new();
            let vars = m.bind(&mut g, true);
            let sg = stream_graph(&mut g, m, &vars, &videos, Some(&labels))?;
            let loss = stream_loss(&mut g, &sg, &labels, steps)?;
            g.backward(loss)?;
            let grads = vars.all().into_iter().map(|v| g.grad(v).map(<[f64]>::to_vec)).collect();
            Ok((g.value(loss)[0], grads))
        },
        |m| Ok(score_quality(&m.scores(held_out)?, held_out)),
    )?;
    Ok((model, log))
}

/// Both trained streams.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStream {
    pub static_model: StreamModel,
    pub motion_model: StreamModel,
}

impl TwoStream {
    pub fn get(&self, stream: StreamTag) -> &StreamModel {
        match stream {
            StreamTag::Static => &self.static_model,
            StreamTag::Motion => &self.motion_model,
        }
    }

    pub fn train(data: &Dataset, attention: AttentionConfig, cfg: &TrainConfig) -> Result<(TwoStream, [TrainLog; 2])> {
        let (static_model, ls) = train_stream(data, StreamTag::Static, attention, cfg)?;
        let (motion_model, lm) = train_stream(data, StreamTag::Motion, attention, cfg)?;
        Ok((
            TwoStream {
                static_model,
                motion_model,
            },
            [ls, lm],
        ))
    }
}

/// How much attention mass lands on the planted ground truth, relative to
/// uniform attention (ratio 1 means no localization).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Localization {
    /// Mean softmax weight summed over planted frames.
    pub temporal_mass: f64,
    /// `temporal_mass / (T_sig / T)`.
    pub temporal_ratio: f64,
    /// Mean normalized spatial attention on planted cells of planted frames;
    /// uniform attention gives 1.
    pub spatial_ratio: f64,
}

pub fn attention_localization(model: &StreamModel, videos: &[VideoSample]) -> Result<Localization> {
    if videos.is_empty() {
        return Err(Error::NoTestData);
    }
    let outputs = model.forward(videos)?;
    let (mut mass, mut ratio, mut spatial, mut spatial_count) = (0.0, 0.0, 0.0, 0usize);
    for (v, o) in videos.iter().zip(&outputs) {
        let m: f64 = v.planted_frames.iter().map(|&t| o.temporal_weights[t]).sum();
        mass += m;
        ratio += m / (v.planted_frames.len() as f64 / v.len() as f64);
        for &t in &v.planted_frames {
            for &c in &v.planted_cells {
                spatial += o.spatial_attention[t][c];
                spatial_count += 1;
            }
        }
    }
    let n = videos.len() as f64;
    Ok(Localization {
        temporal_mass: mass / n,
        temporal_ratio: ratio / n,
        spatial_ratio: spatial / spatial_count.max(1) as f64,
    })
}
