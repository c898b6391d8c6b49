use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::stream::{check_labels, held_out_videos, score_quality, stream_graph, StreamGraph, TwoStream};
use super::{fit, TrainConfig, TrainLog};
use crate::collab::{
    collab_graph, segment_features, segment_matrix, CollabHeadVars, CollabHeads, CollabParams, CollabVars,
};
use crate::data::{Dataset, VideoSample};
use crate::error::{shape_err, Error, Result};
use crate::fusion::StreamScores;
use crate::spatial::StreamTag;
use crate::temporal::linear_softmax_graph;
use crate::tensor::{Graph, Tensor, Var};

/// Collaborative guidance parameters and the two classifiers on the merged
/// video features.
#[derive(Debug, Clone, PartialEq)]
pub struct CollabModel {
    pub params: CollabParams,
    pub heads: CollabHeads,
    pub unroll_rounds: usize,
    pub max_segments: usize,
}

/// Segment features `[static, motion]`, each `N x D`.
pub(crate) type SegmentPair = [Vec<Vec<f64>>; 2];

struct CollabBound {
    params: CollabVars,
    heads: CollabHeadVars,
}

const COLLAB_CHUNK: usize = 128;

impl CollabModel {
    pub fn init(dim: usize, classes: usize, cfg: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xC011_AB00);
        CollabModel {
            params: CollabParams::init(&mut rng, dim, cfg.collab_hidden),
            heads: CollabHeads::init(&mut rng, dim, classes),
            unroll_rounds: cfg.unroll_rounds,
            max_segments: cfg.max_segments,
        }
    }

    pub fn classes(&self) -> usize {
        self.heads.static_bias.len()
    }

    pub(crate) fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        let mut v = self.params.tensors();
        v.extend(self.heads.tensors());
        v
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.params.tensors_mut();
        v.extend(self.heads.tensors_mut());
        v
    }

    fn bind(&self, g: &mut Graph, trainable: bool) -> CollabBound {
        CollabBound {
            params: self.params.bind(g, trainable),
            heads: self.heads.bind(g, trainable),
        }
    }

    /// Static and motion head probabilities per video.
    pub fn scores(&self, streams: &TwoStream, videos: &[VideoSample]) -> Result<Vec<[Vec<f64>; 2]>> {
        let features = segment_pairs(streams, videos, self.max_segments)?;
        self.scores_from_features(&features)
    }

    pub(crate) fn scores_from_features(&self, features: &[SegmentPair]) -> Result<Vec<[Vec<f64>; 2]>> {
        let mut out = Vec::with_capacity(features.len());
        for chunk in features.chunks(COLLAB_CHUNK) {
            let mut g = Graph::new();
            let bound = self.bind(&mut g, false);
            let vs = stack(&mut g, chunk, StreamTag::Static)?;
            let vm = stack(&mut g, chunk, StreamTag::Motion)?;
            let (ps, pm) = self.heads_graph(&mut g, &bound, vs, vm)?;
            let c = self.classes();
            let (ps, pm) = (g.value(ps), g.value(pm));
            out.extend((0..chunk.len()).map(|b| [ps[b * c..(b + 1) * c].to_vec(), pm[b * c..(b + 1) * c].to_vec()]));
        }
        Ok(out)
    }

    fn heads_graph(&self, g: &mut Graph, bound: &CollabBound, vs: Var, vm: Var) -> Result<(Var, Var)> {
        let o = collab_graph(g, vs, vm, &bound.params, self.unroll_rounds)?;
        let h = &bound.heads;
        let ps = linear_softmax_graph(g, o.o_static, h.static_weights, h.static_bias)?;
        let pm = linear_softmax_graph(g, o.o_motion, h.motion_weights, h.motion_bias)?;
        Ok((ps, pm))
    }
}

fn stack(g: &mut Graph, features: &[SegmentPair], stream: StreamTag) -> Result<Var> {
    let s = stream.index();
    let n = features[0][s].len();
    let d = features[0][s][0].len();
    let mut data = Vec::with_capacity(features.len() * n * d);
    for f in features {
        if f[s].len() != n || f[s].iter().any(|r| r.len() != d) {
            return Err(shape_err("segment features differ in shape across videos"));
        }
        data.extend(f[s].iter().flatten());
    }
    g.constant_from(&[features.len(), n, d], data)
}

/// Attended frame features of both streams, averaged into segments.
pub(crate) fn segment_pairs(
    streams: &TwoStream,
    videos: &[VideoSample],
    max_segments: usize,
) -> Result<Vec<SegmentPair>> {
    let s = streams.static_model.forward(videos)?;
    let m = streams.motion_model.forward(videos)?;
    s.iter()
        .zip(&m)
        .map(|(a, b)| {
            Ok([
                segment_features(&a.attended, max_segments)?,
                segment_features(&b.attended, max_segments)?,
            ])
        })
        .collect()
}

/// `[B, N, K]` segment features of the attended frames inside a live stream graph.
fn segments_graph(g: &mut Graph, sg: &StreamGraph, max_segments: usize) -> Result<Var> {
    let shape = g.shape(sg.alpha).to_vec();
    let (b, t, k) = (shape[0], shape[1], shape[2]);
    let w = g.reshape(sg.weights, &[b, t, 1])?;
    let w = g.concat(&vec![w; k], 2)?;
    let beta = g.mul(sg.alpha, w)?;
    let rows = segment_matrix(t, max_segments)?;
    let n = rows.len();
    let data: Vec<f64> = (0..b).flat_map(|_| rows.iter().flatten().copied()).collect();
    let seg = g.constant_from(&[b, n, t], data)?;
    g.bmm(seg, beta)
}

fn mean_rows(pairs: &[[Vec<f64>; 2]]) -> Vec<Vec<f64>> {
    pairs
        .iter()
        .map(|[a, b]| a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect())
        .collect()
}

/// Stage two: trains the collaborative parameters and heads on the sum of
/// both heads' cross-entropy. Streams stay frozen unless
/// `cfg.finetune_streams`; the returned streams are the ones to use with the
/// returned model.
pub fn train_collaborative(
    data: &Dataset,
    streams: &TwoStream,
    cfg: &TrainConfig,
) -> Result<(CollabModel, TwoStream, TrainLog)> {
    cfg.validate()?;
    let train = &data.train;
    if train.is_empty() {
        return Err(Error::NoTrainingData);
    }
    let classes = streams.static_model.classes();
    if streams.motion_model.classes() != classes {
        return Err(shape_err("static and motion models disagree on class count"));
    }
    check_labels(train, classes)?;
    let dim = streams.static_model.in_channels();
    let held_out = held_out_videos(data);
    let seed = cfg.seed ^ 0xC011_AB01;

    if !cfg.finetune_streams {
        let features = segment_pairs(streams, train, cfg.max_segments)?;
        let held_features = segment_pairs(streams, held_out, cfg.max_segments)?;
        let mut model = CollabModel::init(dim, classes, cfg);
        let log = fit(
            &mut model,
            train.len(),
            cfg,
            seed,
            CollabModel::tensors_mut,
            |m, batch| {
                let picked: Vec<SegmentPair> = batch.iter().map(|&i| features[i].clone()).collect();
                let labels: Vec<usize> = batch.iter().map(|&i| train[i].label).collect();
                let mut g = Graph::new();
                let bound = m.bind(&mut g, true);
                let vs = stack(&mut g, &picked, StreamTag::Static)?;
                let vm = stack(&mut g, &picked, StreamTag::Motion)?;
                let (ps, pm) = m.heads_graph(&mut g, &bound, vs, vm)?;
                let ls = g.cross_entropy(ps, &labels)?;
                let lm = g.cross_entropy(pm, &labels)?;
                let loss = g.add(ls, lm)?;
                g.backward(loss)?;
                let mut vars = bound.params.all();
                vars.extend(bound.heads.all());
                let grads = vars.into_iter().map(|v| g.grad(v).map(<[f64]>::to_vec)).collect();
                Ok((g.value(loss)[0], grads))
            },
            |m| {
                Ok(score_quality(
                    &mean_rows(&m.scores_from_features(&held_features)?),
                    held_out,
                ))
            },
        )?;
        return Ok((model, streams.clone(), log));
    }

    let mut joint = (CollabModel::init(dim, classes, cfg), streams.clone());
    fn joint_tensors(j: &mut (CollabModel, TwoStream)) -> Vec<&mut Tensor> {
        let (c, s) = j;
        let mut v = c.tensors_mut();
        v.extend(s.static_model.tensors_mut());
        v.extend(s.motion_model.tensors_mut());
        v
    }
    let log = fit(
        &mut joint,
        train.len(),
        cfg,
        seed,
        joint_tensors,
        |(m, s), batch| {
            let videos: Vec<&VideoSample> = batch.iter().map(|&i| &train[i]).collect();
            let labels: Vec<usize> = videos.iter().map(|v| v.label).collect();
            let mut g = Graph::new();
            let bound = m.bind(&mut g, true);
            let sv = s.static_model.bind(&mut g, true);
            let mv = s.motion_model.bind(&mut g, true);
            let sg = stream_graph(&mut g, &s.static_model, &sv, &videos, Some(&labels))?;
            let mg = stream_graph(&mut g, &s.motion_model, &mv, &videos, Some(&labels))?;
            let vs = segments_graph(&mut g, &sg, m.max_segments)?;
            let vm = segments_graph(&mut g, &mg, m.max_segments)?;
            let (ps, pm) = m.heads_graph(&mut g, &bound, vs, vm)?;
            let ls = g.cross_entropy(ps, &labels)?;
            let lm = g.cross_entropy(pm, &labels)?;
            let loss = g.add(ls, lm)?;
            g.backward(loss)?;
            let mut vars = bound.params.all();
            vars.extend(bound.heads.all());
            vars.extend(sv.all());
            vars.extend(mv.all());
            let grads = vars.into_iter().map(|v| g.grad(v).map(<[f64]>::to_vec)).collect();
            Ok((g.value(loss)[0], grads))
        },
        |(m, s)| Ok(score_quality(&mean_rows(&m.scores(s, held_out)?), held_out)),
    )?;
    let (model, streams) = joint;
    Ok((model, streams, log))
}

/// Everything needed to score videos: the two streams and, optionally, the
/// collaborative stage on top of them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModels {
    pub streams: TwoStream,
    pub collab: Option<CollabModel>,
}

impl TrainedModels {
    /// Per-video static/motion score rows: collaborative head probabilities
    /// when a collaborative model is present, stream probabilities otherwise.
    pub fn scores(&self, videos: &[VideoSample]) -> Result<Vec<StreamScores>> {
        let rows: Vec<[Vec<f64>; 2]> = match &self.collab {
            Some(c) => c.scores(&self.streams, videos)?,
            None => {
                let s = self.streams.static_model.scores(videos)?;
                let m = self.streams.motion_model.scores(videos)?;
                s.into_iter().zip(m).map(|(a, b)| [a, b]).collect()
            }
        };
        videos
            .iter()
            .zip(rows)
            .map(|(v, [s, m])| StreamScores::new(v.id.clone(), Some(v.label), s, m))
            .collect()
    }
}
