//! Temporal-level attention: an LSTM over per-frame features, frame relevance
//! from the column sums of the hidden-state affinity `tanh(H^T H)`, and the
//! softmax-weighted sequence feature.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::spatial::{bind, uniform_tensor};
use crate::tensor::{Graph, Tensor, Var};

/// Per-frame feature vectors `alpha_1 .. alpha_T`, all of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: Vec<Vec<f64>>,
}

impl FeatureSequence {
    pub fn new(frames: Vec<Vec<f64>>) -> Result<Self> {
        let dim = frames.first().map(Vec::len).ok_or(Error::EmptyVector)?;
        if dim == 0 || frames.iter().any(|f| f.len() != dim) {
            return Err(shape_err("frames must share one positive dimension"));
        }
        Ok(FeatureSequence { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames[0].len()
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    fn flat(&self) -> Vec<f64> {
        self.frames.concat()
    }
}

/// Hidden states `h_1 .. h_T` in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    pub states: Vec<Vec<f64>>,
}

impl HiddenStates {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn hidden_size(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("at least one step")
    }
}

/// Frame relevance `gamma` and its softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalAttention {
    pub gamma: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Single-layer LSTM. Gates are packed `[input, forget, candidate, output]`
/// along the last axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `[D, 4n]`
    pub w_input: Tensor,
    /// `[n, 4n]`
    pub w_hidden: Tensor,
    /// `[4n]`
    pub bias: Tensor,
}

pub(crate) struct LstmVars {
    pub(crate) w_input: Var,
    pub(crate) w_hidden: Var,
    pub(crate) bias: Var,
}

impl LstmVars {
    pub(crate) fn all(&self) -> Vec<Var> {
        vec![self.w_input, self.w_hidden, self.bias]
    }
}

impl LstmParams {
    /// Uniform weights in `[-0.08, 0.08]`, zero bias except the forget gate at 1.
    pub fn init<R: Rng>(rng: &mut R, input: usize, hidden: usize) -> Self {
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        LstmParams {
            w_input: uniform_tensor(rng, &[input, 4 * hidden], 0.08),
            w_hidden: uniform_tensor(rng, &[hidden, 4 * hidden], 0.08),
            bias,
        }
    }

    pub fn new(w_input: Tensor, w_hidden: Tensor, bias: Tensor) -> Result<Self> {
        let p = LstmParams {
            w_input,
            w_hidden,
            bias,
        };
        let n = p.hidden_size();
        let (wi, wh) = (p.w_input.shape(), p.w_hidden.shape());
        if wi.len() != 2 || wi[1] != 4 * n || wh != [n, 4 * n] || p.bias.shape() != [4 * n] {
            return Err(shape_err(format!(
                "LSTM weights {wi:?}, {wh:?}, bias {:?}",
                p.bias.shape()
            )));
        }
        Ok(p)
    }

    pub fn input_size(&self) -> usize {
        self.w_input.shape()[0]
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hidden.shape()[0]
    }

    pub(crate) fn bind(&self, g: &mut Graph, trainable: bool) -> LstmVars {
        LstmVars {
            w_input: bind(g, &self.w_input, trainable),
            w_hidden: bind(g, &self.w_hidden, trainable),
            bias: bind(g, &self.bias, trainable),
        }
    }

    pub(crate) fn tensors(&self) -> [(&'static str, &Tensor); 3] {
        [
            ("lstm.w_input", &self.w_input),
            ("lstm.w_hidden", &self.w_hidden),
            ("lstm.bias", &self.bias),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Tensor; 3] {
        [&mut self.w_input, &mut self.w_hidden, &mut self.bias]
    }
}

/// Runs the LSTM over `x` of shape `[B, T, D]` from zero states and returns
/// the stacked hidden states `[B, T, n]`.
pub(crate) fn lstm_graph(g: &mut Graph, x: Var, p: &LstmVars) -> Result<Var> {
    let xs = g.shape(x).to_vec();
    let (batch, steps, dim) = match xs.as_slice() {
        &[b, t, d] => (b, t, d),
        other => return Err(shape_err(format!("LSTM input {other:?}"))),
    };
    let ws = g.shape(p.w_input).to_vec();
    if ws.len() != 2 || ws[0] != dim {
        return Err(shape_err(format!("LSTM input dim {dim} vs weights {ws:?}")));
    }
    let n = ws[1] / 4;
    let mut h: Option<Var> = None;
    let mut c: Option<Var> = None;
    let mut outputs = Vec::with_capacity(steps);
    for t in 0..steps {
        let xt = g.narrow(x, 1, t, 1)?;
        let xt = g.reshape(xt, &[batch, dim])?;
        let mut z = g.matmul(xt, p.w_input)?;
        if let Some(hp) = h {
            let zh = g.matmul(hp, p.w_hidden)?;
            z = g.add(z, zh)?;
        }
        let z = g.add_bias(z, p.bias)?;
        let zi = g.narrow(z, 1, 0, n)?;
        let zf = g.narrow(z, 1, n, n)?;
        let zg = g.narrow(z, 1, 2 * n, n)?;
        let zo = g.narrow(z, 1, 3 * n, n)?;
        let i = g.sigmoid(zi);
        let cand = g.tanh(zg);
        let o = g.sigmoid(zo);
        let ic = g.mul(i, cand)?;
        let cn = match c {
            Some(cp) => {
                let f = g.sigmoid(zf);
                let fc = g.mul(f, cp)?;
                g.add(fc, ic)?
            }
            None => ic,
        };
        let tc = g.tanh(cn);
        let hn = g.mul(o, tc)?;
        outputs.push(g.reshape(hn, &[batch, 1, n])?);
        h = Some(hn);
        c = Some(cn);
    }
    g.concat(&outputs, 1)
}

/// `tanh(H H^T)` per batch element, for `H` of shape `[B, T, n]` (rows are
/// time steps). Returns `[B, T, T]`.
pub(crate) fn affinity_graph(g: &mut Graph, hidden: Var) -> Result<Var> {
    let ht = g.transpose(hidden)?;
    let s = g.bmm(hidden, ht)?;
    Ok(g.tanh(s))
}

/// Column sums of `[B, T, T]` affinity matrices -> `[B, T]`.
pub(crate) fn temporal_scores_graph(g: &mut Graph, affinity: Var) -> Result<Var> {
    g.sum_axis(affinity, 1)
}

/// Softmax-weighted sum of frames: `weights [B, T]`, `frames [B, T, D]` -> `[B, D]`.
pub(crate) fn attend_graph(g: &mut Graph, frames: Var, weights: Var) -> Result<Var> {
    let fs = g.shape(frames).to_vec();
    if fs.len() != 3 || g.shape(weights) != [fs[0], fs[1]] {
        return Err(shape_err(format!(
            "temporal weights {:?} for frames {fs:?}",
            g.shape(weights)
        )));
    }
    let w = g.reshape(weights, &[fs[0], 1, fs[1]])?;
    let pooled = g.bmm(w, frames)?;
    g.reshape(pooled, &[fs[0], fs[2]])
}

pub fn lstm_forward(seq: &FeatureSequence, params: &LstmParams) -> Result<HiddenStates> {
    if seq.dim() != params.input_size() {
        return Err(shape_err(format!(
            "sequence dim {} vs LSTM input {}",
            seq.dim(),
            params.input_size()
        )));
    }
    let mut g = Graph::new();
    let x = g.constant_from(&[1, seq.len(), seq.dim()], seq.flat())?;
    let vars = params.bind(&mut g, false);
    let h = lstm_graph(&mut g, x, &vars)?;
    let n = params.hidden_size();
    Ok(HiddenStates {
        states: g.value(h).chunks(n).map(<[f64]>::to_vec).collect(),
    })
}

/// `C = tanh(H^T H)` as a `[T, T]` tensor.
pub fn affinity(hidden: &HiddenStates) -> Result<Tensor> {
    let t = hidden.len();
    let n = hidden.hidden_size();
    if t == 0 || n == 0 {
        return Err(Error::EmptyVector);
    }
    let mut g = Graph::new();
    let h = g.constant_from(&[1, t, n], hidden.states.concat())?;
    let c = affinity_graph(&mut g, h)?;
    g.tensor(c).reshape(vec![t, t])
}

/// `gamma = 1^T C`.
pub fn temporal_scores(affinity: &Tensor) -> Result<Vec<f64>> {
    let t = match affinity.shape() {
        &[a, b] if a == b => a,
        other => return Err(shape_err(format!("affinity must be square, got {other:?}"))),
    };
    let mut g = Graph::new();
    let c = g.constant_from(&[1, t, t], affinity.data().to_vec())?;
    let s = temporal_scores_graph(&mut g, c)?;
    Ok(g.value(s).to_vec())
}

pub fn temporal_attention(gamma: &[f64]) -> Result<TemporalAttention> {
    Ok(TemporalAttention {
        gamma: gamma.to_vec(),
        weights: crate::tensor::softmax(gamma)?,
    })
}

/// Attended frames `beta_i = alpha_i * softmax(gamma)_i` and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct AttendedFeatures {
    pub attended: Vec<Vec<f64>>,
    pub pooled: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn attend_features(seq: &FeatureSequence, gamma: &[f64]) -> Result<AttendedFeatures> {
    if gamma.len() != seq.len() {
        return Err(shape_err(format!(
            "{} relevance scores for {} frames",
            gamma.len(),
            seq.len()
        )));
    }
    let mut g = Graph::new();
    let gm = g.constant_from(&[1, gamma.len()], gamma.to_vec())?;
    let w = g.softmax(gm)?;
    let f = g.constant_from(&[1, seq.len(), seq.dim()], seq.flat())?;
    let pooled = attend_graph(&mut g, f, w)?;
    let weights = g.value(w).to_vec();
    let attended = seq
        .frames()
        .iter()
        .zip(&weights)
        .map(|(a, &p)| a.iter().map(|v| v * p).collect())
        .collect();
    Ok(AttendedFeatures {
        attended,
        pooled: g.value(pooled).to_vec(),
        weights,
    })
}

/// The two softmax classifiers of the temporal network: one over the pooled
/// attended feature, one over the final LSTM hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalHeads {
    /// `[D, C]`
    pub feature_weights: Tensor,
    pub feature_bias: Tensor,
    /// `[n, C]`
    pub lstm_weights: Tensor,
    pub lstm_bias: Tensor,
}

pub(crate) struct HeadVars {
    pub feature_weights: Var,
    pub feature_bias: Var,
    pub lstm_weights: Var,
    pub lstm_bias: Var,
}

impl HeadVars {
    pub(crate) fn all(&self) -> Vec<Var> {
        vec![
            self.feature_weights,
            self.feature_bias,
            self.lstm_weights,
            self.lstm_bias,
        ]
    }
}

impl TemporalHeads {
    pub fn init<R: Rng>(rng: &mut R, feature_dim: usize, hidden: usize, classes: usize) -> Self {
        TemporalHeads {
            feature_weights: uniform_tensor(rng, &[feature_dim, classes], 0.08),
            feature_bias: Tensor::zeros(&[classes]),
            lstm_weights: uniform_tensor(rng, &[hidden, classes], 0.08),
            lstm_bias: Tensor::zeros(&[classes]),
        }
    }

    pub fn zeros(feature_dim: usize, hidden: usize, classes: usize) -> Self {
        TemporalHeads {
            feature_weights: Tensor::zeros(&[feature_dim, classes]),
            feature_bias: Tensor::zeros(&[classes]),
            lstm_weights: Tensor::zeros(&[hidden, classes]),
            lstm_bias: Tensor::zeros(&[classes]),
        }
    }

    pub fn classes(&self) -> usize {
        self.feature_bias.len()
    }

    pub(crate) fn bind(&self, g: &mut Graph, trainable: bool) -> HeadVars {
        HeadVars {
            feature_weights: bind(g, &self.feature_weights, trainable),
            feature_bias: bind(g, &self.feature_bias, trainable),
            lstm_weights: bind(g, &self.lstm_weights, trainable),
            lstm_bias: bind(g, &self.lstm_bias, trainable),
        }
    }

    pub(crate) fn tensors(&self) -> [(&'static str, &Tensor); 4] {
        [
            ("heads.feature_weights", &self.feature_weights),
            ("heads.feature_bias", &self.feature_bias),
            ("heads.lstm_weights", &self.lstm_weights),
            ("heads.lstm_bias", &self.lstm_bias),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.feature_weights,
            &mut self.feature_bias,
            &mut self.lstm_weights,
            &mut self.lstm_bias,
        ]
    }
}

/// `softmax(x W + b)` for `x` of shape `[B, D]`.
pub(crate) fn linear_softmax_graph(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let l = g.matmul(x, w)?;
    let l = g.add_bias(l, b)?;
    g.softmax(l)
}

/// Class probabilities from the feature head (on `pooled`) and the LSTM head
/// (on the last hidden state).
pub fn temporal_heads(heads: &TemporalHeads, pooled: &[f64], hidden: &HiddenStates) -> Result<(Vec<f64>, Vec<f64>)> {
    if hidden.is_empty() {
        return Err(Error::EmptyVector);
    }
    let mut g = Graph::new();
    let v = heads.bind(&mut g, false);
    let x = g.constant_from(&[1, pooled.len()], pooled.to_vec())?;
    let pf = linear_softmax_graph(&mut g, x, v.feature_weights, v.feature_bias)?;
    let h = hidden.last();
    let hx = g.constant_from(&[1, h.len()], h.to_vec())?;
    let pl = linear_softmax_graph(&mut g, hx, v.lstm_weights, v.lstm_bias)?;
    Ok((g.value(pf).to_vec(), g.value(pl).to_vec()))
}
