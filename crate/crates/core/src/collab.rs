//! Static-motion collaborative learning: each stream's merged video feature
//! re-weights the segment features of the other stream, alternating until
//! the coefficients settle.
//!
//! Projection matrices are stored input-major (`[D, k]`), i.e. as the
//! transpose of the `k x D` maps in the usual column-vector notation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::spatial::{bind, uniform_tensor, StreamTag};
use crate::temporal::{attend_graph, linear_softmax_graph};
use crate::tensor::{Graph, Tensor, Var};

/// Convergence threshold on the max coefficient change between rounds.
pub const COLLAB_TOLERANCE: f64 = 1e-6;

/// `N` segment features of one stream, each of dimension `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamFeatures {
    segments: Vec<Vec<f64>>,
    pub stream: StreamTag,
}

impl StreamFeatures {
    pub fn new(segments: Vec<Vec<f64>>, stream: StreamTag) -> Result<Self> {
        let dim = segments.first().map(Vec::len).ok_or(Error::EmptyVector)?;
        if dim == 0 || segments.iter().any(|s| s.len() != dim) {
            return Err(shape_err("segments must share one positive dimension"));
        }
        if segments.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::BadConfig("non-finite segment feature".into()));
        }
        Ok(StreamFeatures { segments, stream })
    }

    pub fn segments(&self) -> &[Vec<f64>] {
        &self.segments
    }

    pub fn count(&self) -> usize {
        self.segments.len()
    }

    pub fn dim(&self) -> usize {
        self.segments[0].len()
    }

    fn flat(&self) -> Vec<f64> {
        self.segments.concat()
    }
}

/// Groups `T` frame features into `min(T, max_segments)` contiguous chunks
/// (chunk `i` covers frames `floor(i T / N) .. floor((i + 1) T / N)`) and
/// averages inside each chunk.
pub fn segment_features(frames: &[Vec<f64>], max_segments: usize) -> Result<Vec<Vec<f64>>> {
    let matrix = segment_matrix(frames.len(), max_segments)?;
    let n = matrix.len();
    let dim = frames.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; dim]; n];
    for (row, seg) in matrix.iter().zip(out.iter_mut()) {
        for (w, f) in row.iter().zip(frames) {
            if *w != 0.0 {
                for (s, v) in seg.iter_mut().zip(f) {
                    *s += w * v;
                }
            }
        }
    }
    Ok(out)
}

/// Row `i` averages the frames of chunk `i`.
pub(crate) fn segment_matrix(frames: usize, max_segments: usize) -> Result<Vec<Vec<f64>>> {
    if frames == 0 || max_segments == 0 {
        return Err(Error::EmptyVector);
    }
    let n = frames.min(max_segments);
    Ok((0..n)
        .map(|i| {
            let (lo, hi) = (i * frames / n, (i + 1) * frames / n);
            let w = 1.0 / (hi - lo) as f64;
            (0..frames)
                .map(|t| if (lo..hi).contains(&t) { w } else { 0.0 })
                .collect()
        })
        .collect())
}

/// Parameters of one guidance direction.
#[derive(Debug, Clone, PartialEq)]
pub struct GuideParams {
    /// `[D_target, k]`
    pub proj: Tensor,
    /// `[D_guide, k]`
    pub guide: Tensor,
    /// `[k, 1]`
    pub score: Tensor,
}

pub(crate) struct GuideVars {
    pub(crate) proj: Var,
    pub(crate) guide: Var,
    pub(crate) score: Var,
}

impl GuideParams {
    pub fn init<R: Rng>(rng: &mut R, target_dim: usize, guide_dim: usize, hidden: usize) -> Self {
        GuideParams {
            proj: uniform_tensor(rng, &[target_dim, hidden], 0.08),
            guide: uniform_tensor(rng, &[guide_dim, hidden], 0.08),
            score: uniform_tensor(rng, &[hidden, 1], 0.08),
        }
    }

    pub fn zeros(target_dim: usize, guide_dim: usize, hidden: usize) -> Self {
        GuideParams {
            proj: Tensor::zeros(&[target_dim, hidden]),
            guide: Tensor::zeros(&[guide_dim, hidden]),
            score: Tensor::zeros(&[hidden, 1]),
        }
    }

    pub fn new(proj: Tensor, guide: Tensor, score: Tensor) -> Result<Self> {
        let (p, g, s) = (proj.shape(), guide.shape(), score.shape());
        if p.len() != 2 || g.len() != 2 || p[1] != g[1] || s != [p[1], 1] {
            return Err(shape_err(format!(
                "guide params {p:?}, {g:?}, {s:?} disagree on hidden size"
            )));
        }
        Ok(GuideParams { proj, guide, score })
    }

    pub fn hidden(&self) -> usize {
        self.proj.shape()[1]
    }

    pub(crate) fn bind(&self, g: &mut Graph, trainable: bool) -> GuideVars {
        GuideVars {
            proj: bind(g, &self.proj, trainable),
            guide: bind(g, &self.guide, trainable),
            score: bind(g, &self.score, trainable),
        }
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 3] {
        [&mut self.proj, &mut self.guide, &mut self.score]
    }
}

/// Both guidance directions; they do not share parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CollabParams {
    /// Static video feature guides the motion segments.
    pub to_motion: GuideParams,
    /// Motion video feature guides the static segments.
    pub to_static: GuideParams,
}

pub(crate) struct CollabVars {
    pub(crate) to_motion: GuideVars,
    pub(crate) to_static: GuideVars,
}

impl CollabVars {
    /// Same order as `CollabParams::tensors_mut`.
    pub(crate) fn all(&self) -> Vec<Var> {
        let (m, s) = (&self.to_motion, &self.to_static);
        vec![m.proj, m.guide, m.score, s.proj, s.guide, s.score]
    }
}

impl CollabParams {
    pub fn init<R: Rng>(rng: &mut R, dim: usize, hidden: usize) -> Self {
        CollabParams {
            to_motion: GuideParams::init(rng, dim, dim, hidden),
            to_static: GuideParams::init(rng, dim, dim, hidden),
        }
    }

    pub fn zeros(dim: usize, hidden: usize) -> Self {
        CollabParams {
            to_motion: GuideParams::zeros(dim, dim, hidden),
            to_static: GuideParams::zeros(dim, dim, hidden),
        }
    }

    pub(crate) fn bind(&self, g: &mut Graph, trainable: bool) -> CollabVars {
        CollabVars {
            to_motion: self.to_motion.bind(g, trainable),
            to_static: self.to_static.bind(g, trainable),
        }
    }

    pub(crate) fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("collab.to_motion.proj", &self.to_motion.proj),
            ("collab.to_motion.guide", &self.to_motion.guide),
            ("collab.to_motion.score", &self.to_motion.score),
            ("collab.to_static.proj", &self.to_static.proj),
            ("collab.to_static.guide", &self.to_static.guide),
            ("collab.to_static.score", &self.to_static.score),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let [a, b, c] = self.to_motion.tensors_mut();
        let [d, e, f] = self.to_static.tensors_mut();
        vec![a, b, c, d, e, f]
    }
}

/// Coefficients and merged video features after collaborative optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollabState {
    pub z_static: Vec<f64>,
    pub z_motion: Vec<f64>,
    pub o_static: Vec<f64>,
    pub o_motion: Vec<f64>,
    pub rounds: usize,
}

/// One guidance step over a batch: `targets [B, N, D]`, `guide [B, D_g]`.
/// Returns `(z [B, N], merged [B, D])`.
pub(crate) fn guide_graph(g: &mut Graph, targets: Var, guide: Var, p: &GuideVars) -> Result<(Var, Var)> {
    let ts = g.shape(targets).to_vec();
    let (b, n, d) = match ts.as_slice() {
        &[b, n, d] => (b, n, d),
        other => return Err(shape_err(format!("segment features {other:?}"))),
    };
    let k = *g.shape(p.proj).last().expect("2-d");
    let flat = g.reshape(targets, &[b * n, d])?;
    let projected = g.matmul(flat, p.proj)?;
    let projected = g.reshape(projected, &[b, n, k])?;
    let gp = g.matmul(guide, p.guide)?;
    let pre = g.add_broadcast(projected, gp, 1)?;
    let hidden = g.tanh(pre);
    let hidden = g.reshape(hidden, &[b * n, k])?;
    let scores = g.matmul(hidden, p.score)?;
    let scores = g.reshape(scores, &[b, n])?;
    let z = g.softmax(scores)?;
    let merged = attend_graph(g, targets, z)?;
    Ok((z, merged))
}

/// Graph outputs of a fixed number of collaborative rounds.
pub(crate) struct CollabOutputs {
    pub o_static: Var,
    pub o_motion: Var,
}

/// Unrolls `rounds` alternations starting from uniform static coefficients.
pub(crate) fn collab_graph(
    g: &mut Graph,
    v_static: Var,
    v_motion: Var,
    vars: &CollabVars,
    rounds: usize,
) -> Result<CollabOutputs> {
    if rounds == 0 {
        return Err(Error::BadConfig("at least one collaborative round".into()));
    }
    let s = g.shape(v_static).to_vec();
    let (b, n) = (s[0], s[1]);
    let uniform = g.constant_from(&[b, n], vec![1.0 / n as f64; b * n])?;
    let mut o_static = attend_graph(g, v_static, uniform)?;
    let mut o_motion = o_static;
    for _ in 0..rounds {
        let (_, om) = guide_graph(g, v_motion, o_static, &vars.to_motion)?;
        let (_, os) = guide_graph(g, v_static, om, &vars.to_static)?;
        o_motion = om;
        o_static = os;
    }
    Ok(CollabOutputs { o_static, o_motion })
}

/// `H = tanh(W V + (W_o O) 1^T)`, `z = softmax(w_h^T H)`, `O' = V z`.
pub fn guide_step(targets: &StreamFeatures, guide: &[f64], params: &GuideParams) -> Result<(Vec<f64>, Vec<f64>)> {
    if params.proj.shape()[0] != targets.dim() || params.guide.shape()[0] != guide.len() {
        return Err(shape_err(format!(
            "guide params {:?}/{:?} for targets of dim {} and guide of dim {}",
            params.proj.shape(),
            params.guide.shape(),
            targets.dim(),
            guide.len()
        )));
    }
    if guide.iter().any(|v| !v.is_finite()) {
        return Err(Error::BadConfig("non-finite guide feature".into()));
    }
    let mut g = Graph::new();
    let v = g.constant_from(&[1, targets.count(), targets.dim()], targets.flat())?;
    let o = g.constant_from(&[1, guide.len()], guide.to_vec())?;
    let vars = params.bind(&mut g, false);
    let (z, merged) = guide_graph(&mut g, v, o, &vars)?;
    Ok((g.value(z).to_vec(), g.value(merged).to_vec()))
}

/// Alternating optimization from uniform static coefficients; stops after
/// `max_rounds` or once neither coefficient vector moves by `1e-6`.
pub fn collaborative_optimize(
    v_static: &StreamFeatures,
    v_motion: &StreamFeatures,
    params: &CollabParams,
    max_rounds: usize,
) -> Result<CollabState> {
    if max_rounds == 0 {
        return Err(Error::BadConfig("max_rounds must be at least 1".into()));
    }
    let ns = v_static.count();
    let nm = v_motion.count();
    let mut z_static = vec![1.0 / ns as f64; ns];
    let mut z_motion = vec![1.0 / nm as f64; nm];
    let mut o_static = merge(v_static, &z_static);
    let mut o_motion = merge(v_motion, &z_motion);
    let mut rounds = 0;
    while rounds < max_rounds {
        let (zm, om) = guide_step(v_motion, &o_static, &params.to_motion)?;
        let (zs, os) = guide_step(v_static, &om, &params.to_static)?;
        let change = max_abs_diff(&zm, &z_motion).max(max_abs_diff(&zs, &z_static));
        z_motion = zm;
        o_motion = om;
        z_static = zs;
        o_static = os;
        rounds += 1;
        if change < COLLAB_TOLERANCE {
            break;
        }
    }
    Ok(CollabState {
        z_static,
        z_motion,
        o_static,
        o_motion,
        rounds,
    })
}

fn merge(v: &StreamFeatures, z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.dim()];
    for (seg, &w) in v.segments().iter().zip(z) {
        for (o, x) in out.iter_mut().zip(seg) {
            *o += w * x;
        }
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Softmax classifiers over the two merged video features.
#[derive(Debug, Clone, PartialEq)]
pub struct CollabHeads {
    pub static_weights: Tensor,
    pub static_bias: Tensor,
    pub motion_weights: Tensor,
    pub motion_bias: Tensor,
}

pub(crate) struct CollabHeadVars {
    pub static_weights: Var,
    pub static_bias: Var,
    pub motion_weights: Var,
    pub motion_bias: Var,
}

impl CollabHeadVars {
    pub(crate) fn all(&self) -> Vec<Var> {
        vec![
            self.static_weights,
            self.static_bias,
            self.motion_weights,
            self.motion_bias,
        ]
    }
}

impl CollabHeads {
    pub fn init<R: Rng>(rng: &mut R, dim: usize, classes: usize) -> Self {
        CollabHeads {
            static_weights: uniform_tensor(rng, &[dim, classes], 0.08),
            static_bias: Tensor::zeros(&[classes]),
            motion_weights: uniform_tensor(rng, &[dim, classes], 0.08),
            motion_bias: Tensor::zeros(&[classes]),
        }
    }

    pub fn zeros(dim: usize, classes: usize) -> Self {
        CollabHeads {
            static_weights: Tensor::zeros(&[dim, classes]),
            static_bias: Tensor::zeros(&[classes]),
            motion_weights: Tensor::zeros(&[dim, classes]),
            motion_bias: Tensor::zeros(&[classes]),
        }
    }

    pub(crate) fn bind(&self, g: &mut Graph, trainable: bool) -> CollabHeadVars {
        CollabHeadVars {
            static_weights: bind(g, &self.static_weights, trainable),
            static_bias: bind(g, &self.static_bias, trainable),
            motion_weights: bind(g, &self.motion_weights, trainable),
            motion_bias: bind(g, &self.motion_bias, trainable),
        }
    }

    pub(crate) fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("collab_heads.static_weights", &self.static_weights),
            ("collab_heads.static_bias", &self.static_bias),
            ("collab_heads.motion_weights", &self.motion_weights),
            ("collab_heads.motion_bias", &self.motion_bias),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.static_weights,
            &mut self.static_bias,
            &mut self.motion_weights,
            &mut self.motion_bias,
        ]
    }
}

/// Class probabilities of the static and motion heads for one state.
pub fn collab_heads(state: &CollabState, heads: &CollabHeads) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut g = Graph::new();
    let v = heads.bind(&mut g, false);
    let os = g.constant_from(&[1, state.o_static.len()], state.o_static.clone())?;
    let om = g.constant_from(&[1, state.o_motion.len()], state.o_motion.clone())?;
    let ps = linear_softmax_graph(&mut g, os, v.static_weights, v.static_bias)?;
    let pm = linear_softmax_graph(&mut g, om, v.motion_weights, v.motion_bias)?;
    Ok((g.value(ps).to_vec(), g.value(pm).to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_features(rng: &mut ChaCha8Rng, n: usize, d: usize, stream: StreamTag) -> StreamFeatures {
        StreamFeatures::new(
            (0..n)
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
            stream,
        )
        .unwrap()
    }

    fn big_params(rng: &mut ChaCha8Rng, d: usize, k: usize) -> GuideParams {
        GuideParams::new(
            uniform_tensor(rng, &[d, k], 1.0),
            uniform_tensor(rng, &[d, k], 1.0),
            uniform_tensor(rng, &[k, 1], 1.5),
        )
        .unwrap()
    }

    /// Direct evaluation of the three guidance equations with k x D matrices
    /// in column-vector form.
    fn oracle_guide(v: &StreamFeatures, o: &[f64], p: &GuideParams) -> (Vec<f64>, Vec<f64>) {
        let k = p.hidden();
        let (d, dg) = (v.dim(), o.len());
        let w = |i: usize, j: usize| p.proj.data()[j * k + i];
        let wo = |i: usize, j: usize| p.guide.data()[j * k + i];
        let guide: Vec<f64> = (0..k).map(|i| (0..dg).map(|j| wo(i, j) * o[j]).sum()).collect();
        let scores: Vec<f64> = v
            .segments()
            .iter()
            .map(|col| {
                (0..k)
                    .map(|i| {
                        let h = ((0..d).map(|j| w(i, j) * col[j]).sum::<f64>() + guide[i]).tanh();
                        p.score.data()[i] * h
                    })
                    .sum()
            })
            .collect();
        let total: f64 = scores.iter().map(|s| s.exp()).sum();
        let z: Vec<f64> = scores.iter().map(|s| s.exp() / total).collect();
        let merged = (0..d)
            .map(|j| v.segments().iter().zip(&z).map(|(c, zi)| zi * c[j]).sum())
            .collect();
        (z, merged)
    }

    #[test]
    fn zero_params_give_uniform_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_features(&mut rng, 4, 3, StreamTag::Motion);
        let (z, o) = guide_step(&v, &[0.5, 0.1, -0.3], &GuideParams::zeros(3, 3, 2)).unwrap();
        assert!(z.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        for d in 0..3 {
            let mean = v.segments().iter().map(|s| s[d]).sum::<f64>() / 4.0;
            assert!((o[d] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn single_segment_is_returned_verbatim() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = random_features(&mut rng, 1, 3, StreamTag::Static);
        let p = big_params(&mut rng, 3, 2);
        let (z, o) = guide_step(&v, &[1.0, -1.0, 2.0], &p).unwrap();
        assert_eq!(z, vec![1.0]);
        assert_eq!(o, v.segments()[0]);
    }

    #[test]
    fn guide_matches_equation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_features(&mut rng, 4, 3, StreamTag::Motion);
        let p = big_params(&mut rng, 3, 2);
        let o = [0.7, -0.4, 1.1];
        let (z, m) = guide_step(&v, &o, &p).unwrap();
        let (zo, mo) = oracle_guide(&v, &o, &p);
        for (a, b) in z.iter().zip(&zo).chain(m.iter().zip(&mo)) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn guide_shape_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_features(&mut rng, 4, 3, StreamTag::Motion);
        let p = big_params(&mut rng, 2, 2);
        assert_eq!(guide_step(&v, &[0.0; 3], &p).unwrap_err().category(), "shape-mismatch");
    }

    #[test]
    fn zero_params_reach_fixed_point_in_one_round() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vs = random_features(&mut rng, 5, 3, StreamTag::Static);
        let vm = random_features(&mut rng, 5, 3, StreamTag::Motion);
        let params = CollabParams::zeros(3, 2);
        let st = collaborative_optimize(&vs, &vm, &params, 10).unwrap();
        assert_eq!(st.rounds, 1);
        assert!(st.z_static.iter().chain(&st.z_motion).all(|&z| (z - 0.2).abs() < 1e-15));
        let again = collaborative_optimize(&vs, &vm, &params, 1).unwrap();
        assert_eq!(st, again);
    }

    #[test]
    fn single_segment_streams_converge_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vs = random_features(&mut rng, 1, 3, StreamTag::Static);
        let vm = random_features(&mut rng, 1, 3, StreamTag::Motion);
        let params = CollabParams {
            to_motion: big_params(&mut rng, 3, 2),
            to_static: big_params(&mut rng, 3, 2),
        };
        let st = collaborative_optimize(&vs, &vm, &params, 5).unwrap();
        assert_eq!(st.rounds, 1);
        assert_eq!(st.z_static, vec![1.0]);
        assert_eq!(st.z_motion, vec![1.0]);
    }

    #[test]
    fn three_rounds_match_unrolled_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let vs = random_features(&mut rng, 4, 3, StreamTag::Static);
        let vm = random_features(&mut rng, 4, 3, StreamTag::Motion);
        let params = CollabParams {
            to_motion: big_params(&mut rng, 3, 2),
            to_static: big_params(&mut rng, 3, 2),
        };
        let st = collaborative_optimize(&vs, &vm, &params, 3).unwrap();
        assert_eq!(st.rounds, 3);

        let mut zs = vec![0.25; 4];
        let mut zm = vec![0.0; 4];
        let mut om = vec![0.0; 3];
        let mut os = vec![0.0; 3];
        for _ in 0..3 {
            let o: Vec<f64> = (0..3)
                .map(|d| vs.segments().iter().zip(&zs).map(|(c, z)| z * c[d]).sum())
                .collect();
            (zm, om) = oracle_guide(&vm, &o, &params.to_motion);
            (zs, os) = oracle_guide(&vs, &om, &params.to_static);
        }
        let pairs = [
            (&st.z_static, &zs),
            (&st.z_motion, &zm),
            (&st.o_static, &os),
            (&st.o_motion, &om),
        ];
        for (got, want) in pairs {
            for (a, b) in got.iter().zip(want) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn segmenting_chunks_and_averages() {
        let frames: Vec<Vec<f64>> = (0..5).map(|t| vec![t as f64]).collect();
        let s = segment_features(&frames, 2).unwrap();
        // chunks [0, 2) and [2, 5)
        assert_eq!(s, vec![vec![0.5], vec![3.0]]);
        let same = segment_features(&frames, 8).unwrap();
        assert_eq!(same, frames);
    }

    #[test]
    fn heads_examples() {
        let state = CollabState {
            z_static: vec![1.0],
            z_motion: vec![1.0],
            o_static: vec![0.3, -0.2],
            o_motion: vec![1.0, 2.0],
            rounds: 1,
        };
        let (ps, pm) = collab_heads(&state, &CollabHeads::zeros(2, 4)).unwrap();
        assert!(ps.iter().chain(&pm).all(|&p| (p - 0.25).abs() < 1e-15));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (ps, pm) = collab_heads(&state, &CollabHeads::init(&mut rng, 2, 1)).unwrap();
        assert_eq!((ps, pm), (vec![1.0], vec![1.0]));

        let heads = CollabHeads::init(&mut rng, 2, 3);
        let (ps, _) = collab_heads(&state, &heads).unwrap();
        let logits: Vec<f64> = (0..3)
            .map(|c| {
                heads.static_bias.data()[c]
                    + state.o_static[0] * heads.static_weights.data()[c]
                    + state.o_static[1] * heads.static_weights.data()[3 + c]
            })
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for (p, l) in ps.iter().zip(&logits) {
            assert!((p - l.exp() / z).abs() < 1e-15);
        }
        let bad = CollabHeads::zeros(3, 3);
        assert!(collab_heads(&state, &bad).is_err());
    }
}
