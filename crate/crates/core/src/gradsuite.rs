//! Central-difference checks of every differentiable graph operation and of
//! the composed spatial, temporal and collaborative chains.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::collab::{collab_graph, CollabVars, GuideVars};
use crate::error::Result;
use crate::spatial::{
    cam_activations_graph, cam_maps_graph, normalize_attention_graph, weighted_pool_graph, SpatialVars,
};
use crate::temporal::{
    affinity_graph, attend_graph, linear_softmax_graph, lstm_graph, temporal_scores_graph, LstmVars,
};
use crate::tensor::{finite_diff_check, Graph, Tensor, Var};

pub const GRAD_EPS: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Worst relative error of one function with respect to one input.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCase {
    pub name: String,
    pub max_error: f64,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.max_error <= GRAD_TOLERANCE
    }
}

type Chain = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], range: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-range..range)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// `sum(out * r)` for a fixed random `r`, turning any output into a scalar
/// whose gradient exercises every output element.
fn project(g: &mut Graph, out: Var, r: &[f64]) -> Result<Var> {
    let n = r.len();
    let flat = g.reshape(out, &[1, n])?;
    let w = g.constant_from(&[1, n], r.to_vec())?;
    let prod = g.mul(flat, w)?;
    g.sum_axis(prod, 1)
}

/// One case per input: differentiate with respect to input `i` while the
/// other inputs are constants.
fn check_inputs(name: &str, inputs: &[Tensor], f: &Chain, out: &mut Vec<GradCase>) -> Result<()> {
    for i in 0..inputs.len() {
        let err = finite_diff_check(
            |g, v| {
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| if j == i { v } else { g.constant(t.clone()) })
                    .collect();
                f(g, &vars)
            },
            &inputs[i],
            GRAD_EPS,
        )?;
        out.push(GradCase {
            name: format!("{name}[{i}]"),
            max_error: err,
        });
    }
    Ok(())
}

/// Wraps an op with a random projection of its output.
fn op(out_len: usize, rng: &mut ChaCha8Rng, f: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static) -> Chain {
    let r: Vec<f64> = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();
    Box::new(move |g, v| {
        let y = f(g, v)?;
        project(g, y, &r)
    })
}

fn op_cases(rng: &mut ChaCha8Rng) -> Result<Vec<(&'static str, Vec<Tensor>, Chain)>> {
    let a = random(rng, &[2, 3], 1.0);
    let b = random(rng, &[2, 3], 1.0);
    let mut cases: Vec<(&'static str, Vec<Tensor>, Chain)> = vec![
        ("add", vec![a.clone(), b.clone()], op(6, rng, |g, v| g.add(v[0], v[1]))),
        ("sub", vec![a.clone(), b.clone()], op(6, rng, |g, v| g.sub(v[0], v[1]))),
        ("mul", vec![a.clone(), b.clone()], op(6, rng, |g, v| g.mul(v[0], v[1]))),
        ("scale", vec![a.clone()], op(6, rng, |g, v| Ok(g.scale(v[0], -1.7)))),
        ("tanh", vec![a.clone()], op(6, rng, |g, v| Ok(g.tanh(v[0])))),
        ("sigmoid", vec![a.clone()], op(6, rng, |g, v| Ok(g.sigmoid(v[0])))),
        ("exp", vec![a.clone()], op(6, rng, |g, v| Ok(g.exp(v[0])))),
        ("softmax", vec![a.clone()], op(6, rng, |g, v| g.softmax(v[0]))),
        ("transpose", vec![a.clone()], op(6, rng, |g, v| g.transpose(v[0]))),
        ("reshape", vec![a.clone()], op(6, rng, |g, v| g.reshape(v[0], &[3, 2]))),
        ("sum_axis", vec![a.clone()], op(3, rng, |g, v| g.sum_axis(v[0], 0))),
        ("mean_axis", vec![a.clone()], op(2, rng, |g, v| g.mean_axis(v[0], 1))),
        ("narrow", vec![a.clone()], op(4, rng, |g, v| g.narrow(v[0], 1, 1, 2))),
        ("pick", vec![a.clone()], op(2, rng, |g, v| g.pick(v[0], &[2, 0]))),
        (
            "concat",
            vec![a.clone(), b.clone()],
            op(12, rng, |g, v| g.concat(&[v[0], v[1]], 1)),
        ),
        (
            "add_bias",
            vec![a.clone(), random(rng, &[3], 1.0)],
            op(6, rng, |g, v| g.add_bias(v[0], v[1])),
        ),
        (
            "matmul",
            vec![a.clone(), random(rng, &[3, 4], 1.0)],
            op(8, rng, |g, v| g.matmul(v[0], v[1])),
        ),
    ];
    let x3 = random(rng, &[2, 3, 4], 1.0);
    cases.push((
        "permute",
        vec![x3.clone()],
        op(24, rng, |g, v| g.permute(v[0], &[2, 0, 1])),
    ));
    cases.push((
        "add_broadcast",
        vec![x3.clone(), random(rng, &[2, 4], 1.0)],
        op(24, rng, |g, v| g.add_broadcast(v[0], v[1], 1)),
    ));
    cases.push((
        "bmm",
        vec![x3, random(rng, &[2, 4, 2], 1.0)],
        op(12, rng, |g, v| g.bmm(v[0], v[1])),
    ));
    cases.push((
        "conv2d_3x3",
        vec![
            random(rng, &[2, 3, 3, 2], 1.0),
            random(rng, &[3, 3, 2, 3], 0.5),
            random(rng, &[3], 0.5),
        ],
        op(54, rng, |g, v| g.conv2d_3x3(v[0], v[1], v[2])),
    ));
    cases.push((
        "cross_entropy",
        vec![positive(rng, &[3, 4])],
        Box::new(|g, v| g.cross_entropy(v[0], &[1, 3, 0])),
    ));
    Ok(cases)
}

/// conv -> tanh -> CAM -> normalized attention -> weighted pool -> head -> CE.
fn spatial_chain(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Chain) {
    let (frames, h, w, k, kc, c) = (2, 3, 3, 2, 3, 3);
    let labels: Vec<usize> = (0..frames).map(|_| rng.random_range(0..c)).collect();
    let inputs = vec![
        random(rng, &[frames, h, w, k], 1.0),
        random(rng, &[3, 3, k, kc], 0.5),
        random(rng, &[kc], 0.5),
        random(rng, &[kc, c], 1.0),
        random(rng, &[k, c], 1.0),
        random(rng, &[c], 0.5),
    ];
    let chain: Chain = Box::new(move |g, v| {
        let vars = SpatialVars {
            kernels: v[1],
            cam_bias: v[2],
            weights: v[3],
            bias: v[5],
        };
        let acts = cam_activations_graph(g, v[0], &vars)?;
        let acts = g.reshape(acts, &[frames, h * w, kc])?;
        let maps = cam_maps_graph(g, acts, vars.weights, &labels)?;
        let attn = normalize_attention_graph(g, maps)?;
        let x = g.reshape(v[0], &[frames, h * w, k])?;
        let pooled = weighted_pool_graph(g, x, attn)?;
        let p = linear_softmax_graph(g, pooled, v[4], v[5])?;
        g.cross_entropy(p, &labels)
    });
    (inputs, chain)
}

/// LSTM -> affinity -> column sums -> softmax-attended frames -> head -> CE.
fn temporal_chain(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Chain) {
    let (b, t, d, n, c) = (2, 3, 3, 4, 3);
    let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
    let inputs = vec![
        random(rng, &[b, t, d], 1.0),
        random(rng, &[d, 4 * n], 0.5),
        random(rng, &[n, 4 * n], 0.5),
        random(rng, &[4 * n], 0.5),
        random(rng, &[d, c], 1.0),
        random(rng, &[c], 0.5),
    ];
    let chain: Chain = Box::new(move |g, v| {
        let vars = LstmVars {
            w_input: v[1],
            w_hidden: v[2],
            bias: v[3],
        };
        let hidden = lstm_graph(g, v[0], &vars)?;
        let aff = affinity_graph(g, hidden)?;
        let gamma = temporal_scores_graph(g, aff)?;
        let p = g.softmax(gamma)?;
        let pooled = attend_graph(g, v[0], p)?;
        let probs = linear_softmax_graph(g, pooled, v[4], v[5])?;
        g.cross_entropy(probs, &labels)
    });
    (inputs, chain)
}

/// Two unrolled collaborative rounds -> both heads -> summed CE.
fn collab_chain(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Chain) {
    let (b, n, d, k, c) = (2, 3, 3, 4, 3);
    let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
    let mut inputs = vec![random(rng, &[b, n, d], 1.0), random(rng, &[b, n, d], 1.0)];
    for _ in 0..2 {
        inputs.push(random(rng, &[d, k], 0.7));
        inputs.push(random(rng, &[d, k], 0.7));
        inputs.push(random(rng, &[k, 1], 0.7));
    }
    inputs.push(random(rng, &[d, c], 1.0));
    inputs.push(random(rng, &[d, c], 1.0));
    let chain: Chain = Box::new(move |g, v| {
        let guide = |i: usize| GuideVars {
            proj: v[i],
            guide: v[i + 1],
            score: v[i + 2],
        };
        let vars = CollabVars {
            to_motion: guide(2),
            to_static: guide(5),
        };
        let out = collab_graph(g, v[0], v[1], &vars, 2)?;
        let zero = g.constant(Tensor::zeros(&[c]));
        let ps = linear_softmax_graph(g, out.o_static, v[8], zero)?;
        let pm = linear_softmax_graph(g, out.o_motion, v[9], zero)?;
        let ls = g.cross_entropy(ps, &labels)?;
        let lm = g.cross_entropy(pm, &labels)?;
        g.add(ls, lm)
    });
    (inputs, chain)
}

/// Runs every op and chain check for one seed.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, inputs, f) in op_cases(&mut rng)? {
        check_inputs(name, &inputs, &f, &mut out)?;
    }
    for (name, (inputs, f)) in [
        ("spatial_chain", spatial_chain(&mut rng)),
        ("temporal_chain", temporal_chain(&mut rng)),
        ("collab_chain", collab_chain(&mut rng)),
    ] {
        check_inputs(name, &inputs, &f, &mut out)?;
    }
    Ok(out)
}
