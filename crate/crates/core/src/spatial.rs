//! Spatial-level attention: class activation maps over the CAM conv layer,
//! their normalization into attention maps, and attention-weighted pooling.
//!
//! Batched graph versions (`*_graph`) operate on `F` frames at once and are
//! what the training loop records; the plain functions are thin wrappers that
//! run the same ops on a single grid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Which input stream a grid or model belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamTag {
    Static,
    Motion,
}

impl StreamTag {
    pub fn as_str(self) -> &'static str {
        match self {
            StreamTag::Static => "static",
            StreamTag::Motion => "motion",
        }
    }

    pub fn index(self) -> usize {
        match self {
            StreamTag::Static => 0,
            StreamTag::Motion => 1,
        }
    }
}

impl std::str::FromStr for StreamTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(StreamTag::Static),
            "motion" => Ok(StreamTag::Motion),
            other => Err(Error::BadConfig(format!("unknown stream {other:?}"))),
        }
    }
}

/// `height x width` cells, each with `channels` activations, stored
/// row-major as `[y][x][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationGrid {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl ActivationGrid {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(shape_err(format!(
                "grid dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if values.len() != height * width * channels {
            return Err(shape_err(format!(
                "{height}x{width}x{channels} grid needs {} values, got {}",
                height * width * channels,
                values.len()
            )));
        }
        Ok(ActivationGrid {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        ActivationGrid {
            height,
            width,
            channels,
            values: vec![0.0; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of spatial cells `g`.
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn cell(&self, index: usize) -> &[f64] {
        &self.values[index * self.channels..(index + 1) * self.channels]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.height, self.width, self.channels], self.values.clone()).expect("grid invariants hold")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            &[h, w, k] => Self::new(h, w, k, t.data().to_vec()),
            other => Err(shape_err(format!("expected a 3-d grid tensor, got {other:?}"))),
        }
    }
}

/// Normalized spatial attention: nonnegative, summing to the cell count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub values: Vec<f64>,
    pub class_id: usize,
}

impl AttentionMap {
    /// All-ones map, i.e. attention switched off.
    pub fn uniform(cells: usize) -> Self {
        AttentionMap {
            values: vec![1.0; cells],
            class_id: 0,
        }
    }
}

/// CAM conv layer followed by the GAP softmax classifier whose weights
/// define the class activation maps.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialHead {
    /// `[3, 3, in_channels, cam_channels]`
    pub cam_kernels: Tensor,
    /// `[cam_channels]`
    pub cam_bias: Tensor,
    /// `[cam_channels, classes]`; column `c` holds `w_k^c`.
    pub classifier_weights: Tensor,
    /// `[classes]`
    pub classifier_bias: Tensor,
}

pub(crate) struct SpatialVars {
    pub kernels: Var,
    pub cam_bias: Var,
    pub weights: Var,
    pub bias: Var,
}

impl SpatialVars {
    /// Same order as `SpatialHead::tensors_mut`.
    pub(crate) fn all(&self) -> Vec<Var> {
        vec![self.kernels, self.cam_bias, self.weights, self.bias]
    }
}

pub(crate) fn bind(g: &mut Graph, t: &Tensor, trainable: bool) -> Var {
    if trainable {
        g.param(t)
    } else {
        g.constant(t.clone())
    }
}

pub(crate) fn uniform_tensor<R: Rng>(rng: &mut R, shape: &[usize], range: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-range..range)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

impl SpatialHead {
    pub fn new(
        cam_kernels: Tensor,
        cam_bias: Tensor,
        classifier_weights: Tensor,
        classifier_bias: Tensor,
    ) -> Result<Self> {
        let ks = cam_kernels.shape();
        if ks.len() != 4 || ks[0] != 3 || ks[1] != 3 {
            return Err(shape_err(format!("CAM kernels must be 3x3xKxK', got {ks:?}")));
        }
        let kc = ks[3];
        let ws = classifier_weights.shape();
        if cam_bias.shape() != [kc] || ws.len() != 2 || ws[0] != kc || classifier_bias.shape() != [ws[1]] {
            return Err(shape_err(format!(
                "inconsistent spatial head: kernels {ks:?}, cam bias {:?}, weights {ws:?}, bias {:?}",
                cam_bias.shape(),
                classifier_bias.shape()
            )));
        }
        Ok(SpatialHead {
            cam_kernels,
            cam_bias,
            classifier_weights,
            classifier_bias,
        })
    }

    pub fn init<R: Rng>(rng: &mut R, in_channels: usize, cam_channels: usize, classes: usize) -> Self {
        SpatialHead {
            cam_kernels: uniform_tensor(rng, &[3, 3, in_channels, cam_channels], 0.08),
            cam_bias: Tensor::zeros(&[cam_channels]),
            classifier_weights: uniform_tensor(rng, &[cam_channels, classes], 0.08),
            classifier_bias: Tensor::zeros(&[classes]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.cam_kernels.shape()[2]
    }

    pub fn cam_channels(&self) -> usize {
        self.classifier_weights.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.classifier_weights.shape()[1]
    }

    pub(crate) fn bind(&self, g: &mut Graph, trainable: bool) -> SpatialVars {
        SpatialVars {
            kernels: bind(g, &self.cam_kernels, trainable),
            cam_bias: bind(g, &self.cam_bias, trainable),
            weights: bind(g, &self.classifier_weights, trainable),
            bias: bind(g, &self.classifier_bias, trainable),
        }
    }

    pub(crate) fn tensors(&self) -> [(&'static str, &Tensor); 4] {
        [
            ("spatial.cam_kernels", &self.cam_kernels),
            ("spatial.cam_bias", &self.cam_bias),
            ("spatial.classifier_weights", &self.classifier_weights),
            ("spatial.classifier_bias", &self.classifier_bias),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.cam_kernels,
            &mut self.cam_bias,
            &mut self.classifier_weights,
            &mut self.classifier_bias,
        ]
    }

    /// CAM conv layer output `a_k(x, y) = tanh(conv3x3(input))`.
    pub fn activations(&self, input: &ActivationGrid) -> Result<ActivationGrid> {
        let mut g = Graph::new();
        let x = g.constant(input.to_tensor());
        let vars = self.bind(&mut g, false);
        let a = cam_activations_graph(&mut g, x, &vars)?;
        ActivationGrid::from_tensor(&g.tensor(a))
    }
}

/// `tanh(conv3x3(x))` for `x` of shape `[.., h, w, k_in]`.
pub(crate) fn cam_activations_graph(g: &mut Graph, x: Var, vars: &SpatialVars) -> Result<Var> {
    let conv = g.conv2d_3x3(x, vars.kernels, vars.cam_bias)?;
    Ok(g.tanh(conv))
}

/// GAP classifier logits for CAM activations `[F, g, K]` -> `[F, C]`.
pub(crate) fn spatial_logits_graph(g: &mut Graph, acts: Var, weights: Var, bias: Var) -> Result<Var> {
    let pooled = g.mean_axis(acts, 1)?;
    let logits = g.matmul(pooled, weights)?;
    g.add_bias(logits, bias)
}

/// Raw class activation maps `m_c` for CAM activations `[F, g, K]`, one class
/// per frame. Returns `[F, g]`.
pub(crate) fn cam_maps_graph(g: &mut Graph, acts: Var, weights: Var, classes: &[usize]) -> Result<Var> {
    let shape = g.shape(acts).to_vec();
    let (frames, cells, k) = match shape.as_slice() {
        &[f, c, k] => (f, c, k),
        other => return Err(shape_err(format!("CAM activations {other:?}"))),
    };
    if classes.len() != frames {
        return Err(shape_err(format!("{} classes for {frames} frames", classes.len())));
    }
    let flat = g.reshape(acts, &[frames * cells, k])?;
    let all = g.matmul(flat, weights)?;
    let per_cell: Vec<usize> = classes.iter().flat_map(|&c| std::iter::repeat_n(c, cells)).collect();
    let picked = g.pick(all, &per_cell)?;
    g.reshape(picked, &[frames, cells])
}

/// `g * softmax(m)` over the last axis.
pub(crate) fn normalize_attention_graph(g: &mut Graph, maps: Var) -> Result<Var> {
    let cells = *g.shape(maps).last().ok_or(Error::EmptyVector)?;
    let sm = g.softmax(maps)?;
    Ok(g.scale(sm, cells as f64))
}

/// `(1/g) * sum_cells attn * features` for features `[F, g, D]`, attention `[F, g]`.
pub(crate) fn weighted_pool_graph(g: &mut Graph, features: Var, attn: Var) -> Result<Var> {
    let fs = g.shape(features).to_vec();
    let (frames, cells, dim) = match fs.as_slice() {
        &[f, c, d] => (f, c, d),
        other => return Err(shape_err(format!("pool features {other:?}"))),
    };
    if g.shape(attn) != [frames, cells] {
        return Err(shape_err(format!("attention {:?} for features {fs:?}", g.shape(attn))));
    }
    let a = g.reshape(attn, &[frames, 1, cells])?;
    let pooled = g.bmm(a, features)?;
    let pooled = g.reshape(pooled, &[frames, dim])?;
    Ok(g.scale(pooled, 1.0 / cells as f64))
}

/// Raw map `m_c(x, y) = sum_k w_k^c a_k(x, y)` and the score `s_c = sum m_c`.
pub fn cam_map(grid: &ActivationGrid, head: &SpatialHead, class: usize) -> Result<(Vec<f64>, f64)> {
    if class >= head.classes() {
        return Err(Error::BadClass {
            class,
            classes: head.classes(),
        });
    }
    check_channels(grid, head)?;
    let mut g = Graph::new();
    let acts = g.constant_from(&[1, grid.cells(), grid.channels()], grid.values().to_vec())?;
    let w = g.constant(head.classifier_weights.clone());
    let m = cam_maps_graph(&mut g, acts, w, &[class])?;
    let map = g.value(m).to_vec();
    let score = map.iter().sum();
    Ok((map, score))
}

/// `m~ = g * exp(m) / sum exp(m)`.
pub fn normalize_attention(map: &[f64], class_id: usize) -> Result<AttentionMap> {
    if map.is_empty() {
        return Err(Error::EmptyVector);
    }
    if let Some(bad) = map.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFiniteFunction(*bad));
    }
    let mut g = Graph::new();
    let m = g.constant_from(&[1, map.len()], map.to_vec())?;
    let n = normalize_attention_graph(&mut g, m)?;
    Ok(AttentionMap {
        values: g.value(n).to_vec(),
        class_id,
    })
}

/// Attention-weighted average over cells of a `D`-channel feature grid.
pub fn weighted_pool(features: &ActivationGrid, attn: &AttentionMap) -> Result<Vec<f64>> {
    if attn.values.len() != features.cells() {
        return Err(shape_err(format!(
            "attention over {} cells for a grid of {}",
            attn.values.len(),
            features.cells()
        )));
    }
    let mut g = Graph::new();
    let f = g.constant_from(&[1, features.cells(), features.channels()], features.values().to_vec())?;
    let a = g.constant_from(&[1, features.cells()], attn.values.clone())?;
    let p = weighted_pool_graph(&mut g, f, a)?;
    Ok(g.value(p).to_vec())
}

/// Class logits `sum_k w_k^c GAP(a_k) + b_c` for a CAM activation grid.
pub fn spatial_forward(grid: &ActivationGrid, head: &SpatialHead) -> Result<Vec<f64>> {
    check_channels(grid, head)?;
    let mut g = Graph::new();
    let acts = g.constant_from(&[1, grid.cells(), grid.channels()], grid.values().to_vec())?;
    let w = g.constant(head.classifier_weights.clone());
    let b = g.constant(head.classifier_bias.clone());
    let l = spatial_logits_graph(&mut g, acts, w, b)?;
    Ok(g.value(l).to_vec())
}

fn check_channels(grid: &ActivationGrid, head: &SpatialHead) -> Result<()> {
    if grid.channels() != head.cam_channels() {
        return Err(shape_err(format!(
            "grid has {} channels, classifier expects {}",
            grid.channels(),
            head.cam_channels()
        )));
    }
    Ok(())
}

/// Index of the largest value; ties go to the smaller index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
