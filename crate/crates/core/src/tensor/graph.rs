use super::Tensor;
use crate::error::{shape_err, Error, Result};

/// Probabilities below this are clipped inside the cross-entropy log.
pub const CE_CLIP: f64 = 1e-12;

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    /// `y` is broadcast along the middle axis of `x` viewed as `[outer, mid, inner]`.
    AddBroadcast {
        x: usize,
        y: usize,
        outer: usize,
        mid: usize,
        inner: usize,
    },
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Bmm {
        a: usize,
        b: usize,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Reshape(usize),
    /// `out[j] = x[src[j]]`; covers permutes, slices and per-row picks.
    Gather {
        x: usize,
        src: Vec<usize>,
    },
    SumAxis {
        x: usize,
        outer: usize,
        mid: usize,
        inner: usize,
    },
    Softmax {
        x: usize,
        cols: usize,
    },
    Concat {
        parts: Vec<(usize, usize)>,
        outer: usize,
        inner: usize,
    },
    Conv3x3 {
        x: usize,
        k: usize,
        b: usize,
        batch: usize,
        h: usize,
        w: usize,
        ci: usize,
        co: usize,
    },
    CrossEntropy {
        p: usize,
        labels: Vec<usize>,
        cols: usize,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Operation tape for reverse-mode differentiation.
///
/// Every op validates shapes and returns `shape-mismatch` on failure. Nodes
/// built only from constants are never visited by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    pub fn constant_from(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), data)?;
        Ok(self.constant(t))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shapes are validated")
    }

    /// Gradient of the last [`Graph::backward`] target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.ng(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), value, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).iter().map(|&x| x * s).collect();
        let ng = self.ng(&[a]);
        self.push(self.shape(a).to_vec(), value, Op::Scale(a.0, s), ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        let ng = self.ng(&[a]);
        self.push(self.shape(a).to_vec(), value, op, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a.0))
    }

    /// Adds `y` to every slice of `x` along `axis`; `y` has the shape of `x`
    /// with `axis` removed.
    pub fn add_broadcast(&mut self, x: Var, y: Var, axis: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() {
            return Err(shape_err(format!("axis {axis} out of range for {xs:?}")));
        }
        let mut expect = xs.clone();
        expect.remove(axis);
        let ys = self.shape(y);
        if ys != expect.as_slice() && !(expect.is_empty() && ys == [1]) {
            return Err(shape_err(format!("broadcast {ys:?} along axis {axis} of {xs:?}")));
        }
        let (outer, mid, inner) = split_axis(&xs, axis);
        let xv = self.value(x);
        let yv = self.value(y);
        let mut value = Vec::with_capacity(xv.len());
        for o in 0..outer {
            for m in 0..mid {
                let base = (o * mid + m) * inner;
                let yb = o * inner;
                for i in 0..inner {
                    value.push(xv[base + i] + yv[yb + i]);
                }
            }
        }
        let ng = self.ng(&[x, y]);
        Ok(self.push(
            xs,
            value,
            Op::AddBroadcast {
                x: x.0,
                y: y.0,
                outer,
                mid,
                inner,
            },
            ng,
        ))
    }

    /// Adds a bias vector over the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let cols = *xs.last().expect("shapes are nonempty");
        if self.shape(bias) != [cols] {
            return Err(shape_err(format!("bias {:?} for input {xs:?}", self.shape(bias))));
        }
        let rows = xs.iter().product::<usize>() / cols;
        let flat = self.reshape(x, &[rows, cols])?;
        let out = self.add_broadcast(flat, bias, 0)?;
        self.reshape(out, &xs)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err(format!("matmul {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut value = vec![0.0; m * n];
        gemm_nn(self.value(a), self.value(b), &mut value, m, k, n);
        let ng = self.ng(&[a, b]);
        Ok(self.push(
            vec![m, n],
            value,
            Op::MatMul {
                a: a.0,
                b: b.0,
                m,
                k,
                n,
            },
            ng,
        ))
    }

    /// Batched matrix product `[B, m, k] x [B, k, n] -> [B, m, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(shape_err(format!("bmm {sa:?} x {sb:?}")));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut value = vec![0.0; batch * m * n];
        let (av, bv) = (self.value(a), self.value(b));
        for t in 0..batch {
            gemm_nn(
                &av[t * m * k..(t + 1) * m * k],
                &bv[t * k * n..(t + 1) * k * n],
                &mut value[t * m * n..(t + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let ng = self.ng(&[a, b]);
        Ok(self.push(
            vec![batch, m, n],
            value,
            Op::Bmm {
                a: a.0,
                b: b.0,
                batch,
                m,
                k,
                n,
            },
            ng,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() || shape.iter().any(|&d| d == 0) {
            return Err(shape_err(format!("reshape {:?} into {shape:?}", self.shape(x))));
        }
        let value = self.value(x).to_vec();
        let ng = self.ng(&[x]);
        Ok(self.push(shape.to_vec(), value, Op::Reshape(x.0), ng))
    }

    fn gather(&mut self, x: Var, shape: Vec<usize>, src: Vec<usize>) -> Var {
        let xv = self.value(x);
        let value = src.iter().map(|&i| xv[i]).collect();
        let ng = self.ng(&[x]);
        self.push(shape, value, Op::Gather { x: x.0, src }, ng)
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let nd = shape.len();
        let mut seen = vec![false; nd];
        if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
            return Err(shape_err(format!("permutation {perm:?} of {shape:?}")));
        }
        let mut strides = vec![1; nd];
        for i in (0..nd.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * shape[i + 1];
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let total: usize = shape.iter().product();
        let mut src = Vec::with_capacity(total);
        let mut idx = vec![0usize; nd];
        for _ in 0..total {
            src.push(idx.iter().zip(perm).map(|(&i, &p)| i * strides[p]).sum());
            for ax in (0..nd).rev() {
                idx[ax] += 1;
                if idx[ax] < out_shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Ok(self.gather(x, out_shape, src))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let nd = self.shape(x).len();
        if nd < 2 {
            return Err(shape_err("transpose needs at least two axes"));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 2, nd - 1);
        self.permute(x, &perm)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(shape_err(format!(
                "narrow axis {axis} [{start}, {}) of {shape:?}",
                start + len
            )));
        }
        let (outer, mid, inner) = split_axis(&shape, axis);
        let mut src = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            for m in start..start + len {
                let base = (o * mid + m) * inner;
                src.extend(base..base + inner);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.gather(x, out_shape, src))
    }

    /// From a `[rows, cols]` matrix, picks `x[r, idx[r]]` for each row.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || shape[0] != idx.len() {
            return Err(shape_err(format!("pick {} indices from {shape:?}", idx.len())));
        }
        let cols = shape[1];
        if let Some(&bad) = idx.iter().find(|&&c| c >= cols) {
            return Err(Error::BadClass {
                class: bad,
                classes: cols,
            });
        }
        let src = idx.iter().enumerate().map(|(r, &c)| r * cols + c).collect();
        Ok(self.gather(x, vec![idx.len()], src))
    }

    /// Sums out `axis`; a 1-D input reduces to shape `[1]`.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(shape_err(format!("sum over axis {axis} of {shape:?}")));
        }
        let (outer, mid, inner) = split_axis(&shape, axis);
        let xv = self.value(x);
        let mut value = vec![0.0; outer * inner];
        for o in 0..outer {
            for m in 0..mid {
                let base = (o * mid + m) * inner;
                for i in 0..inner {
                    value[o * inner + i] += xv[base + i];
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let ng = self.ng(&[x]);
        Ok(self.push(
            out_shape,
            value,
            Op::SumAxis {
                x: x.0,
                outer,
                mid,
                inner,
            },
            ng,
        ))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| shape_err(format!("mean over axis {axis}")))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let cols = *shape.last().ok_or(Error::EmptyVector)?;
        let xv = self.value(x);
        let mut value = vec![0.0; xv.len()];
        for (row, out) in xv.chunks(cols).zip(value.chunks_mut(cols)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        }
        let ng = self.ng(&[x]);
        Ok(self.push(shape, value, Op::Softmax { x: x.0, cols }, ng))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| shape_err("concat of nothing"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err(format!("concat axis {axis} of {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(shape_err(format!("concat {s:?} with {base:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut value = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let m = self.shape(p)[axis];
                let chunk = m * inner;
                value.extend_from_slice(&self.value(p)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let meta = parts.iter().map(|&p| (p.0, self.shape(p)[axis])).collect();
        let ng = self.ng(parts);
        Ok(self.push(
            shape,
            value,
            Op::Concat {
                parts: meta,
                outer,
                inner,
            },
            ng,
        ))
    }

    /// 3x3 cross-correlation, zero padding 1, stride 1.
    ///
    /// Input is `[h, w, k_in]` or batched `[b, h, w, k_in]`; kernels are
    /// `[3, 3, k_in, k_out]`; bias is `[k_out]`.
    pub fn conv2d_3x3(&mut self, x: Var, kernels: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (batch, h, w, ci) = match xs.as_slice() {
            &[h, w, c] => (1, h, w, c),
            &[b, h, w, c] => (b, h, w, c),
            _ => return Err(shape_err(format!("conv input {xs:?}"))),
        };
        let ks = self.shape(kernels);
        if ks.len() != 4 || ks[0] != 3 || ks[1] != 3 || ks[2] != ci {
            return Err(shape_err(format!("conv kernels {ks:?} for input {xs:?}")));
        }
        let co = ks[3];
        if self.shape(bias) != [co] {
            return Err(shape_err(format!("conv bias {:?} for {co} outputs", self.shape(bias))));
        }
        let (xv, kv, bv) = (self.value(x), self.value(kernels), self.value(bias));
        let mut value = vec![0.0; batch * h * w * co];
        for b in 0..batch {
            for y in 0..h {
                for xx in 0..w {
                    let out = &mut value[((b * h + y) * w + xx) * co..][..co];
                    out.copy_from_slice(bv);
                    for dy in 0..3 {
                        let iy = y + dy;
                        if iy < 1 || iy > h {
                            continue;
                        }
                        for dx in 0..3 {
                            let ix = xx + dx;
                            if ix < 1 || ix > w {
                                continue;
                            }
                            let inp = &xv[((b * h + iy - 1) * w + ix - 1) * ci..][..ci];
                            let ktap = &kv[(dy * 3 + dx) * ci * co..][..ci * co];
                            for (i, &a) in inp.iter().enumerate() {
                                for (o, &kw) in out.iter_mut().zip(&ktap[i * co..(i + 1) * co]) {
                                    *o += a * kw;
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut shape = xs;
        *shape.last_mut().expect("4-d") = co;
        let ng = self.ng(&[x, kernels, bias]);
        Ok(self.push(
            shape,
            value,
            Op::Conv3x3 {
                x: x.0,
                k: kernels.0,
                b: bias.0,
                batch,
                h,
                w,
                ci,
                co,
            },
            ng,
        ))
    }

    /// Mean over rows of `-ln(max(p[r, labels[r]], 1e-12))` for a `[rows, classes]`
    /// probability matrix. Returns shape `[1]`.
    pub fn cross_entropy(&mut self, p: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(p).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(shape_err(format!(
                "cross-entropy of {shape:?} with {} labels",
                labels.len()
            )));
        }
        let cols = shape[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
            return Err(Error::BadLabel {
                label: bad,
                classes: cols,
            });
        }
        let pv = self.value(p);
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(r, &l)| -pv[r * cols + l].max(CE_CLIP).ln())
            .sum();
        let value = vec![total / labels.len() as f64];
        let ng = self.ng(&[p]);
        Ok(self.push(
            vec![1],
            value,
            Op::CrossEntropy {
                p: p.0,
                labels: labels.to_vec(),
                cols,
            },
            ng,
        ))
    }

    /// Reverse pass from a single-element node. Gradients of every node that
    /// depends on a parameter are available through [`Graph::grad`] afterwards.
    pub fn backward(&mut self, target: Var) -> Result<()> {
        if self.value(target).len() != 1 {
            return Err(shape_err(format!("backward from non-scalar {:?}", self.shape(target))));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[target.0].needs_grad {
            return Ok(());
        }
        self.grads[target.0] = Some(vec![1.0]);
        for id in (0..=target.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            self.backprop_node(id, &g);
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, id: usize) -> Option<&mut [f64]> {
        if !self.nodes[id].needs_grad {
            return None;
        }
        let n = self.nodes[id].shape.iter().product();
        Some(self.grads[id].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
    }

    fn backprop_node(&mut self, id: usize, g: &[f64]) {
        // Temporarily move the op out so node values can be read while
        // gradient buffers are written.
        let op = std::mem::replace(&mut self.nodes[id].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for t in [*a, *b] {
                    if let Some(d) = self.acc(t) {
                        add_into(d, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.acc(*a) {
                    add_into(d, g);
                }
                if let Some(d) = self.acc(*b) {
                    for (d, &gv) in d.iter_mut().zip(g) {
                        *d -= gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.nodes[a].needs_grad {
                    let other = self.nodes[b].value.clone();
                    let d = self.acc(a).expect("needs grad");
                    for ((d, &gv), &o) in d.iter_mut().zip(g).zip(&other) {
                        *d += gv * o;
                    }
                }
                if self.nodes[b].needs_grad {
                    let other = self.nodes[a].value.clone();
                    let d = self.acc(b).expect("needs grad");
                    for ((d, &gv), &o) in d.iter_mut().zip(g).zip(&other) {
                        *d += gv * o;
                    }
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                if let Some(d) = self.acc(*a) {
                    for (d, &gv) in d.iter_mut().zip(g) {
                        *d += gv * s;
                    }
                }
            }
            Op::AddBroadcast {
                x,
                y,
                outer,
                mid,
                inner,
            } => {
                if let Some(d) = self.acc(*x) {
                    add_into(d, g);
                }
                if let Some(d) = self.acc(*y) {
                    for o in 0..*outer {
                        for m in 0..*mid {
                            let base = (o * mid + m) * inner;
                            for i in 0..*inner {
                                d[o * inner + i] += g[base + i];
                            }
                        }
                    }
                }
            }
            Op::Tanh(a) | Op::Sigmoid(a) | Op::Exp(a) => {
                let a = *a;
                let out = std::mem::take(&mut self.nodes[id].value);
                if let Some(d) = self.acc(a) {
                    for ((d, &gv), &y) in d.iter_mut().zip(g).zip(&out) {
                        let dy = match op {
                            Op::Tanh(_) => 1.0 - y * y,
                            Op::Sigmoid(_) => y * (1.0 - y),
                            _ => y,
                        };
                        *d += gv * dy;
                    }
                }
                self.nodes[id].value = out;
            }
            Op::MatMul { a, b, m, k, n } => {
                let (a, b, m, k, n) = (*a, *b, *m, *k, *n);
                if self.nodes[a].needs_grad {
                    let bv = self.nodes[b].value.clone();
                    let d = self.acc(a).expect("needs grad");
                    gemm_nt(g, &bv, d, m, n, k);
                }
                if self.nodes[b].needs_grad {
                    let av = self.nodes[a].value.clone();
                    let d = self.acc(b).expect("needs grad");
                    gemm_tn(&av, g, d, m, k, n);
                }
            }
            Op::Bmm { a, b, batch, m, k, n } => {
                let (a, b, batch, m, k, n) = (*a, *b, *batch, *m, *k, *n);
                if self.nodes[a].needs_grad {
                    let bv = self.nodes[b].value.clone();
                    let d = self.acc(a).expect("needs grad");
                    for t in 0..batch {
                        gemm_nt(
                            &g[t * m * n..(t + 1) * m * n],
                            &bv[t * k * n..(t + 1) * k * n],
                            &mut d[t * m * k..(t + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                }
                if self.nodes[b].needs_grad {
                    let av = self.nodes[a].value.clone();
                    let d = self.acc(b).expect("needs grad");
                    for t in 0..batch {
                        gemm_tn(
                            &av[t * m * k..(t + 1) * m * k],
                            &g[t * m * n..(t + 1) * m * n],
                            &mut d[t * k * n..(t + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(d) = self.acc(*a) {
                    add_into(d, g);
                }
            }
            Op::Gather { x, src } => {
                if let Some(d) = self.acc(*x) {
                    for (&s, &gv) in src.iter().zip(g) {
                        d[s] += gv;
                    }
                }
            }
            Op::SumAxis { x, outer, mid, inner } => {
                if let Some(d) = self.acc(*x) {
                    for o in 0..*outer {
                        for m in 0..*mid {
                            let base = (o * mid + m) * inner;
                            for i in 0..*inner {
                                d[base + i] += g[o * inner + i];
                            }
                        }
                    }
                }
            }
            Op::Softmax { x, cols } => {
                let (x, cols) = (*x, *cols);
                let out = std::mem::take(&mut self.nodes[id].value);
                if let Some(d) = self.acc(x) {
                    for ((drow, grow), yrow) in d.chunks_mut(cols).zip(g.chunks(cols)).zip(out.chunks(cols)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((dv, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *dv += yv * (gv - dot);
                        }
                    }
                }
                self.nodes[id].value = out;
            }
            Op::Concat { parts, outer, inner } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let mut offset = 0;
                for &(p, m) in parts {
                    if let Some(d) = self.acc(p) {
                        let chunk = m * inner;
                        for o in 0..*outer {
                            let src = &g[(o * total + offset) * inner..][..chunk];
                            add_into(&mut d[o * chunk..(o + 1) * chunk], src);
                        }
                    }
                    offset += m;
                }
            }
            Op::Conv3x3 {
                x,
                k,
                b,
                batch,
                h,
                w,
                ci,
                co,
            } => {
                let (x, k, b, batch, h, w, ci, co) = (*x, *k, *b, *batch, *h, *w, *ci, *co);
                if let Some(d) = self.acc(b) {
                    for pix in g.chunks(co) {
                        add_into(d, pix);
                    }
                }
                if self.nodes[k].needs_grad {
                    let xv = std::mem::take(&mut self.nodes[x].value);
                    let d = self.acc(k).expect("needs grad");
                    conv_taps(batch, h, w, |bb, y, xx, iy, ix, tap| {
                        let inp = &xv[((bb * h + iy) * w + ix) * ci..][..ci];
                        let gout = &g[((bb * h + y) * w + xx) * co..][..co];
                        let dk = &mut d[tap * ci * co..][..ci * co];
                        for (i, &a) in inp.iter().enumerate() {
                            for (dv, &gv) in dk[i * co..(i + 1) * co].iter_mut().zip(gout) {
                                *dv += a * gv;
                            }
                        }
                    });
                    self.nodes[x].value = xv;
                }
                if self.nodes[x].needs_grad {
                    let kv = std::mem::take(&mut self.nodes[k].value);
                    let d = self.acc(x).expect("needs grad");
                    conv_taps(batch, h, w, |bb, y, xx, iy, ix, tap| {
                        let gout = &g[((bb * h + y) * w + xx) * co..][..co];
                        let din = &mut d[((bb * h + iy) * w + ix) * ci..][..ci];
                        let ktap = &kv[tap * ci * co..][..ci * co];
                        for (i, dv) in din.iter_mut().enumerate() {
                            *dv += ktap[i * co..(i + 1) * co]
                                .iter()
                                .zip(gout)
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                        }
                    });
                    self.nodes[k].value = kv;
                }
            }
            Op::CrossEntropy { p, labels, cols } => {
                let (p, cols) = (*p, *cols);
                let pv = std::mem::take(&mut self.nodes[p].value);
                let scale = g[0] / labels.len() as f64;
                if let Some(d) = self.acc(p) {
                    for (r, &l) in labels.iter().enumerate() {
                        let prob = pv[r * cols + l];
                        if prob > CE_CLIP {
                            d[r * cols + l] -= scale / prob;
                        }
                    }
                }
                self.nodes[p].value = pv;
            }
        }
        self.nodes[id].op = op;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_into(d: &mut [f64], g: &[f64]) {
    for (d, &gv) in d.iter_mut().zip(g) {
        *d += gv;
    }
}

/// Visits every (output pixel, in-bounds input pixel, tap) triple of a 3x3 conv.
fn conv_taps(batch: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
    for b in 0..batch {
        for y in 0..h {
            for x in 0..w {
                for dy in 0..3 {
                    let iy = y + dy;
                    if iy < 1 || iy > h {
                        continue;
                    }
                    for dx in 0..3 {
                        let ix = x + dx;
                        if ix < 1 || ix > w {
                            continue;
                        }
                        f(b, y, x, iy - 1, ix - 1, dy * 3 + dx);
                    }
                }
            }
        }
    }
}

/// `c += a[m,k] * b[k,n]`
fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (cv, &bv) in crow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m,k] += a[m,n] * b[k,n]^T`
fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            c[i * k + p] += arow.iter().zip(&b[p * n..(p + 1) * n]).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `c[k,n] += a[m,k]^T * b[m,n]`
fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (cv, &bv) in c[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}
