//! Dense f64 tensors and a tape-based reverse-mode differentiation engine.
//!
//! [`Tensor`] is the storage type for parameters and data. Computation that
//! needs gradients is recorded on a [`Graph`]: leaves are created from
//! tensors, every op appends a node, and [`Graph::backward`] replays the tape
//! in reverse. Reductions always run left to right so identical inputs give
//! bit-identical results.

mod gradcheck;
mod graph;

pub use gradcheck::finite_diff_check;
pub use graph::{Graph, Var, CE_CLIP};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Row-major tensor with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(skip)]
    grad: Option<Vec<f64>>,
    #[serde(default)]
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(shape_err(format!("zero-sized dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyVector);
        }
        Self::new(vec![data.len()], data)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            grad: None,
            requires_grad: false,
        }
    }

    /// Marks the tensor as a trainable parameter.
    pub fn into_param(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(shape_err(format!(
                "gradient of length {} for tensor of {} values",
                grad.len(),
                self.data.len()
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(shape_err(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Numerically stable softmax of a vector.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(v.to_vec())?);
    let y = g.softmax(x)?;
    Ok(g.value(y).to_vec())
}

/// `-ln(max(p[label], 1e-12))`.
pub fn cross_entropy(p: &[f64], label: usize) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(p.to_vec())?);
    let x = g.reshape(x, &[1, p.len()])?;
    let loss = g.cross_entropy(x, &[label])?;
    Ok(g.value(loss)[0])
}

/// 3x3 cross-correlation with zero padding 1 and stride 1 over an `h x w x k_in`
/// grid. `kernels` is `3 x 3 x k_in x k_out`, `bias` is `k_out`.
pub fn conv2d_3x3(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let k = g.constant(kernels.clone());
    let b = g.constant(bias.clone());
    let y = g.conv2d_3x3(x, k, b)?;
    Ok(g.tensor(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_lengths() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert_eq!(Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap().len(), 6);
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for v in s {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(softmax(&[123.4]).unwrap(), vec![1.0]);
        let s = softmax(&[3f64.ln(), 0.0]).unwrap();
        assert!((s[0] - 0.75).abs() < 1e-15);
        assert!((s[1] - 0.25).abs() < 1e-15);
        assert!(matches!(softmax(&[]), Err(Error::EmptyVector)));
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let s = softmax(&[1000.0, 999.0, -1000.0]).unwrap();
        assert!(s.iter().all(|v| v.is_finite()));
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        let u = cross_entropy(&[0.2; 5], 3).unwrap();
        assert!((u - 5f64.ln()).abs() < 1e-12);
        // ln 4 = 1.3862943611198906
        let l = cross_entropy(&[0.75, 0.25], 1).unwrap();
        assert!((l - 1.386_294_361_119_890_6).abs() < 1e-12);
        // clipped at 1e-12
        let c = cross_entropy(&[1.0, 0.0], 1).unwrap();
        assert!((c - 1e-12f64.ln().abs()).abs() < 1e-9);
        assert!(matches!(cross_entropy(&[0.5, 0.5], 2), Err(Error::BadLabel { .. })));
    }

    #[test]
    fn conv_identity_and_zero() {
        let input = Tensor::new(vec![3, 4, 1], (0..12).map(|v| v as f64).collect()).unwrap();
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let kernels = Tensor::new(vec![3, 3, 1, 1], k).unwrap();
        let out = conv2d_3x3(&input, &kernels, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out.shape(), &[3, 4, 1]);
        assert_eq!(out.data(), input.data());

        let zero = conv2d_3x3(&input, &Tensor::zeros(&[3, 3, 1, 2]), &Tensor::zeros(&[2])).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_shape_mismatch() {
        let input = Tensor::zeros(&[4, 4, 2]);
        let kernels = Tensor::zeros(&[3, 3, 3, 1]);
        let err = conv2d_3x3(&input, &kernels, &Tensor::zeros(&[1])).unwrap_err();
        assert_eq!(err.category(), "shape-mismatch");
    }
}
