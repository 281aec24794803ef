use crate::error::Result;

use super::tensor::{sigmoid, Tensor};

/// The primitive set shared by the recording tape and the plain evaluator,
/// so model code is written once and runs with or without gradients.
pub trait Graph {
    type Node: Clone;

    fn value<'a>(&'a self, node: &'a Self::Node) -> &'a Tensor;
    fn constant(&mut self, t: Tensor) -> Self::Node;

    fn matmul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    /// Same-shape sum, or matrix plus broadcast row.
    fn add(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn sub(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn mul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn scale(&mut self, a: &Self::Node, s: f64) -> Self::Node;
    fn concat(&mut self, parts: &[&Self::Node]) -> Result<Self::Node>;
    fn slice(&mut self, a: &Self::Node, start: usize, end: usize) -> Result<Self::Node>;
    fn sum(&mut self, a: &Self::Node) -> Self::Node;
    fn tanh(&mut self, a: &Self::Node) -> Self::Node;
    fn sigmoid(&mut self, a: &Self::Node) -> Self::Node;
    fn exp(&mut self, a: &Self::Node) -> Self::Node;
    fn log(&mut self, a: &Self::Node) -> Self::Node;
    fn square(&mut self, a: &Self::Node) -> Self::Node;
    /// Clamp to [lo, hi]; the gradient is zero outside the interval.
    fn clamp(&mut self, a: &Self::Node, lo: f64, hi: f64) -> Self::Node;

    /// `x * w + b` with `b` broadcast over rows.
    fn affine(&mut self, x: &Self::Node, w: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        let xw = self.matmul(x, w)?;
        self.add(&xw, b)
    }
}

/// Direct evaluation without recording; used for sampling and inference.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eval;

impl Graph for Eval {
    type Node = Tensor;

    fn value<'a>(&'a self, node: &'a Tensor) -> &'a Tensor {
        node
    }

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }

    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.matmul(b)
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.add(b)
    }

    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.sub(b)
    }

    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.mul(b)
    }

    fn scale(&mut self, a: &Tensor, s: f64) -> Tensor {
        a.scale(s)
    }

    fn concat(&mut self, parts: &[&Tensor]) -> Result<Tensor> {
        Tensor::concat_cols(parts)
    }

    fn slice(&mut self, a: &Tensor, start: usize, end: usize) -> Result<Tensor> {
        a.slice_cols(start, end)
    }

    fn sum(&mut self, a: &Tensor) -> Tensor {
        Tensor::scalar(a.sum())
    }

    fn tanh(&mut self, a: &Tensor) -> Tensor {
        a.map(f64::tanh)
    }

    fn sigmoid(&mut self, a: &Tensor) -> Tensor {
        a.map(sigmoid)
    }

    fn exp(&mut self, a: &Tensor) -> Tensor {
        a.map(f64::exp)
    }

    fn log(&mut self, a: &Tensor) -> Tensor {
        a.map(f64::ln)
    }

    fn square(&mut self, a: &Tensor) -> Tensor {
        a.map(|v| v * v)
    }

    fn clamp(&mut self, a: &Tensor, lo: f64, hi: f64) -> Tensor {
        a.map(|v| v.clamp(lo, hi))
    }
}
