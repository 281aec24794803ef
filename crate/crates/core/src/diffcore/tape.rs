use crate::error::{Error, Result};

use super::graph::Graph;
use super::tensor::{gemm, sigmoid, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Sum(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Map(Var, fn(f64) -> f64),
}

/// Records primitive applications in evaluation order. Nodes are
/// single-assignment, so the record is topologically sorted by construction.
#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    needs_grad: Vec<bool>,
}

/// Gradients of a scalar with respect to every leaf that influenced it.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, or zeros of `shape` when the leaf did not
    /// influence the loss.
    pub fn get_or_zeros(&self, v: Var, shape: [usize; 2]) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape[0], shape[1]))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.needs_grad.push(needs_grad);
        Var(self.values.len() - 1)
    }

    fn unary(&mut self, a: Var, value: Tensor, op: Op) -> Var {
        let g = self.needs_grad[a.0];
        self.push(value, op, g)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A copy of `v` that gradients do not flow through.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.values[v.0].clone();
        self.push(t, Op::Constant, false)
    }

    /// Elementwise function with a caller-supplied derivative.
    pub fn map(&mut self, a: Var, f: fn(f64) -> f64, df: fn(f64) -> f64) -> Var {
        let value = self.values[a.0].map(f);
        self.unary(a, value, Op::Map(a, df))
    }

    pub fn get(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    /// Reverse accumulation from a scalar node. The tape is not modified,
    /// so repeated calls return identical results.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.values[loss.0].shape();
        if shape != [1, 1] {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {shape:?}"),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        if self.needs_grad[loss.0] {
            grads[loss.0] = Some(Tensor::scalar(1.0));
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let out = &self.values[i];
            match &self.ops[i] {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Constant => {}
                Op::MatMul(a, b) => {
                    let (va, vb) = (&self.values[a.0], &self.values[b.0]);
                    if self.needs_grad[a.0] {
                        self.acc_gemm(&mut grads, *a, &g, false, vb, true);
                    }
                    if self.needs_grad[b.0] {
                        self.acc_gemm(&mut grads, *b, va, true, &g, false);
                    }
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, || g.clone());
                    self.acc(&mut grads, *b, || g.clone());
                }
                Op::AddRow(a, b) => {
                    self.acc(&mut grads, *a, || g.clone());
                    self.acc(&mut grads, *b, || g.sum_rows());
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *a, || g.clone());
                    self.acc(&mut grads, *b, || g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.values[a.0], &self.values[b.0]);
                    self.acc(&mut grads, *a, || g.mul(vb).expect("shapes recorded"));
                    self.acc(&mut grads, *b, || g.mul(va).expect("shapes recorded"));
                }
                Op::Scale(a, s) => {
                    self.acc(&mut grads, *a, || g.scale(*s));
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.values[p.0].cols();
                        self.acc(&mut grads, *p, || {
                            g.slice_cols(start, start + w).expect("shapes recorded")
                        });
                        start += w;
                    }
                }
                Op::Slice(a, start) => {
                    let src = &self.values[a.0];
                    self.acc(&mut grads, *a, || {
                        let mut full = Tensor::zeros(src.rows(), src.cols());
                        let w = g.cols();
                        let cols = src.cols();
                        for r in 0..src.rows() {
                            full.data_mut()[r * cols + start..r * cols + start + w]
                                .copy_from_slice(g.row_slice(r));
                        }
                        full
                    });
                }
                Op::Sum(a) => {
                    let s = g.data()[0];
                    let src = &self.values[a.0];
                    self.acc(&mut grads, *a, || Tensor::filled(src.rows(), src.cols(), s));
                }
                Op::Tanh(a) => {
                    self.acc(&mut grads, *a, || {
                        g.zip_map(out, "tanh'", |g, y| g * (1.0 - y * y))
                            .expect("shapes")
                    });
                }
                Op::Sigmoid(a) => {
                    self.acc(&mut grads, *a, || {
                        g.zip_map(out, "sigmoid'", |g, y| g * y * (1.0 - y))
                            .expect("shapes")
                    });
                }
                Op::Exp(a) => {
                    self.acc(&mut grads, *a, || {
                        g.zip_map(out, "exp'", |g, y| g * y).expect("shapes")
                    });
                }
                Op::Log(a) => {
                    let src = &self.values[a.0];
                    self.acc(&mut grads, *a, || {
                        g.zip_map(src, "log'", |g, x| g / x).expect("shapes")
                    });
                }
                Op::Square(a) => {
                    let src = &self.values[a.0];
                    self.acc(&mut grads, *a, || {
                        g.zip_map(src, "square'", |g, x| 2.0 * g * x)
                            .expect("shapes")
                    });
                }
                Op::Clamp(a, lo, hi) => {
                    let src = &self.values[a.0];
                    let (lo, hi) = (*lo, *hi);
                    self.acc(&mut grads, *a, || {
                        g.zip_map(
                            src,
                            "clamp'",
                            |g, x| if x >= lo && x <= hi { g } else { 0.0 },
                        )
                        .expect("shapes")
                    });
                }
                Op::Map(a, df) => {
                    let src = &self.values[a.0];
                    let df = *df;
                    self.acc(&mut grads, *a, || {
                        g.zip_map(src, "map'", |g, x| g * df(x)).expect("shapes")
                    });
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: impl FnOnce() -> Tensor) {
        if !self.needs_grad[v.0] {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing
                .add_assign(&g())
                .expect("gradient shape matches value"),
            slot @ None => *slot = Some(g()),
        }
    }

    fn acc_gemm(
        &self,
        grads: &mut [Option<Tensor>],
        v: Var,
        a: &Tensor,
        ta: bool,
        b: &Tensor,
        tb: bool,
    ) {
        let shape = self.values[v.0].shape();
        match &mut grads[v.0] {
            Some(existing) => gemm(a, ta, b, tb, existing, 1.0),
            slot @ None => {
                let mut t = Tensor::zeros(shape[0], shape[1]);
                gemm(a, ta, b, tb, &mut t, 0.0);
                *slot = Some(t);
            }
        }
    }
}

impl Graph for Tape {
    type Node = Var;

    fn value<'a>(&'a self, node: &'a Var) -> &'a Tensor {
        &self.values[node.0]
    }

    fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.values[a.0].matmul(&self.values[b.0])?;
        let g = self.needs_grad[a.0] || self.needs_grad[b.0];
        Ok(self.push(v, Op::MatMul(*a, *b), g))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        let broadcast = vb.rows() == 1 && va.rows() != 1;
        let v = va.add(vb)?;
        let op = if broadcast {
            Op::AddRow(*a, *b)
        } else {
            Op::Add(*a, *b)
        };
        let g = self.needs_grad[a.0] || self.needs_grad[b.0];
        Ok(self.push(v, op, g))
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.values[a.0].sub(&self.values[b.0])?;
        let g = self.needs_grad[a.0] || self.needs_grad[b.0];
        Ok(self.push(v, Op::Sub(*a, *b), g))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.values[a.0].mul(&self.values[b.0])?;
        let g = self.needs_grad[a.0] || self.needs_grad[b.0];
        Ok(self.push(v, Op::Mul(*a, *b), g))
    }

    fn scale(&mut self, a: &Var, s: f64) -> Var {
        let v = self.values[a.0].scale(s);
        self.unary(*a, v, Op::Scale(*a, s))
    }

    fn concat(&mut self, parts: &[&Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|p| &self.values[p.0]).collect();
        let v = Tensor::concat_cols(&tensors)?;
        let g = parts.iter().any(|p| self.needs_grad[p.0]);
        Ok(self.push(v, Op::Concat(parts.iter().map(|p| **p).collect()), g))
    }

    fn slice(&mut self, a: &Var, start: usize, end: usize) -> Result<Var> {
        let v = self.values[a.0].slice_cols(start, end)?;
        Ok(self.unary(*a, v, Op::Slice(*a, start)))
    }

    fn sum(&mut self, a: &Var) -> Var {
        let v = Tensor::scalar(self.values[a.0].sum());
        self.unary(*a, v, Op::Sum(*a))
    }

    fn tanh(&mut self, a: &Var) -> Var {
        let v = self.values[a.0].map(f64::tanh);
        self.unary(*a, v, Op::Tanh(*a))
    }

    fn sigmoid(&mut self, a: &Var) -> Var {
        let v = self.values[a.0].map(sigmoid);
        self.unary(*a, v, Op::Sigmoid(*a))
    }

    fn exp(&mut self, a: &Var) -> Var {
        let v = self.values[a.0].map(f64::exp);
        self.unary(*a, v, Op::Exp(*a))
    }

    fn log(&mut self, a: &Var) -> Var {
        let v = self.values[a.0].map(f64::ln);
        self.unary(*a, v, Op::Log(*a))
    }

    fn square(&mut self, a: &Var) -> Var {
        let v = self.values[a.0].map(|x| x * x);
        self.unary(*a, v, Op::Square(*a))
    }

    fn clamp(&mut self, a: &Var, lo: f64, hi: f64) -> Var {
        let v = self.values[a.0].map(|x| x.clamp(lo, hi));
        self.unary(*a, v, Op::Clamp(*a, lo, hi))
    }
}
