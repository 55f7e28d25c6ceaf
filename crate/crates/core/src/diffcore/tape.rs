//! Tape-based reverse-mode differentiation over [`Tensor2D`] values.
//!
//! Every operation appends a node holding its forward value. Calling
//! [`Tape::gradients`] on a scalar node walks the tape backwards once and
//! returns the gradient of that scalar with respect to every node. The tape
//! is never mutated by the backward pass, so several roots can be
//! differentiated from one forward evaluation.

use std::sync::Arc;

use super::Tensor2D;
use crate::{Error, Result};

/// Lower bound applied to the argument of [`Tape::log`].
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a + b` with `b` a 1x1 tensor broadcast over `a`.
    AddScalar(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Sigmoid(Var),
    Log(Var),
    Relu(Var),
    Abs(Var),
    MaxConst(Var, f64),
    Mean(Var),
    Sum(Var),
    RowMean(Var),
    RowDot(Var, Var),
    SquaredNorm(Var),
    GatherRows(Var, Arc<[usize]>),
    /// Row `i` of the output is the mean of the input rows listed in group `i`.
    SegmentMean(Var, Arc<Vec<Vec<usize>>>),
    /// Scalar with externally supplied partial derivatives.
    Custom(Vec<(Var, Tensor2D)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor2D,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar root with respect to every tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor2D>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor2D> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zeros when the root does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor2D {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor2D::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2D {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    fn push(&mut self, value: Tensor2D, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Inputs, parameters and constants all enter the tape as leaves.
    pub fn leaf(&mut self, value: Tensor2D) -> Var {
        self.push(value, Op::Leaf)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn add_scalar(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.value(b).item().map_err(|_| {
            Error::shape("add_scalar", "broadcast operand must be 1x1".to_string())
        })?;
        let v = self.value(a).map(|x| x + s);
        Ok(self.push(v, Op::AddScalar(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).scaled(k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddConst(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    /// Natural log with the argument clamped to at least [`LOG_CLAMP`].
    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(LOG_CLAMP).ln());
        self.push(v, Op::Log(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn max_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x.max(c));
        self.push(v, Op::MaxConst(a, c))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::shape("mean", "empty tensor".to_string()));
        }
        let m = x.as_slice().iter().sum::<f64>() / x.len() as f64;
        Ok(self.push(Tensor2D::scalar(m), Op::Mean(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).as_slice().iter().sum::<f64>();
        self.push(Tensor2D::scalar(s), Op::Sum(a))
    }

    /// Mean of each row, as an n×1 column.
    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.cols() == 0 {
            return Err(Error::shape("row_mean", "zero columns".to_string()));
        }
        let c = x.cols() as f64;
        let v = Tensor2D::from_fn(x.rows(), 1, |i, _| x.row(i).iter().sum::<f64>() / c);
        Ok(self.push(v, Op::RowMean(a)))
    }

    /// Row-wise dot products of two equally shaped matrices, as an n×1 column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_dot", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let v = Tensor2D::from_fn(x.rows(), 1, |i, _| dot(x.row(i), y.row(i)));
        Ok(self.push(v, Op::RowDot(a, b)))
    }

    pub fn squared_norm(&mut self, a: Var) -> Var {
        let s = self.value(a).as_slice().iter().map(|x| x * x).sum::<f64>();
        self.push(Tensor2D::scalar(s), Op::SquaredNorm(a))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        let v = self.value(a).gather_rows(&idx)?;
        Ok(self.push(v, Op::GatherRows(a, idx)))
    }

    pub fn segment_mean(&mut self, a: Var, groups: Arc<Vec<Vec<usize>>>) -> Result<Var> {
        let x = self.value(a);
        let mut out = Tensor2D::zeros(groups.len(), x.cols());
        for (i, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::shape("segment_mean", format!("group {i} is empty")));
            }
            let row = out.row_mut(i);
            for &j in g {
                if j >= x.rows() {
                    return Err(Error::shape(
                        "segment_mean",
                        format!("row {j} out of range for {} rows", x.rows()),
                    ));
                }
                for (o, v) in row.iter_mut().zip(x.row(j)) {
                    *o += v;
                }
            }
            let inv = 1.0 / g.len() as f64;
            row.iter_mut().for_each(|o| *o *= inv);
        }
        Ok(self.push(out, Op::SegmentMean(a, groups)))
    }

    /// Scalar node whose partial derivatives were computed outside the tape.
    pub fn custom_scalar(&mut self, value: f64, partials: Vec<(Var, Tensor2D)>) -> Result<Var> {
        for (v, g) in &partials {
            if self.value(*v).shape() != g.shape() {
                return Err(Error::shape(
                    "custom_scalar",
                    format!(
                        "partial {:?} for input of shape {:?}",
                        g.shape(),
                        self.value(*v).shape()
                    ),
                ));
            }
        }
        Ok(self.push(Tensor2D::scalar(value), Op::Custom(partials)))
    }

    /// Reverse sweep from a 1x1 root.
    pub fn gradients(&self, root: Var) -> Result<Gradients> {
        if self.value(root).shape() != (1, 1) {
            return Err(Error::shape(
                "gradients",
                format!("root must be 1x1, got {:?}", self.value(root).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor2D>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor2D::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.backprop(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn backprop(&self, node: &Node, g: &Tensor2D, grads: &mut [Option<Tensor2D>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                accumulate(grads, *a, g.matmul_t(val(*b))?)?;
                accumulate(grads, *b, val(*a).t_matmul(g)?)?;
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.scaled(-1.0))?;
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.zip_map(val(*b), |x, y| x * y)?)?;
                accumulate(grads, *b, g.zip_map(val(*a), |x, y| x * y)?)?;
            }
            Op::AddScalar(a, b) => {
                accumulate(grads, *a, g.clone())?;
                let s = g.as_slice().iter().sum::<f64>();
                accumulate(grads, *b, Tensor2D::scalar(s))?;
            }
            Op::Scale(a, k) => accumulate(grads, *a, g.scaled(*k))?,
            Op::AddConst(a) => accumulate(grads, *a, g.clone())?,
            Op::Sigmoid(a) => {
                let d = node.value.zip_map(g, |s, gi| gi * s * (1.0 - s))?;
                accumulate(grads, *a, d)?;
            }
            Op::Log(a) => {
                let d = val(*a).zip_map(g, |x, gi| if x > LOG_CLAMP { gi / x } else { 0.0 })?;
                accumulate(grads, *a, d)?;
            }
            Op::Relu(a) => {
                let d = val(*a).zip_map(g, |x, gi| if x > 0.0 { gi } else { 0.0 })?;
                accumulate(grads, *a, d)?;
            }
            Op::Abs(a) => {
                let d = val(*a).zip_map(g, |x, gi| gi * sign(x))?;
                accumulate(grads, *a, d)?;
            }
            Op::MaxConst(a, c) => {
                let d = val(*a).zip_map(g, |x, gi| if x > *c { gi } else { 0.0 })?;
                accumulate(grads, *a, d)?;
            }
            Op::Mean(a) => {
                let x = val(*a);
                let k = g.item()? / x.len() as f64;
                accumulate(grads, *a, Tensor2D::filled(x.rows(), x.cols(), k))?;
            }
            Op::Sum(a) => {
                let x = val(*a);
                accumulate(grads, *a, Tensor2D::filled(x.rows(), x.cols(), g.item()?))?;
            }
            Op::RowMean(a) => {
                let x = val(*a);
                let c = x.cols() as f64;
                let d = Tensor2D::from_fn(x.rows(), x.cols(), |i, _| g.get(i, 0) / c);
                accumulate(grads, *a, d)?;
            }
            Op::RowDot(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let da = Tensor2D::from_fn(x.rows(), x.cols(), |i, j| g.get(i, 0) * y.get(i, j));
                let db = Tensor2D::from_fn(x.rows(), x.cols(), |i, j| g.get(i, 0) * x.get(i, j));
                accumulate(grads, *a, da)?;
                accumulate(grads, *b, db)?;
            }
            Op::SquaredNorm(a) => {
                let k = 2.0 * g.item()?;
                accumulate(grads, *a, val(*a).scaled(k))?;
            }
            Op::GatherRows(a, idx) => {
                let x = val(*a);
                let mut d = Tensor2D::zeros(x.rows(), x.cols());
                for (r, &src) in idx.iter().enumerate() {
                    for (o, v) in d.row_mut(src).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(grads, *a, d)?;
            }
            Op::SegmentMean(a, groups) => {
                let x = val(*a);
                let mut d = Tensor2D::zeros(x.rows(), x.cols());
                for (r, grp) in groups.iter().enumerate() {
                    let inv = 1.0 / grp.len() as f64;
                    for &src in grp {
                        for (o, v) in d.row_mut(src).iter_mut().zip(g.row(r)) {
                            *o += v * inv;
                        }
                    }
                }
                accumulate(grads, *a, d)?;
            }
            Op::Custom(partials) => {
                let k = g.item()?;
                for (v, p) in partials {
                    accumulate(grads, *v, p.scaled(k))?;
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor2D>], v: Var, d: Tensor2D) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => {
            *slot = Some(d);
            Ok(())
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
