//! Reverse-mode differentiation over a flat, append-only node list.
//!
//! Nodes are only ever appended and parents always precede their children, so
//! the node index order is a topological order and a backward pass is a single
//! reverse sweep.

use std::collections::HashMap;

use super::params::{GradMap, ParamSet};
use super::Tensor2;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation tag of a node.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Constant input; never receives a gradient.
    Constant,
    /// Differentiable leaf (a bound parameter or a free variable).
    Leaf,
    MatMul,
    /// Elementwise add; the right operand may be a 1 x cols row vector.
    Add,
    /// Elementwise subtract; the right operand may be a 1 x cols row vector.
    Sub,
    Mul,
    /// Elementwise minimum. Ties route the gradient to the left operand.
    Min,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Neg,
    Square,
    /// `ln(1 + e^x)`, evaluated stably.
    Softplus,
    LeakyRelu(f64),
    /// Derivative mask of [`Op::LeakyRelu`]: 1 where x > 0, else the slope.
    /// Piecewise constant, so it passes no gradient.
    LeakyReluDeriv(f64),
    /// Elementwise clamp. Values on a bound keep their gradient.
    Clamp(f64, f64),
    Scale(f64),
    AddScalar(f64),
    Transpose,
    /// Sum of all entries, 1x1.
    Sum,
    /// Mean of all entries, 1x1.
    Mean,
    /// Per-row sum, rows x 1.
    SumCols,
    /// Per-column mean, 1 x cols.
    MeanRows,
    /// Columns `start..end`.
    SliceCols(usize, usize),
}

impl Op {
    fn arity(&self) -> usize {
        match self {
            Op::Constant | Op::Leaf => 0,
            Op::MatMul | Op::Add | Op::Sub | Op::Mul | Op::Min => 2,
            _ => 1,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Leaf => "leaf",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Min => "min",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Neg => "neg",
            Op::Square => "square",
            Op::Softplus => "softplus",
            Op::LeakyRelu(_) => "leaky_relu",
            Op::LeakyReluDeriv(_) => "leaky_relu_deriv",
            Op::Clamp(..) => "clamp",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Transpose => "transpose",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::SumCols => "sum_cols",
            Op::MeanRows => "mean_rows",
            Op::SliceCols(..) => "slice_cols",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub value: Tensor2,
    pub op: Op,
    pub parents: Vec<Var>,
    requires_grad: bool,
    grad: Option<Tensor2>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<String, Var>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn leaky_deriv(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

fn is_row_broadcast(a: &Tensor2, b: &Tensor2) -> bool {
    b.rows() == 1 && a.rows() != 1 && a.cols() == b.cols()
}

fn broadcast_binary(
    op: &'static str,
    a: &Tensor2,
    b: &Tensor2,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor2> {
    if a.shape() == b.shape() {
        return Ok(a.zip_map(b, f));
    }
    if is_row_broadcast(a, b) {
        let mut out = a.clone();
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(b.data()) {
                *o = f(*o, bv);
            }
        }
        return Ok(out);
    }
    Err(Error::shape(
        op,
        format!("{:?} with {:?}", a.shape(), b.shape()),
    ))
}

fn col_sums(t: &Tensor2) -> Tensor2 {
    let mut out = vec![0.0; t.cols()];
    for r in 0..t.rows() {
        for (o, v) in out.iter_mut().zip(t.row(r)) {
            *o += v;
        }
    }
    Tensor2::row_vector(out)
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

    pub fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated for `v` by the most recent backward pass.
    pub fn grad(&self, v: Var) -> Option<&Tensor2> {
        self.nodes[v.0].grad.as_ref()
    }

    fn push(&mut self, value: Tensor2, op: Op, parents: Vec<Var>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            parents,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Constant, Vec::new(), false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor2::scalar(value))
    }

    /// Unnamed differentiable leaf.
    pub fn variable(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf, Vec::new(), true)
    }

    /// Binds parameter `name` from `params` as a differentiable leaf. Binding
    /// the same name twice returns the same node.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let value = params.get(name)?.clone();
        let v = self.variable(value);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Appends a node computing `op` over `inputs`.
    pub fn apply(&mut self, op: Op, inputs: &[Var]) -> Result<Var> {
        if inputs.len() != op.arity() {
            return Err(Error::shape(
                op.name(),
                format!("expects {} inputs, got {}", op.arity(), inputs.len()),
            ));
        }
        let value = {
            let x = |i: usize| &self.nodes[inputs[i].0].value;
            match &op {
                Op::Constant | Op::Leaf => unreachable!("leaves have arity 0"),
                Op::MatMul => x(0).matmul(x(1))?,
                Op::Add => broadcast_binary("add", x(0), x(1), |a, b| a + b)?,
                Op::Sub => broadcast_binary("sub", x(0), x(1), |a, b| a - b)?,
                Op::Mul => {
                    if x(0).shape() != x(1).shape() {
                        return Err(Error::shape(
                            "mul",
                            format!("{:?} with {:?}", x(0).shape(), x(1).shape()),
                        ));
                    }
                    x(0).zip_map(x(1), |a, b| a * b)
                }
                Op::Min => {
                    if x(0).shape() != x(1).shape() {
                        return Err(Error::shape(
                            "min",
                            format!("{:?} with {:?}", x(0).shape(), x(1).shape()),
                        ));
                    }
                    x(0).zip_map(x(1), |a, b| if a <= b { a } else { b })
                }
                Op::Tanh => x(0).map(f64::tanh),
                Op::Sigmoid => x(0).map(sigmoid),
                Op::Exp => x(0).map(f64::exp),
                Op::Log => x(0).map(f64::ln),
                Op::Neg => x(0).map(|a| -a),
                Op::Square => x(0).map(|a| a * a),
                Op::Softplus => x(0).map(softplus),
                Op::LeakyRelu(s) => {
                    let s = *s;
                    x(0).map(|a| if a > 0.0 { a } else { s * a })
                }
                Op::LeakyReluDeriv(s) => {
                    let s = *s;
                    x(0).map(|a| leaky_deriv(a, s))
                }
                Op::Clamp(lo, hi) => {
                    if lo > hi {
                        return Err(Error::InvalidArgument(format!(
                            "clamp bounds [{lo}, {hi}] are inverted"
                        )));
                    }
                    let (lo, hi) = (*lo, *hi);
                    x(0).map(|a| a.clamp(lo, hi))
                }
                Op::Scale(c) => {
                    let c = *c;
                    x(0).map(|a| c * a)
                }
                Op::AddScalar(c) => {
                    let c = *c;
                    x(0).map(|a| a + c)
                }
                Op::Transpose => x(0).transpose(),
                Op::Sum => Tensor2::scalar(x(0).sum()),
                Op::Mean => {
                    if x(0).is_empty() {
                        return Err(Error::shape("mean", "empty input"));
                    }
                    Tensor2::scalar(x(0).sum() / x(0).len() as f64)
                }
                Op::SumCols => {
                    let t = x(0);
                    Tensor2::column((0..t.rows()).map(|r| t.row(r).iter().sum()).collect())
                }
                Op::MeanRows => {
                    let t = x(0);
                    if t.rows() == 0 {
                        return Err(Error::shape("mean_rows", "no rows"));
                    }
                    Tensor2::row_vector(t.col_means())
                }
                Op::SliceCols(start, end) => {
                    let t = x(0);
                    if start > end || *end > t.cols() {
                        return Err(Error::shape(
                            "slice_cols",
                            format!("{start}..{end} of {} columns", t.cols()),
                        ));
                    }
                    t.select_cols(&(*start..*end).collect::<Vec<_>>())
                }
            }
        };
        if !value.is_finite() {
            return Err(Error::Data(format!(
                "non-finite value produced by {}",
                op.name()
            )));
        }
        let requires_grad = !matches!(op, Op::LeakyReluDeriv(_))
            && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, op, inputs.to_vec(), requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Mul, &[a, b])
    }
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Min, &[a, b])
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Tanh, &[a])
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Sigmoid, &[a])
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Exp, &[a])
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Log, &[a])
    }
    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Neg, &[a])
    }
    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Square, &[a])
    }
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Softplus, &[a])
    }
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.apply(Op::LeakyRelu(slope), &[a])
    }
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.apply(Op::Clamp(lo, hi), &[a])
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Op::Scale(c), &[a])
    }
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Op::AddScalar(c), &[a])
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Transpose, &[a])
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Sum, &[a])
    }
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Mean, &[a])
    }
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::SumCols, &[a])
    }
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::MeanRows, &[a])
    }
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.apply(Op::SliceCols(start, end), &[a])
    }

    /// Resets every gradient accumulator.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Propagates d(root)/d(node) to every node reachable from `root`.
    pub fn backward_from(&mut self, root: Var) -> Result<()> {
        let (rows, cols) = self.nodes[root.0].value.shape();
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarRoot { rows, cols });
        }
        self.zero_grad();
        self.nodes[root.0].grad = Some(Tensor2::scalar(1.0));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(i, &g)?;
            self.nodes[i].grad = Some(g);
            for (parent, pg) in contributions {
                let node = &mut self.nodes[parent.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&pg),
                    None => node.grad = Some(pg),
                }
            }
        }
        Ok(())
    }

    /// Backward pass from `root`, returning d(root)/dp for every parameter
    /// in `params`. Parameters that are unbound or unreachable get zeros.
    pub fn backward(&mut self, root: Var, params: &ParamSet) -> Result<GradMap> {
        self.backward_from(root)?;
        let mut out = GradMap::new();
        for (name, t) in params.iter() {
            let g = self
                .bound
                .get(name)
                .and_then(|v| self.nodes[v.0].grad.clone())
                .unwrap_or_else(|| Tensor2::zeros(t.rows(), t.cols()));
            out.insert(name.to_string(), g);
        }
        Ok(out)
    }

    fn local_grads(&self, i: usize, g: &Tensor2) -> Result<Vec<(Var, Tensor2)>> {
        let node = &self.nodes[i];
        let p = &node.parents;
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let y = &node.value;
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Constant | Op::Leaf | Op::LeakyReluDeriv(_) => {}
            Op::MatMul => {
                if wants(p[0]) {
                    out.push((p[0], g.matmul_t(val(p[1]))?));
                }
                if wants(p[1]) {
                    out.push((p[1], val(p[0]).t_matmul(g)?));
                }
            }
            Op::Add | Op::Sub => {
                let sign = if node.op == Op::Add { 1.0 } else { -1.0 };
                out.push((p[0], g.clone()));
                if wants(p[1]) {
                    let gb = if val(p[1]).shape() == g.shape() {
                        g.clone()
                    } else {
                        col_sums(g)
                    };
                    out.push((p[1], gb.map(|v| sign * v)));
                }
            }
            Op::Mul => {
                out.push((p[0], g.zip_map(val(p[1]), |a, b| a * b)));
                out.push((p[1], g.zip_map(val(p[0]), |a, b| a * b)));
            }
            Op::Min => {
                let (a, b) = (val(p[0]), val(p[1]));
                let left = a.zip_map(b, |x, y| if x <= y { 1.0 } else { 0.0 });
                out.push((p[0], g.zip_map(&left, |gv, m| gv * m)));
                out.push((p[1], g.zip_map(&left, |gv, m| gv * (1.0 - m))));
            }
            Op::Tanh => out.push((p[0], g.zip_map(y, |gv, t| gv * (1.0 - t * t)))),
            Op::Sigmoid => out.push((p[0], g.zip_map(y, |gv, s| gv * s * (1.0 - s)))),
            Op::Exp => out.push((p[0], g.zip_map(y, |gv, e| gv * e))),
            Op::Log => out.push((p[0], g.zip_map(val(p[0]), |gv, a| gv / a))),
            Op::Neg => out.push((p[0], g.map(|gv| -gv))),
            Op::Square => out.push((p[0], g.zip_map(val(p[0]), |gv, a| 2.0 * a * gv))),
            Op::Softplus => out.push((p[0], g.zip_map(val(p[0]), |gv, a| gv * sigmoid(a)))),
            Op::LeakyRelu(s) => {
                let s = *s;
                out.push((p[0], g.zip_map(val(p[0]), |gv, a| gv * leaky_deriv(a, s))));
            }
            Op::Clamp(lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                out.push((
                    p[0],
                    g.zip_map(val(p[0]), |gv, a| if a >= lo && a <= hi { gv } else { 0.0 }),
                ));
            }
            Op::Scale(c) => {
                let c = *c;
                out.push((p[0], g.map(|gv| c * gv)));
            }
            Op::AddScalar(_) => out.push((p[0], g.clone())),
            Op::Transpose => out.push((p[0], g.transpose())),
            Op::Sum | Op::Mean => {
                let x = val(p[0]);
                let scale = if node.op == Op::Mean {
                    1.0 / x.len() as f64
                } else {
                    1.0
                };
                out.push((p[0], Tensor2::filled(x.rows(), x.cols(), g.item() * scale)));
            }
            Op::SumCols => {
                let x = val(p[0]);
                let mut gx = Tensor2::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let gr = g.get(r, 0);
                    gx.row_mut(r).iter_mut().for_each(|v| *v = gr);
                }
                out.push((p[0], gx));
            }
            Op::MeanRows => {
                let x = val(p[0]);
                let n = x.rows() as f64;
                let mut gx = Tensor2::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    for (v, gc) in gx.row_mut(r).iter_mut().zip(g.data()) {
                        *v = gc / n;
                    }
                }
                out.push((p[0], gx));
            }
            Op::SliceCols(start, _) => {
                let x = val(p[0]);
                let mut gx = Tensor2::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                out.push((p[0], gx));
            }
        }
        Ok(out)
    }
}
