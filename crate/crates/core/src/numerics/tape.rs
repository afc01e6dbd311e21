//! Reverse-mode differentiation over a linear record of array operations.
//!
//! Every call on [`Tape`] evaluates one primitive eagerly and appends it to the
//! record. [`Tape::backward`] walks the record in reverse and accumulates
//! adjoints for the registered parameters.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::array::{matmul_nt_into, matmul_tn_into, Array};
use super::params::{Gradients, ParamSet};
use crate::error::{Error, Result};

/// Upper bound applied to `exp` inputs.
pub const EXP_INPUT_MAX: f64 = 50.0;
/// Lower bound applied to `log` inputs.
pub const LOG_INPUT_MIN: f64 = 1e-30;
/// Gather index that produces a zero (used for convolution padding).
pub const GATHER_ZERO: u32 = u32::MAX;

/// Handle to a node of a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One recorded primitive.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// Hadamard product.
    Mul(Var, Var),
    /// Adds a bias row to every row of a matrix.
    AddRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    /// Column-wise concatenation.
    Concat(Vec<Var>),
    /// Column range `start..end`.
    Slice { x: Var, start: usize, end: usize },
    Sum(Var),
    Gather { x: Var, index: Vec<u32>, shape: Vec<usize> },
    Reshape { x: Var, shape: Vec<usize> },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "hadamard",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::Sum(_) => "sum",
            Op::Gather { .. } => "gather",
            Op::Reshape { .. } => "reshape",
        }
    }

    pub fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Constant | Op::Param(_) => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(x, _)
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Relu(x)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Sum(x)
            | Op::Slice { x, .. }
            | Op::Gather { x, .. }
            | Op::Reshape { x, .. } => vec![*x],
            Op::Concat(xs) => xs.clone(),
        }
    }
}

struct Node {
    value: Array,
    op: Op,
    needs_grad: bool,
}

/// The computation record.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_names: Vec<String>,
    param_vars: Vec<Var>,
    clamp_events: usize,
}

impl core::fmt::Debug for Tape {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.len())
            .field("params", &self.param_names)
            .field("clamp_events", &self.clamp_events)
            .finish()
    }
}

fn same_shape(op: &'static str, a: &Array, b: &Array) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Evaluates `op` given a lookup for its operands; returns the value and
/// the number of clamped entries.
fn eval_op<'a>(op: &Op, get: impl Fn(Var) -> &'a Array) -> Result<(Array, usize)> {
    let mut clamps = 0;
    let out = match op {
        Op::Constant | Op::Param(_) => {
            return Err(Error::Contract("leaf nodes have no operands".to_string()))
        }
        Op::MatMul(a, b) => get(*a).matmul(get(*b))?,
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            let (x, y) = (get(*a), get(*b));
            same_shape(op.name(), x, y)?;
            let vals = x.values().iter().zip(y.values());
            let v: Vec<f64> = match op {
                Op::Add(..) => vals.map(|(p, q)| p + q).collect(),
                Op::Sub(..) => vals.map(|(p, q)| p - q).collect(),
                _ => vals.map(|(p, q)| p * q).collect(),
            };
            x.with_values(v)
        }
        Op::AddRow(a, b) => {
            let (x, bias) = (get(*a), get(*b));
            let c = x.cols();
            if bias.len() != c {
                return Err(Error::dim("add_row", x.shape(), bias.shape()));
            }
            let mut v = x.values().to_vec();
            for row in v.chunks_mut(c) {
                for (o, bv) in row.iter_mut().zip(bias.values()) {
                    *o += bv;
                }
            }
            x.with_values(v)
        }
        Op::Scale(a, s) => get(*a).map(|v| v * s),
        Op::Sigmoid(a) => get(*a).map(sigmoid),
        Op::Tanh(a) => get(*a).map(libm::tanh),
        Op::Relu(a) => get(*a).map(|v| if v > 0.0 { v } else { 0.0 }),
        Op::Exp(a) => {
            let x = get(*a);
            let v = x
                .values()
                .iter()
                .map(|&v| {
                    if v > EXP_INPUT_MAX {
                        clamps += 1;
                        libm::exp(EXP_INPUT_MAX)
                    } else {
                        libm::exp(v)
                    }
                })
                .collect();
            x.with_values(v)
        }
        Op::Log(a) => {
            let x = get(*a);
            let v = x
                .values()
                .iter()
                .map(|&v| {
                    if v < LOG_INPUT_MIN || v.is_nan() {
                        clamps += 1;
                        libm::log(LOG_INPUT_MIN)
                    } else {
                        libm::log(v)
                    }
                })
                .collect();
            x.with_values(v)
        }
        Op::Concat(xs) => {
            let first = xs
                .first()
                .ok_or_else(|| Error::Contract("concat of nothing".to_string()))?;
            let rows = get(*first).rows();
            let mut total = 0;
            for x in xs {
                let a = get(*x);
                if a.rows() != rows {
                    return Err(Error::dim("concat", get(*first).shape(), a.shape()));
                }
                total += a.cols();
            }
            let mut v = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for x in xs {
                    v.extend_from_slice(get(*x).row_slice(r));
                }
            }
            Array::matrix(rows, total, v)?
        }
        Op::Slice { x, start, end } => {
            let a = get(*x);
            if start >= end || *end > a.cols() {
                return Err(Error::dim("slice", a.shape(), &[*start, *end]));
            }
            let mut v = Vec::with_capacity(a.rows() * (end - start));
            for r in 0..a.rows() {
                v.extend_from_slice(&a.row_slice(r)[*start..*end]);
            }
            Array::matrix(a.rows(), end - start, v)?
        }
        Op::Sum(a) => Array::scalar(get(*a).sum()),
        Op::Gather { x, index, shape } => {
            let a = get(*x);
            let n: usize = shape.iter().product();
            if n != index.len() {
                return Err(Error::dim("gather", shape, &[index.len()]));
            }
            let src = a.values();
            let mut v = Vec::with_capacity(n);
            for &i in index {
                if i == GATHER_ZERO {
                    v.push(0.0);
                } else {
                    let i = i as usize;
                    if i >= src.len() {
                        return Err(Error::dim("gather", a.shape(), &[i]));
                    }
                    v.push(src[i]);
                }
            }
            Array::new(shape.clone(), v)?
        }
        Op::Reshape { x, shape } => get(*x).reshaped(shape.clone())?,
    };
    if !out.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite output from {}",
            op.name()
        )));
    }
    Ok((out, clamps))
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

    /// Number of `exp`/`log` inputs clamped so far.
    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    /// Handles of every recorded node, in recording order.
    pub fn vars(&self) -> impl Iterator<Item = Var> {
        (0..self.len()).map(Var)
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn constant(&mut self, value: Array) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numerical("non-finite constant".to_string()));
        }
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            needs_grad: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Registers a differentiable leaf. Names must be unique within a tape.
    pub fn param(&mut self, name: &str, value: Array) -> Result<Var> {
        if self.param_names.iter().any(|n| n == name) {
            return Err(Error::Contract(format!("duplicate parameter id {name:?}")));
        }
        if !value.is_finite() {
            return Err(Error::Numerical(format!("non-finite parameter {name:?}")));
        }
        self.nodes.push(Node {
            value,
            op: Op::Param(self.param_names.len()),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_names.push(name.to_string());
        self.param_vars.push(v);
        Ok(v)
    }

    /// Registers every entry of `params` and returns the name → handle map.
    pub fn params(&mut self, params: &ParamSet) -> Result<BTreeMap<String, Var>> {
        let mut out = BTreeMap::new();
        for (name, value) in params.iter() {
            out.insert(name.to_string(), self.param(name, value.clone())?);
        }
        Ok(out)
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let (value, clamps) = eval_op(&op, |v| &self.nodes[v.0].value)?;
        self.clamp_events += clamps;
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.push(Op::AddRow(x, bias))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.push(Op::Scale(x, s))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Log(x))
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.len() == 1 {
            return Ok(xs[0]);
        }
        self.push(Op::Concat(xs.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        self.push(Op::Slice { x, start, end })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sum(x))
    }

    /// `out[i] = x.flat[index[i]]`, or zero where `index[i] == GATHER_ZERO`.
    pub fn gather(&mut self, x: Var, index: Vec<u32>, shape: Vec<usize>) -> Result<Var> {
        self.push(Op::Gather { x, index, shape })
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        self.push(Op::Reshape { x, shape })
    }

    /// Sum of squares of `x` as a scalar node.
    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        let sq = self.mul(x, x)?;
        self.sum(sq)
    }

    /// Recomputes every node from the leaves.
    pub fn replay(&self) -> Result<Vec<Array>> {
        let mut values: Vec<Array> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Constant | Op::Param(_) => node.value.clone(),
                ref op => eval_op(op, |v| &values[v.0])?.0,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// True when replaying reproduces every stored value bit for bit.
    pub fn replay_is_bitwise_identical(&self) -> Result<bool> {
        let values = self.replay()?;
        Ok(values.iter().zip(&self.nodes).all(|(a, n)| {
            a.shape() == n.value.shape()
                && a.values()
                    .iter()
                    .zip(n.value.values())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
        }))
    }

    /// Gradient of the scalar `output` with respect to every parameter.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_node = &self.nodes[output.0];
        if out_node.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(vec![1.0]);

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut out = Gradients::default();
        for (name, var) in self.param_names.iter().zip(&self.param_vars) {
            let shape = self.nodes[var.0].value.shape().to_vec();
            let g = match grads.get(var.0).and_then(|g| g.clone()) {
                Some(v) => Array::new(shape, v)?,
                None => Array::zeros(&shape),
            };
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &nodes[v.0];
            if !n.needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]);
            f(slot);
        };
        let val = |v: Var| nodes[v.0].value.values();
        let out = node.value.values();
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                acc(*a, &mut |ga| matmul_nt_into(g, bv.values(), ga, m, n, k));
                acc(*b, &mut |gb| matmul_tn_into(av.values(), g, gb, m, k, n));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_assign(ga, g));
                acc(*b, &mut |gb| add_assign(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_assign(ga, g));
                acc(*b, &mut |gb| {
                    for (o, d) in gb.iter_mut().zip(g) {
                        *o -= d;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for ((o, d), y) in ga.iter_mut().zip(g).zip(bv) {
                        *o += d * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, d), x) in gb.iter_mut().zip(g).zip(av) {
                        *o += d * x;
                    }
                });
            }
            Op::AddRow(x, b) => {
                acc(*x, &mut |gx| add_assign(gx, g));
                let c = node.value.cols();
                acc(*b, &mut |gb| {
                    for row in g.chunks(c) {
                        add_assign(gb, row);
                    }
                });
            }
            Op::Scale(x, s) => acc(*x, &mut |gx| {
                for (o, d) in gx.iter_mut().zip(g) {
                    *o += s * d;
                }
            }),
            Op::Sigmoid(x) => acc(*x, &mut |gx| {
                for ((o, d), y) in gx.iter_mut().zip(g).zip(out) {
                    *o += d * y * (1.0 - y);
                }
            }),
            Op::Tanh(x) => acc(*x, &mut |gx| {
                for ((o, d), y) in gx.iter_mut().zip(g).zip(out) {
                    *o += d * (1.0 - y * y);
                }
            }),
            Op::Relu(x) => {
                let xv = val(*x);
                acc(*x, &mut |gx| {
                    for ((o, d), xi) in gx.iter_mut().zip(g).zip(xv) {
                        if *xi > 0.0 {
                            *o += d;
                        }
                    }
                })
            }
            Op::Exp(x) => {
                let xv = val(*x);
                acc(*x, &mut |gx| {
                    for (((o, d), y), xi) in gx.iter_mut().zip(g).zip(out).zip(xv) {
                        if *xi <= EXP_INPUT_MAX {
                            *o += d * y;
                        }
                    }
                })
            }
            Op::Log(x) => {
                let xv = val(*x);
                acc(*x, &mut |gx| {
                    for ((o, d), xi) in gx.iter_mut().zip(g).zip(xv) {
                        if *xi >= LOG_INPUT_MIN {
                            *o += d / xi;
                        }
                    }
                })
            }
            Op::Concat(xs) => {
                let total = node.value.cols();
                let mut offset = 0;
                for x in xs {
                    let c = nodes[x.0].value.cols();
                    acc(*x, &mut |gx| {
                        for (r, row) in gx.chunks_mut(c).enumerate() {
                            let src = &g[r * total + offset..r * total + offset + c];
                            add_assign(row, src);
                        }
                    });
                    offset += c;
                }
            }
            Op::Slice { x, start, end } => {
                let c = nodes[x.0].value.cols();
                let w = end - start;
                acc(*x, &mut |gx| {
                    for (r, row) in gx.chunks_mut(c).enumerate() {
                        add_assign(&mut row[*start..*end], &g[r * w..(r + 1) * w]);
                    }
                })
            }
            Op::Sum(x) => acc(*x, &mut |gx| {
                for o in gx.iter_mut() {
                    *o += g[0];
                }
            }),
            Op::Gather { x, index, .. } => acc(*x, &mut |gx| {
                for (&i, d) in index.iter().zip(g) {
                    if i != GATHER_ZERO {
                        gx[i as usize] += d;
                    }
                }
            }),
            Op::Reshape { x, .. } => acc(*x, &mut |gx| add_assign(gx, g)),
        }
    }
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (o, s) in dst.iter_mut().zip(src) {
        *o += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_has_gradient_six_at_three() {
        let mut t = Tape::new();
        let x = t.param("x", Array::scalar(3.0)).unwrap();
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get("x").unwrap().values(), &[6.0]);
    }

    #[test]
    fn tanh_slope_at_zero_is_one() {
        let mut t = Tape::new();
        let x = t.param("x", Array::scalar(0.0)).unwrap();
        let y = t.tanh(x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get("x").unwrap().values(), &[1.0]);
    }

    #[test]
    fn sum_of_matmul_gradient() {
        let mut t = Tape::new();
        let x = t.constant(Array::row(vec![1.0, 2.0])).unwrap();
        let w = t.param("w", Array::zeros(&[2, 2])).unwrap();
        let y = t.matmul(x, w).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get("w").unwrap().values(), &[1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.param("x", Array::row(vec![1.0, 2.0])).unwrap();
        let y = t.tanh(x).unwrap();
        assert!(matches!(t.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn duplicate_param_rejected() {
        let mut t = Tape::new();
        t.param("w", Array::scalar(1.0)).unwrap();
        assert!(t.param("w", Array::scalar(2.0)).is_err());
    }

    #[test]
    fn exp_and_log_clamp_and_count() {
        let mut t = Tape::new();
        let x = t.param("x", Array::row(vec![1000.0, 0.0])).unwrap();
        let e = t.exp(x).unwrap();
        assert_eq!(t.value(e).values()[0], libm::exp(EXP_INPUT_MAX));
        assert_eq!(t.clamp_events(), 1);
        let z = t.constant(Array::row(vec![0.0, -1.0])).unwrap();
        let l = t.log(z).unwrap();
        assert_eq!(t.value(l).values()[0], libm::log(LOG_INPUT_MIN));
        assert_eq!(t.clamp_events(), 3);
        let s = t.sum(e).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get("x").unwrap().values(), &[0.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut t = Tape::new();
        let a = t.constant(Array::zeros(&[2, 3])).unwrap();
        let b = t.constant(Array::zeros(&[3, 2])).unwrap();
        assert!(matches!(t.add(a, b), Err(Error::Dimension { .. })));
        assert!(matches!(t.mul(a, b), Err(Error::Dimension { .. })));
        let bias = t.constant(Array::zeros(&[2])).unwrap();
        assert!(t.add_row(a, bias).is_err());
    }

    #[test]
    fn gather_scatter_roundtrip() {
        let mut t = Tape::new();
        let x = t.param("x", Array::row(vec![1.0, 2.0, 3.0])).unwrap();
        let y = t
            .gather(x, vec![2, GATHER_ZERO, 2, 0], vec![2, 2])
            .unwrap();
        assert_eq!(t.value(y).values(), &[3.0, 0.0, 3.0, 1.0]);
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get("x").unwrap().values(), &[1.0, 0.0, 2.0]);
    }

    #[test]
    fn replay_is_bitwise() {
        let mut t = Tape::new();
        let x = t.param("x", Array::row(vec![0.3, -1.2, 2.0])).unwrap();
        let w = t
            .param("w", Array::matrix(3, 2, vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]).unwrap())
            .unwrap();
        let h = t.matmul(x, w).unwrap();
        let s = t.sigmoid(h).unwrap();
        let e = t.exp(s).unwrap();
        let l = t.log(e).unwrap();
        let c = t.concat(&[l, s]).unwrap();
        let _ = t.sum(c).unwrap();
        assert!(t.replay_is_bitwise_identical().unwrap());
    }
}
