//! Define-by-run tape for reverse-mode differentiation.
//!
//! Every primitive evaluates eagerly and appends one node. Nodes only refer
//! to earlier nodes, so a reverse sweep over the node list is a valid
//! topological order for the backward pass. Random draws (dropout masks,
//! Gaussian noise) are recorded as constants so that backward stays
//! deterministic.

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operations understood by the tape.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// `[m,k] x [k,n] -> [m,n]`
    MatMul,
    /// `[m,n] x [n] -> [m]`
    MatVec,
    Add,
    Sub,
    /// Elementwise product of equally shaped tensors.
    Mul,
    /// Multiplication by a fixed scalar.
    Scale(f64),
    /// Multiplication of a tensor by a one-element tensor on the tape.
    ScaleBy,
    /// Concatenation along the first axis.
    Concat,
    /// `len` entries of the first axis starting at `start`.
    Slice { start: usize, len: usize },
    Sum,
    Mean,
    Exp,
    Log,
    Sigmoid,
    Tanh,
    /// Softmax along the last axis, max-shifted.
    Softmax,
    SquaredNorm,
    /// Clamp to `[lo, hi]`; the gradient is zero outside the interval.
    Clamp { lo: f64, hi: f64 },
}

impl Primitive {
    fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::MatVec => "matvec",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale(_) => "scale",
            Primitive::ScaleBy => "scale_by",
            Primitive::Concat => "concat",
            Primitive::Slice { .. } => "slice",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::Softmax => "softmax",
            Primitive::SquaredNorm => "squared_norm",
            Primitive::Clamp { .. } => "clamp",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::MatMul
            | Primitive::MatVec
            | Primitive::Add
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::ScaleBy => Some(2),
            Primitive::Concat => None,
            _ => Some(1),
        }
    }
}

#[derive(Clone, Debug)]
enum Kind {
    Leaf,
    Constant,
    Op(Primitive),
}

#[derive(Clone, Debug)]
struct Node {
    kind: Kind,
    inputs: Vec<Var>,
    requires_grad: bool,
    value: Tensor,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(values: &[f64], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    for row in values.chunks(cols) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut total = 0.0;
        for &x in row {
            let e = (x - max).exp();
            total += e;
            out.push(e);
        }
        for e in &mut out[start..] {
            *e /= total;
        }
    }
    out
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

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Kind::Leaf, Vec::new(), true, value)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Kind::Constant, Vec::new(), false, value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.values()[0]
    }

    /// Gradient stored on a leaf by the last [`Tape::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].kind, Kind::Leaf)
    }

    fn push(&mut self, kind: Kind, inputs: Vec<Var>, requires_grad: bool, value: Tensor) -> Var {
        self.nodes.push(Node {
            kind,
            inputs,
            requires_grad,
            value,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn vals(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.values()
    }

    /// Evaluates `op` on `inputs` and records the result.
    pub fn apply(&mut self, op: Primitive, inputs: &[Var]) -> Result<Var> {
        if let Some(n) = op.arity() {
            if inputs.len() != n {
                return Err(Error::invalid(format!(
                    "{} expects {n} inputs, got {}",
                    op.name(),
                    inputs.len()
                )));
            }
        }
        let value = self.evaluate(&op, inputs)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(Kind::Op(op), inputs.to_vec(), requires_grad, value))
    }

    fn mismatch(&self, op: &Primitive, a: Var, b: Var) -> Error {
        Error::Shape {
            op: op.name(),
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    fn evaluate(&self, op: &Primitive, inputs: &[Var]) -> Result<Tensor> {
        use Primitive::*;
        match op {
            MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                let (sa, sb) = (self.shape(a), self.shape(b));
                if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                    return Err(self.mismatch(op, a, b));
                }
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (self.vals(a), self.vals(b));
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for p in 0..k {
                        let x = av[i * k + p];
                        let brow = &bv[p * n..(p + 1) * n];
                        for (o, &y) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                            *o += x * y;
                        }
                    }
                }
                Tensor::new(vec![m, n], out)
            }
            MatVec => {
                let (a, x) = (inputs[0], inputs[1]);
                let (sa, sx) = (self.shape(a), self.shape(x));
                if sa.len() != 2 || sx.len() != 1 || sa[1] != sx[0] {
                    return Err(self.mismatch(op, a, x));
                }
                let n = sa[1];
                let xv = self.vals(x);
                let out = self
                    .vals(a)
                    .chunks(n)
                    .map(|row| row.iter().zip(xv).map(|(w, x)| w * x).sum())
                    .collect();
                Ok(Tensor::vector(out))
            }
            Add | Sub | Mul => {
                let (a, b) = (inputs[0], inputs[1]);
                if self.shape(a) != self.shape(b) {
                    return Err(self.mismatch(op, a, b));
                }
                let f: fn(f64, f64) -> f64 = match op {
                    Add => |x, y| x + y,
                    Sub => |x, y| x - y,
                    _ => |x, y| x * y,
                };
                let out = self
                    .vals(a)
                    .iter()
                    .zip(self.vals(b))
                    .map(|(&x, &y)| f(x, y))
                    .collect();
                Tensor::new(self.shape(a).to_vec(), out)
            }
            Scale(c) => self.map(inputs[0], |x| c * x),
            ScaleBy => {
                let (s, a) = (inputs[0], inputs[1]);
                if self.vals(s).len() != 1 {
                    return Err(self.mismatch(op, s, a));
                }
                let c = self.vals(s)[0];
                self.map(a, |x| c * x)
            }
            Concat => {
                let first = *inputs
                    .first()
                    .ok_or_else(|| Error::invalid("concat needs at least one input"))?;
                let tail = self.shape(first)[1..].to_vec();
                let mut rows = 0;
                let mut out = Vec::new();
                for &v in inputs {
                    if self.shape(v)[1..] != tail[..] {
                        return Err(self.mismatch(op, first, v));
                    }
                    rows += self.shape(v)[0];
                    out.extend_from_slice(self.vals(v));
                }
                let mut shape = vec![rows];
                shape.extend(tail);
                Tensor::new(shape, out)
            }
            Slice { start, len } => {
                let a = inputs[0];
                let sa = self.shape(a);
                if start + len > sa[0] || *len == 0 {
                    return Err(Error::Shape {
                        op: op.name(),
                        lhs: sa.to_vec(),
                        rhs: vec![*start, *len],
                    });
                }
                let stride: usize = sa[1..].iter().product();
                let mut shape = sa.to_vec();
                shape[0] = *len;
                let out = self.vals(a)[start * stride..(start + len) * stride].to_vec();
                Tensor::new(shape, out)
            }
            Sum => Ok(Tensor::scalar(self.vals(inputs[0]).iter().sum())),
            Mean => {
                let v = self.vals(inputs[0]);
                Ok(Tensor::scalar(v.iter().sum::<f64>() / v.len() as f64))
            }
            Exp => self.map(inputs[0], f64::exp),
            Log => {
                let v = self.vals(inputs[0]);
                if let Some(bad) = v.iter().find(|&&x| !(x > 0.0)) {
                    return Err(Error::Domain {
                        op: op.name(),
                        detail: format!("log of non-positive value {bad}"),
                    });
                }
                self.map(inputs[0], f64::ln)
            }
            Sigmoid => self.map(inputs[0], sigmoid),
            Tanh => self.map(inputs[0], f64::tanh),
            Softmax => {
                let a = inputs[0];
                let cols = *self.shape(a).last().unwrap();
                Tensor::new(self.shape(a).to_vec(), softmax_rows(self.vals(a), cols))
            }
            SquaredNorm => Ok(Tensor::scalar(
                self.vals(inputs[0]).iter().map(|x| x * x).sum(),
            )),
            Clamp { lo, hi } => {
                if !(lo <= hi) {
                    return Err(Error::Domain {
                        op: op.name(),
                        detail: format!("empty interval [{lo}, {hi}]"),
                    });
                }
                let (lo, hi) = (*lo, *hi);
                self.map(inputs[0], |x| x.clamp(lo, hi))
            }
        }
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let out = self.vals(a).iter().map(|&x| f(x)).collect();
        Tensor::new(self.shape(a).to_vec(), out)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        self.apply(Primitive::MatVec, &[a, x])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Primitive::Scale(c), &[a])
    }
    pub fn scale_by(&mut self, s: Var, a: Var) -> Result<Var> {
        self.apply(Primitive::ScaleBy, &[s, a])
    }
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Primitive::Concat, parts)
    }
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.apply(Primitive::Slice { start, len }, &[a])
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sum, &[a])
    }
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Mean, &[a])
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Exp, &[a])
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Log, &[a])
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sigmoid, &[a])
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[a])
    }
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Softmax, &[a])
    }
    pub fn squared_norm(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::SquaredNorm, &[a])
    }
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.apply(Primitive::Clamp { lo, hi }, &[a])
    }

    /// `a · b` for equally shaped tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    /// Reverse sweep from a scalar `loss`, storing dLoss/dLeaf in every leaf's
    /// gradient slot. Leaves the loss does not depend on get a zero gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let Kind::Op(op) = &node.kind else {
                grads[idx] = Some(upstream);
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            for (input, g) in self.local_grads(op, &node.inputs, &node.value, &upstream) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        for (idx, node) in self.nodes.iter_mut().enumerate() {
            if let Kind::Leaf = node.kind {
                let g = grads
                    .get_mut(idx)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                node.value.set_grad(g);
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of one node with respect to each input.
    fn local_grads(
        &self,
        op: &Primitive,
        inputs: &[Var],
        out: &Tensor,
        dy: &[f64],
    ) -> Vec<(Var, Vec<f64>)> {
        use Primitive::*;
        let y = out.values();
        match op {
            MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                let (av, bv) = (self.vals(a), self.vals(b));
                let mut da = vec![0.0; m * k];
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    let dyr = &dy[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bv[p * n..(p + 1) * n];
                        da[i * k + p] = dyr.iter().zip(brow).map(|(g, b)| g * b).sum();
                        let x = av[i * k + p];
                        for (d, &g) in db[p * n..(p + 1) * n].iter_mut().zip(dyr) {
                            *d += x * g;
                        }
                    }
                }
                vec![(a, da), (b, db)]
            }
            MatVec => {
                let (a, x) = (inputs[0], inputs[1]);
                let n = self.shape(a)[1];
                let (av, xv) = (self.vals(a), self.vals(x));
                let mut da = vec![0.0; av.len()];
                let mut dx = vec![0.0; n];
                for (i, &g) in dy.iter().enumerate() {
                    let row = &av[i * n..(i + 1) * n];
                    for j in 0..n {
                        da[i * n + j] = g * xv[j];
                        dx[j] += row[j] * g;
                    }
                }
                vec![(a, da), (x, dx)]
            }
            Add => vec![(inputs[0], dy.to_vec()), (inputs[1], dy.to_vec())],
            Sub => vec![
                (inputs[0], dy.to_vec()),
                (inputs[1], dy.iter().map(|g| -g).collect()),
            ],
            Mul => {
                let (a, b) = (inputs[0], inputs[1]);
                let da = dy.iter().zip(self.vals(b)).map(|(g, y)| g * y).collect();
                let db = dy.iter().zip(self.vals(a)).map(|(g, x)| g * x).collect();
                vec![(a, da), (b, db)]
            }
            Scale(c) => vec![(inputs[0], dy.iter().map(|g| c * g).collect())],
            ScaleBy => {
                let (s, a) = (inputs[0], inputs[1]);
                let c = self.vals(s)[0];
                let ds = dy.iter().zip(self.vals(a)).map(|(g, x)| g * x).sum();
                vec![(s, vec![ds]), (a, dy.iter().map(|g| c * g).collect())]
            }
            Concat => {
                let mut offset = 0;
                inputs
                    .iter()
                    .map(|&v| {
                        let n = self.vals(v).len();
                        let g = dy[offset..offset + n].to_vec();
                        offset += n;
                        (v, g)
                    })
                    .collect()
            }
            Slice { start, .. } => {
                let a = inputs[0];
                let stride: usize = self.shape(a)[1..].iter().product();
                let mut da = vec![0.0; self.vals(a).len()];
                da[start * stride..start * stride + dy.len()].copy_from_slice(dy);
                vec![(a, da)]
            }
            Sum => vec![(inputs[0], vec![dy[0]; self.vals(inputs[0]).len()])],
            Mean => {
                let n = self.vals(inputs[0]).len();
                vec![(inputs[0], vec![dy[0] / n as f64; n])]
            }
            Exp => vec![(inputs[0], dy.iter().zip(y).map(|(g, y)| g * y).collect())],
            Log => vec![(
                inputs[0],
                dy.iter().zip(self.vals(inputs[0])).map(|(g, x)| g / x).collect(),
            )],
            Sigmoid => vec![(
                inputs[0],
                dy.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
            )],
            Tanh => vec![(
                inputs[0],
                dy.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
            )],
            Softmax => {
                let cols = *out.shape().last().unwrap();
                let mut dx = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(cols).zip(dy.chunks(cols)) {
                    let inner: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    dx.extend(yr.iter().zip(gr).map(|(y, g)| y * (g - inner)));
                }
                vec![(inputs[0], dx)]
            }
            SquaredNorm => vec![(
                inputs[0],
                self.vals(inputs[0]).iter().map(|x| 2.0 * x * dy[0]).collect(),
            )],
            Clamp { lo, hi } => vec![(
                inputs[0],
                dy.iter()
                    .zip(self.vals(inputs[0]))
                    .map(|(g, x)| if x >= lo && x <= hi { *g } else { 0.0 })
                    .collect(),
            )],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(0.0));
        let y = t.sigmoid(x).unwrap();
        assert_eq!(t.value(y).values(), &[0.5]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        for c in [-1e3, -3.5, 0.0, 7.25, 1e3] {
            let mut t = Tape::new();
            let x = t.constant(Tensor::vector(vec![c; 3]));
            let y = t.softmax(x).unwrap();
            assert!(close(t.value(y).values(), &[1.0 / 3.0; 3], 1e-15));
        }
    }

    #[test]
    fn softmax_of_log_integers() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1f64.ln(), 2f64.ln(), 3f64.ln()]));
        let y = t.softmax(x).unwrap();
        assert!(close(
            t.value(y).values(),
            &[1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0],
            1e-15
        ));
    }

    #[test]
    fn softmax_handles_extreme_logits() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1e300, -1e300, 0.0]));
        let y = t.softmax(x).unwrap();
        assert!(t.value(y).values().iter().all(|v| v.is_finite()));
        assert_eq!(t.value(y).values()[0], 1.0);
    }

    #[test]
    fn tanh_derivative_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(0.0));
        let y = t.tanh(x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x), Some(&[1.0][..]));
    }

    #[test]
    fn squared_norm_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![3.0, 4.0]));
        let y = t.squared_norm(x).unwrap();
        assert_eq!(t.scalar(y), 25.0);
        t.backward(y).unwrap();
        assert_eq!(t.grad(x), Some(&[6.0, 8.0][..]));
    }

    #[test]
    fn matmul_shape_error_names_primitive_and_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err();
        match err {
            Error::Shape { op, lhs, rhs } => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(t.log(x), Err(Error::Domain { op: "log", .. })));
        let y = t.constant(Tensor::vector(vec![-2.0]));
        assert!(matches!(t.log(y), Err(Error::Domain { .. })));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let unused = t.leaf(Tensor::vector(vec![5.0]));
        let y = t.sum(x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(unused), Some(&[0.0][..]));
        assert_eq!(t.grad(x), Some(&[1.0, 1.0][..]));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let m = t.constant(Tensor::vector(vec![0.0, 2.0]));
        let y = t.mul(x, m).unwrap();
        let s = t.sum(y).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x), Some(&[0.0, 2.0][..]));
        assert!(t.grad(m).is_none());
    }

    #[test]
    fn reused_node_accumulates() {
        // d/dx (x*x) = 2x
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.5, -2.0]));
        let y = t.mul(x, x).unwrap();
        let s = t.sum(y).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x), Some(&[3.0, -4.0][..]));
    }

    #[test]
    fn concat_and_slice() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let b = t.leaf(Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = t.concat(&[a, b]).unwrap();
        assert_eq!(t.value(c).shape(), &[3, 2]);
        let s = t.slice(c, 1, 2).unwrap();
        assert_eq!(t.value(s).values(), &[3.0, 4.0, 5.0, 6.0]);
        let n = t.sum(s).unwrap();
        t.backward(n).unwrap();
        assert_eq!(t.grad(a), Some(&[0.0, 0.0][..]));
        assert_eq!(t.grad(b), Some(&[1.0; 4][..]));
        assert!(t.slice(c, 2, 2).is_err());
    }

    #[test]
    fn clamp_blocks_gradient_outside_interval() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![-20.0, 0.5, 20.0]));
        let y = t.clamp(x, -10.0, 10.0).unwrap();
        assert_eq!(t.value(y).values(), &[-10.0, 0.5, 10.0]);
        let s = t.sum(y).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x), Some(&[0.0, 1.0, 0.0][..]));
    }
}
