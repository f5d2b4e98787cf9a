//! Reverse-mode differentiation over [`Tensor2`] values.
//!
//! A [`Tape`] records every primitive applied during a forward pass along
//! with its output. [`Tape::backward`] walks the record in reverse and
//! accumulates vector-Jacobian products into each node. A tape can be
//! differentiated once; a second call is a [`Error::TapeConsumed`] error.

use super::tensor::{order_free_sum, sigmoid, softmax, Tensor2};
use crate::error::{Error, Result};

/// Floor applied inside logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    Sum(Var),
    DivScalar(Var, Var),
    Reshape(Var),
    ConcatCols(Var, Var),
    WeightedPool(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor2,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`], one per recorded node that
/// depends on a parameter.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `v`. Parameters that do not influence the
    /// output get an all-zero gradient of their own shape.
    pub fn wrt(&self, v: Var) -> Tensor2 {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor2::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    /// First element of a recorded value; handy for `1 x 1` outputs.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor2, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn constant(&mut self, t: Tensor2) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, t: Tensor2) -> Var {
        self.push(t, Op::Param, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        let g = self.grad_of(&[a, b]);
        Ok(self.push(v, Op::MatMul(a, b), g))
    }

    /// `x + b` with the `1 x c` row `b` broadcast over the rows of `x`.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::Shape(format!(
                "bias {}x{} does not broadcast over {}x{}",
                bv.rows(),
                bv.cols(),
                xv.rows(),
                xv.cols()
            )));
        }
        let mut out = xv.clone();
        let cols = out.cols();
        for r in 0..out.rows() {
            for c in 0..cols {
                out.set(r, c, out.get(r, c) + bv.data()[c]);
            }
        }
        let g = self.grad_of(&[x, b]);
        Ok(self.push(out, Op::AddRowBias(x, b), g))
    }

    /// `x W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row_bias(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let g = self.grad_of(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let g = self.grad_of(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), g))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let g = self.grad_of(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), g))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x * k);
        let g = self.grad_of(&[a]);
        self.push(v, Op::Scale(a, k), g)
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x + k);
        let g = self.grad_of(&[a]);
        self.push(v, Op::AddConst(a), g)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        let g = self.grad_of(&[a]);
        self.push(v, Op::Tanh(a), g)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let g = self.grad_of(&[a]);
        self.push(v, Op::Sigmoid(a), g)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        let g = self.grad_of(&[a]);
        self.push(v, Op::Exp(a), g)
    }

    /// Natural log with inputs clamped below at [`LOG_FLOOR`]; the clamped
    /// region has zero gradient.
    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(LOG_FLOOR).ln());
        let g = self.grad_of(&[a]);
        self.push(v, Op::Log(a), g)
    }

    /// Softmax over all entries of `a`, keeping its shape.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = av.shape();
        let v = Tensor2::from_vec(r, c, softmax(av.data())?)?;
        let g = self.grad_of(&[a]);
        Ok(self.push(v, Op::Softmax(a), g))
    }

    /// Sum of all entries as a `1 x 1` value.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let g = self.grad_of(&[a]);
        self.push(Tensor2::scalar(s), Op::Sum(a), g)
    }

    /// `a / s` for a `1 x 1` value `s`.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.len() != 1 {
            return Err(Error::Shape(format!(
                "divisor must be 1x1, got {}x{}",
                sv.rows(),
                sv.cols()
            )));
        }
        let d = sv.data()[0];
        let v = self.value(a).map(|x| x / d);
        let g = self.grad_of(&[a, s]);
        Ok(self.push(v, Op::DivScalar(a, s), g))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = self.value(a).clone().reshaped(rows, cols)?;
        let g = self.grad_of(&[a]);
        Ok(self.push(v, Op::Reshape(a), g))
    }

    /// Horizontal concatenation of two tensors with equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::Shape(format!(
                "concat of {} rows with {} rows",
                av.rows(),
                bv.rows()
            )));
        }
        let cols = av.cols() + bv.cols();
        let mut data = Vec::with_capacity(av.rows() * cols);
        for r in 0..av.rows() {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let v = Tensor2::from_vec(av.rows(), cols, data)?;
        let g = self.grad_of(&[a, b]);
        Ok(self.push(v, Op::ConcatCols(a, b), g))
    }

    /// `sum_k w_k z_k` as a `1 x d` row, for `n` weights and an `n x d`
    /// matrix. The reduction over `k` is order free, so permuting the
    /// instances (with their weights) gives bitwise-identical output.
    pub fn weighted_pool(&mut self, weights: Var, z: Var) -> Result<Var> {
        let (wv, zv) = (self.value(weights), self.value(z));
        if wv.len() != zv.rows() {
            return Err(Error::Shape(format!(
                "{} pooling weights for {} instances",
                wv.len(),
                zv.rows()
            )));
        }
        let (n, d) = zv.shape();
        let mut terms = vec![0.0; n];
        let mut out = Vec::with_capacity(d);
        for c in 0..d {
            for (k, t) in terms.iter_mut().enumerate() {
                *t = wv.data()[k] * zv.get(k, c);
            }
            out.push(order_free_sum(&mut terms));
        }
        let v = Tensor2::row_vector(&out);
        let g = self.grad_of(&[weights, z]);
        Ok(self.push(v, Op::WeightedPool(weights, z), g))
    }

    /// Reverse pass from `output`, seeded with `seed` (same shape as the
    /// output). Consumes the tape.
    pub fn backward(&mut self, output: Var, seed: &Tensor2) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.consumed = true;
        self.value(output).expect_same_shape(seed, "backward seed")?;

        let mut grads: Vec<Option<Tensor2>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed.clone());

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let y = &node.value;
            let mut acc = |v: Var, contrib: Tensor2| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            };
            match node.op {
                Op::Constant | Op::Param => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    if self.nodes[a.0].needs_grad {
                        acc(a, g.matmul(&bv.transpose())?);
                    }
                    if self.nodes[b.0].needs_grad {
                        acc(b, av.transpose().matmul(&g)?);
                    }
                }
                Op::AddRowBias(x, b) => {
                    let mut db = vec![0.0; g.cols()];
                    for r in 0..g.rows() {
                        for (s, v) in db.iter_mut().zip(g.row(r)) {
                            *s += v;
                        }
                    }
                    acc(b, Tensor2::row_vector(&db));
                    acc(x, g);
                }
                Op::Add(a, b) => {
                    acc(a, g.clone());
                    acc(b, g);
                }
                Op::Sub(a, b) => {
                    acc(b, g.map(|x| -x));
                    acc(a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(a, g.zip_map(bv, |x, y| x * y)?);
                    acc(b, g.zip_map(av, |x, y| x * y)?);
                }
                Op::Scale(a, k) => acc(a, g.map(|x| x * k)),
                Op::AddConst(a) => acc(a, g),
                Op::Tanh(a) => acc(a, g.zip_map(y, |g, y| g * (1.0 - y * y))?),
                Op::Sigmoid(a) => acc(a, g.zip_map(y, |g, y| g * y * (1.0 - y))?),
                Op::Exp(a) => acc(a, g.zip_map(y, |g, y| g * y)?),
                Op::Log(a) => {
                    let x = &self.nodes[a.0].value;
                    acc(
                        a,
                        g.zip_map(x, |g, x| if x > LOG_FLOOR { g / x } else { 0.0 })?,
                    );
                }
                Op::Softmax(a) => {
                    let dot: f64 = g.data().iter().zip(y.data()).map(|(g, y)| g * y).sum();
                    acc(a, g.zip_map(y, |g, y| y * (g - dot))?);
                }
                Op::Sum(a) => {
                    let (r, c) = self.nodes[a.0].value.shape();
                    acc(a, Tensor2::filled(r, c, g.data()[0]));
                }
                Op::DivScalar(a, s) => {
                    let d = self.nodes[s.0].value.data()[0];
                    let av = &self.nodes[a.0].value;
                    let ds: f64 = g
                        .data()
                        .iter()
                        .zip(av.data())
                        .map(|(g, x)| -g * x / (d * d))
                        .sum();
                    acc(s, Tensor2::scalar(ds));
                    acc(a, g.map(|x| x / d));
                }
                Op::Reshape(a) => {
                    let (r, c) = self.nodes[a.0].value.shape();
                    acc(a, g.reshaped(r, c)?);
                }
                Op::ConcatCols(a, b) => {
                    let ac = self.nodes[a.0].value.cols();
                    let bc = self.nodes[b.0].value.cols();
                    let mut ga = Vec::with_capacity(g.rows() * ac);
                    let mut gb = Vec::with_capacity(g.rows() * bc);
                    for r in 0..g.rows() {
                        let row = g.row(r);
                        ga.extend_from_slice(&row[..ac]);
                        gb.extend_from_slice(&row[ac..]);
                    }
                    acc(a, Tensor2::from_vec(g.rows(), ac, ga)?);
                    acc(b, Tensor2::from_vec(g.rows(), bc, gb)?);
                }
                Op::WeightedPool(w, z) => {
                    let (wv, zv) = (&self.nodes[w.0].value, &self.nodes[z.0].value);
                    let (n, d) = zv.shape();
                    if self.nodes[w.0].needs_grad {
                        let dw: Vec<f64> = (0..n)
                            .map(|k| zv.row(k).iter().zip(g.data()).map(|(z, g)| z * g).sum())
                            .collect();
                        let (r, c) = wv.shape();
                        acc(w, Tensor2::from_vec(r, c, dw)?);
                    }
                    if self.nodes[z.0].needs_grad {
                        let mut dz = Tensor2::zeros(n, d);
                        for k in 0..n {
                            for c in 0..d {
                                dz.set(k, c, wv.data()[k] * g.data()[c]);
                            }
                        }
                        acc(z, dz);
                    }
                }
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| if matches!(n.op, Op::Param) { g } else { None })
            .collect();
        Ok(Gradients { grads, shapes })
    }
}
