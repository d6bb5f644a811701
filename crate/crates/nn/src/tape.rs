//! Reverse-mode differentiation over vector-valued nodes.
//!
//! A [`Tape`] records every forward operation together with its output value.
//! [`Tape::backward`] consumes the tape, so each recording yields exactly one
//! gradient pass.

use std::collections::HashSet;

use crate::error::{NnError, Result};
use crate::kernels;
use crate::params::{Grads, ParamId, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Affine {
        w: ParamId,
        b: Option<ParamId>,
        x: Var,
    },
    AffineRows {
        w: ParamId,
        b: Option<ParamId>,
        x: Var,
        rows: usize,
    },
    Transpose {
        x: Var,
        rows: usize,
        cols: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Min(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    OneMinus(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Square(Var),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Sum(Var),
    LogSoftmax(Var),
    Pick {
        x: Var,
        index: usize,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Tape<'a> {
    params: &'a ParamStore,
    nodes: Vec<Node>,
    frozen: HashSet<ParamId>,
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            frozen: HashSet::new(),
        }
    }

    pub fn params(&self) -> &'a ParamStore {
        self.params
    }

    /// Parameters whose name starts with `prefix` receive no gradient.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        for (id, p) in self.params.iter() {
            if p.name().starts_with(prefix) {
                self.frozen.insert(id);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// First element of a node; intended for scalar nodes.
    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn width(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.push(vec![value], Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.value(id).to_vec();
        self.push(value, Op::Param(id))
    }

    /// `W x + b` where `W` has shape `[out, in]`.
    pub fn affine(&mut self, w: ParamId, b: Option<ParamId>, x: Var) -> Result<Var> {
        let (out_dim, in_dim) = self.matrix_dims(w)?;
        if self.width(x) != in_dim {
            return Err(NnError::shape(
                format!("affine `{}`", self.params.get(w).name()),
                in_dim,
                self.width(x),
            ));
        }
        let mut out = vec![0.0; out_dim];
        kernels::affine(
            self.params.value(w),
            b.map(|b| self.params.value(b)),
            &self.nodes[x.0].value,
            &mut out,
        );
        Ok(self.push(out, Op::Affine { w, b, x }))
    }

    /// Applies the same affine map to every row of a row-major `rows × in` matrix.
    pub fn affine_rows(
        &mut self,
        w: ParamId,
        b: Option<ParamId>,
        x: Var,
        rows: usize,
    ) -> Result<Var> {
        let (out_dim, in_dim) = self.matrix_dims(w)?;
        if self.width(x) != rows * in_dim {
            return Err(NnError::shape(
                format!("row-wise affine `{}`", self.params.get(w).name()),
                rows * in_dim,
                self.width(x),
            ));
        }
        let mut out = vec![0.0; rows * out_dim];
        let wv = self.params.value(w);
        let bv = b.map(|b| self.params.value(b));
        let xv = &self.nodes[x.0].value;
        for r in 0..rows {
            kernels::affine(
                wv,
                bv,
                &xv[r * in_dim..(r + 1) * in_dim],
                &mut out[r * out_dim..(r + 1) * out_dim],
            );
        }
        Ok(self.push(out, Op::AffineRows { w, b, x, rows }))
    }

    pub fn transpose(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        if self.width(x) != rows * cols {
            return Err(NnError::shape("transpose", rows * cols, self.width(x)));
        }
        let out = kernels::transpose(&self.nodes[x.0].value, rows, cols);
        Ok(self.push(out, Op::Transpose { x, rows, cols }))
    }

    fn matrix_dims(&self, w: ParamId) -> Result<(usize, usize)> {
        let p = self.params.get(w);
        match p.shape() {
            [o, i] => Ok((*o, *i)),
            s => Err(NnError::Format(format!(
                "`{}` is not a matrix (shape {s:?})",
                p.name()
            ))),
        }
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.len(), vb.len(), "elementwise width mismatch");
        let out = va.iter().zip(vb).map(|(x, y)| f(*x, *y)).collect();
        self.push(out, op)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.nodes[x.0].value.iter().map(|v| f(*v)).collect();
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| if x <= y { x } else { y }, Op::Min(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::Offset(x))
    }

    pub fn one_minus(&mut self, x: Var) -> Var {
        self.unary(x, |v| 1.0 - v, Op::OneMinus(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, kernels::sigmoid, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, kernels::relu, Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::with_capacity(parts.iter().map(|p| self.width(*p)).sum());
        for p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(out, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        if start + len > self.width(x) {
            return Err(NnError::shape("slice", start + len, self.width(x)));
        }
        let out = self.nodes[x.0].value[start..start + len].to_vec();
        Ok(self.push(out, Op::Slice { x, start }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.iter().sum();
        self.push(vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.width(x).max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let out = kernels::log_softmax(&self.nodes[x.0].value);
        self.push(out, Op::LogSoftmax(x))
    }

    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        if index >= self.width(x) {
            return Err(NnError::shape("pick", index + 1, self.width(x)));
        }
        let v = self.nodes[x.0].value[index];
        Ok(self.push(vec![v], Op::Pick { x, index }))
    }

    /// Sum of scalar nodes.
    pub fn add_all(&mut self, terms: &[Var]) -> Var {
        let c = self.concat(terms);
        self.sum(c)
    }

    /// Exact reverse-mode gradients of `loss` for every parameter. Parameters
    /// not on the loss path (or frozen) get exactly zero.
    pub fn backward(self, loss: Var) -> Result<Grads> {
        if self.nodes.is_empty() {
            return Err(NnError::EmptyTape);
        }
        if loss.0 >= self.nodes.len() {
            return Err(NnError::ForeignVar);
        }
        if self.width(loss) != 1 {
            return Err(NnError::NonScalarLoss(self.width(loss)));
        }
        let mut pgrads = Grads::zeros_like(self.params);
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    if !self.frozen.contains(id) {
                        kernels::axpy(1.0, &g, pgrads.get_mut(*id));
                    }
                }
                Op::Affine { w, b, x } => {
                    let xv = &self.nodes[x.0].value;
                    let wv = self.params.value(*w);
                    let cols = xv.len();
                    if !self.frozen.contains(w) {
                        let gw = pgrads.get_mut(*w);
                        for (r, gr) in g.iter().enumerate() {
                            if *gr != 0.0 {
                                kernels::axpy(*gr, xv, &mut gw[r * cols..(r + 1) * cols]);
                            }
                        }
                    }
                    if let Some(b) = b {
                        if !self.frozen.contains(b) {
                            kernels::axpy(1.0, &g, pgrads.get_mut(*b));
                        }
                    }
                    if self.needs_grad(*x) {
                        let gx = slot(&mut grads, *x, cols);
                        for (r, gr) in g.iter().enumerate() {
                            if *gr != 0.0 {
                                kernels::axpy(*gr, &wv[r * cols..(r + 1) * cols], gx);
                            }
                        }
                    }
                }
                Op::AffineRows { w, b, x, rows } => {
                    let xv = &self.nodes[x.0].value;
                    let wv = self.params.value(*w);
                    let in_dim = xv.len() / rows;
                    let out_dim = g.len() / rows;
                    if !self.frozen.contains(w) {
                        let gw = pgrads.get_mut(*w);
                        for r in 0..*rows {
                            let xr = &xv[r * in_dim..(r + 1) * in_dim];
                            for o in 0..out_dim {
                                let go = g[r * out_dim + o];
                                if go != 0.0 {
                                    kernels::axpy(go, xr, &mut gw[o * in_dim..(o + 1) * in_dim]);
                                }
                            }
                        }
                    }
                    if let Some(b) = b {
                        if !self.frozen.contains(b) {
                            let gb = pgrads.get_mut(*b);
                            for r in 0..*rows {
                                kernels::axpy(1.0, &g[r * out_dim..(r + 1) * out_dim], gb);
                            }
                        }
                    }
                    if self.needs_grad(*x) {
                        let gx = slot(&mut grads, *x, xv.len());
                        for r in 0..*rows {
                            let gxr = &mut gx[r * in_dim..(r + 1) * in_dim];
                            for o in 0..out_dim {
                                let go = g[r * out_dim + o];
                                if go != 0.0 {
                                    kernels::axpy(go, &wv[o * in_dim..(o + 1) * in_dim], gxr);
                                }
                            }
                        }
                    }
                }
                Op::Transpose { x, rows, cols } => {
                    let back = kernels::transpose(&g, *cols, *rows);
                    kernels::axpy(1.0, &back, slot(&mut grads, *x, back.len()));
                }
                Op::Add(a, b) => {
                    kernels::axpy(1.0, &g, slot(&mut grads, *a, g.len()));
                    kernels::axpy(1.0, &g, slot(&mut grads, *b, g.len()));
                }
                Op::Sub(a, b) => {
                    kernels::axpy(1.0, &g, slot(&mut grads, *a, g.len()));
                    kernels::axpy(-1.0, &g, slot(&mut grads, *b, g.len()));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let ga: Vec<f64> = g.iter().zip(vb).map(|(g, y)| g * y).collect();
                    let gb: Vec<f64> = g.iter().zip(va).map(|(g, x)| g * x).collect();
                    kernels::axpy(1.0, &ga, slot(&mut grads, *a, g.len()));
                    kernels::axpy(1.0, &gb, slot(&mut grads, *b, g.len()));
                }
                Op::Min(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let take_a: Vec<bool> = va.iter().zip(vb).map(|(x, y)| x <= y).collect();
                    {
                        let ga = slot(&mut grads, *a, g.len());
                        for k in 0..g.len() {
                            if take_a[k] {
                                ga[k] += g[k];
                            }
                        }
                    }
                    let gb = slot(&mut grads, *b, g.len());
                    for k in 0..g.len() {
                        if !take_a[k] {
                            gb[k] += g[k];
                        }
                    }
                }
                Op::Scale(x, c) => kernels::axpy(*c, &g, slot(&mut grads, *x, g.len())),
                Op::Offset(x) => kernels::axpy(1.0, &g, slot(&mut grads, *x, g.len())),
                Op::OneMinus(x) => kernels::axpy(-1.0, &g, slot(&mut grads, *x, g.len())),
                Op::Tanh(x) => {
                    let d: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect();
                    kernels::axpy(1.0, &d, slot(&mut grads, *x, g.len()));
                }
                Op::Sigmoid(x) => {
                    let d: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect();
                    kernels::axpy(1.0, &d, slot(&mut grads, *x, g.len()));
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    let d: Vec<f64> = g
                        .iter()
                        .zip(xv)
                        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                        .collect();
                    kernels::axpy(1.0, &d, slot(&mut grads, *x, g.len()));
                }
                Op::Exp(x) => {
                    let d: Vec<f64> = g.iter().zip(&node.value).map(|(g, y)| g * y).collect();
                    kernels::axpy(1.0, &d, slot(&mut grads, *x, g.len()));
                }
                Op::Square(x) => {
                    let xv = &self.nodes[x.0].value;
                    let d: Vec<f64> = g.iter().zip(xv).map(|(g, v)| 2.0 * g * v).collect();
                    kernels::axpy(1.0, &d, slot(&mut grads, *x, g.len()));
                }
                Op::Clamp { x, lo, hi } => {
                    let xv = &self.nodes[x.0].value;
                    let d: Vec<f64> = g
                        .iter()
                        .zip(xv)
                        .map(|(g, v)| if *v >= *lo && *v <= *hi { *g } else { 0.0 })
                        .collect();
                    kernels::axpy(1.0, &d, slot(&mut grads, *x, g.len()));
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.len();
                        kernels::axpy(1.0, &g[off..off + w], slot(&mut grads, *p, w));
                        off += w;
                    }
                }
                Op::Slice { x, start } => {
                    let w = self.nodes[x.0].value.len();
                    let gx = slot(&mut grads, *x, w);
                    kernels::axpy(1.0, &g, &mut gx[*start..*start + g.len()]);
                }
                Op::Sum(x) => {
                    let w = self.nodes[x.0].value.len();
                    let gx = slot(&mut grads, *x, w);
                    gx.iter_mut().for_each(|v| *v += g[0]);
                }
                Op::LogSoftmax(x) => {
                    let total: f64 = g.iter().sum();
                    let d: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(g, y)| g - y.exp() * total)
                        .collect();
                    kernels::axpy(1.0, &d, slot(&mut grads, *x, g.len()));
                }
                Op::Pick { x, index } => {
                    let w = self.nodes[x.0].value.len();
                    slot(&mut grads, *x, w)[*index] += g[0];
                }
            }
        }
        Ok(pgrads)
    }

    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Leaf)
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, width: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; width])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut store = ParamStore::new();
        let x = store.add("x", &[1], vec![3.0]).unwrap();
        let mut t = Tape::new(&store);
        let xv = t.param(x);
        let loss = t.square(xv);
        assert_eq!(t.scalar_value(loss), 9.0);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(x), &[6.0]);
    }

    #[test]
    fn unused_params_get_zero() {
        let mut store = ParamStore::new();
        let x = store.add("x", &[2], vec![1.0, 2.0]).unwrap();
        let y = store.add("y", &[2], vec![5.0, 6.0]).unwrap();
        let mut t = Tape::new(&store);
        let xv = t.param(x);
        let loss = t.sum(xv);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(x), &[1.0, 1.0]);
        assert_eq!(g.get(y), &[0.0, 0.0]);
    }

    #[test]
    fn empty_tape_is_usage_error() {
        let store = ParamStore::new();
        let t = Tape::new(&store);
        assert!(matches!(t.backward(Var(0)), Err(NnError::EmptyTape)));
    }

    #[test]
    fn vector_loss_rejected() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let c = t.constant(vec![1.0, 2.0]);
        assert!(matches!(t.backward(c), Err(NnError::NonScalarLoss(2))));
    }

    #[test]
    fn frozen_params_get_zero() {
        let mut store = ParamStore::new();
        let a = store.add("frozen.a", &[1], vec![2.0]).unwrap();
        let b = store.add("live.b", &[1], vec![3.0]).unwrap();
        let mut t = Tape::new(&store);
        t.freeze_prefix("frozen.");
        let av = t.param(a);
        let bv = t.param(b);
        let p = t.mul(av, bv);
        let g = t.backward(p).unwrap();
        assert_eq!(g.get(a), &[0.0]);
        assert_eq!(g.get(b), &[2.0]);
    }

    #[test]
    fn min_and_clamp_route_gradients() {
        let mut store = ParamStore::new();
        let a = store.add("a", &[2], vec![1.0, 5.0]).unwrap();
        let mut t = Tape::new(&store);
        let av = t.param(a);
        let c = t.clamp(av, 0.0, 2.0);
        let lim = t.constant(vec![3.0, 3.0]);
        let m = t.min(c, lim);
        let s = t.sum(m);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a), &[1.0, 0.0]);
    }
}
