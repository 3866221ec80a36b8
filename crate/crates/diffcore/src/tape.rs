//! Tensor-level reverse-mode differentiation tape.
//!
//! A [`Tape`] borrows a [`ParamStore`] for the duration of one forward pass.
//! Operations are recorded in execution order; every node remembers whether
//! any trainable parameter flows into it, and [`Tape::backward`] only visits
//! those nodes. Frozen parameters therefore never receive a gradient and the
//! frozen part of a network costs nothing on the backward pass.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{shape_err, DiffError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a value recorded on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Gelu(usize),
    Square(usize),
    Exp(usize),
    Clamp(usize, f64, f64),
    Minimum(usize, usize),
    ConcatCols(Vec<usize>),
    GatherRows(usize, Vec<usize>),
    SumCols(usize),
    Reshape(usize),
    Sum(usize),
    Mean(usize),
}

#[derive(Debug)]
struct Node {
    /// `None` for parameter leaves, whose value lives in the store.
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Gradients keyed by parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn insert(&mut self, id: ParamId, grad: Tensor) {
        self.grads.insert(id, grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.values().all(Tensor::is_finite)
    }

    /// Global L2 norm over every gradient entry.
    pub fn norm(&self) -> f64 {
        self.grads
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Adds `other` into `self`, inserting missing entries.
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        for (id, g) in &other.grads {
            match self.grads.get_mut(id) {
                Some(acc) => acc.add_assign(g)?,
                None => {
                    self.grads.insert(*id, g.clone());
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.values_mut() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }
}

/// Records one forward computation over a borrowed parameter store.
pub struct Tape<'s> {
    id: u64,
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<usize>>,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(DiffError::Usage(
                "variable was not recorded on this tape".to_string(),
            ));
        }
        Ok(v.idx)
    }

    fn val(&self, idx: usize) -> &Tensor {
        let node = &self.nodes[idx];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            (None, _) => unreachable!("only parameter leaves borrow their value"),
        }
    }

    /// Value of a recorded variable.
    pub fn value(&self, v: Var) -> Result<&Tensor> {
        let idx = self.check(v)?;
        Ok(self.val(idx))
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Leaf for a stored parameter; repeated calls return the same variable.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(idx) = self.param_nodes[id.0] {
            return Var { tape: self.id, idx };
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: self.store.is_trainable(id),
        });
        let idx = self.nodes.len() - 1;
        self.param_nodes[id.0] = Some(idx);
        Var { tape: self.id, idx }
    }

    fn ng(&self, idx: usize) -> bool {
        self.nodes[idx].needs_grad
    }

    fn same_shape(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let out = gemm(self.val(ia), false, self.val(ib), false)?;
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(out, Op::MatMul(ia, ib), ng))
    }

    /// `x[n, m] + b[m]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (ix, ib) = (self.check(x)?, self.check(b)?);
        let (n, m) = self.val(ix).dims2()?;
        let bias = self.val(ib);
        if bias.len() != m {
            return Err(shape_err(
                "add_bias",
                format!("bias of {} values for {m} columns", bias.len()),
            ));
        }
        let xs = self.val(ix).data();
        let bs = bias.data();
        let mut out = Vec::with_capacity(n * m);
        for r in 0..n {
            out.extend(xs[r * m..(r + 1) * m].iter().zip(bs).map(|(a, b)| a + b));
        }
        let out = Tensor::matrix(n, m, out)?;
        let ng = self.ng(ix) || self.ng(ib);
        Ok(self.push(out, Op::AddBias(ix, ib), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        self.same_shape("add", ia, ib)?;
        let out = self.val(ia).zip_map(self.val(ib), |x, y| x + y)?;
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(out, Op::Add(ia, ib), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        self.same_shape("sub", ia, ib)?;
        let out = self.val(ia).zip_map(self.val(ib), |x, y| x - y)?;
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(out, Op::Sub(ia, ib), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        self.same_shape("mul", ia, ib)?;
        let out = self.val(ia).zip_map(self.val(ib), |x, y| x * y)?;
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(out, Op::Mul(ia, ib), ng))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.val(ia).map(|x| x * factor);
        let ng = self.ng(ia);
        Ok(self.push(out, Op::Scale(ia, factor), ng))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.val(ia).map(|x| x + c);
        let ng = self.ng(ia);
        Ok(self.push(out, Op::AddScalar(ia), ng))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    /// Gaussian-error linear unit (tanh form).
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.val(ia).map(gelu);
        let ng = self.ng(ia);
        Ok(self.push(out, Op::Gelu(ia), ng))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.val(ia).map(|x| x * x);
        let ng = self.ng(ia);
        Ok(self.push(out, Op::Square(ia), ng))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.val(ia).map(f64::exp);
        let ng = self.ng(ia);
        Ok(self.push(out, Op::Exp(ia), ng))
    }

    /// Clamps into `[lo, hi]`; the gradient passes only inside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.val(ia).map(|x| x.clamp(lo, hi));
        let ng = self.ng(ia);
        Ok(self.push(out, Op::Clamp(ia, lo, hi), ng))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        self.same_shape("minimum", ia, ib)?;
        let out = self.val(ia).zip_map(self.val(ib), f64::min)?;
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(out, Op::Minimum(ia, ib), ng))
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts
            .iter()
            .map(|&v| self.check(v))
            .collect::<Result<Vec<_>>>()?;
        let dims = idx
            .iter()
            .map(|&i| self.val(i).dims2())
            .collect::<Result<Vec<_>>>()?;
        let rows = dims.first().map(|d| d.0).unwrap_or(0);
        if dims.iter().any(|d| d.0 != rows) {
            return Err(shape_err("concat_cols", format!("row counts differ: {dims:?}")));
        }
        let total: usize = dims.iter().map(|d| d.1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&i, &(_, c)) in idx.iter().zip(&dims) {
                out.extend_from_slice(&self.val(i).data()[r * c..(r + 1) * c]);
            }
        }
        let out = Tensor::matrix(rows, total, out)?;
        let ng = idx.iter().any(|&i| self.ng(i));
        Ok(self.push(out, Op::ConcatCols(idx), ng))
    }

    /// Selects rows of a rank-2 tensor (rows may repeat).
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        let (n, m) = self.val(ia).dims2()?;
        if let Some(bad) = rows.iter().find(|&&r| r >= n) {
            return Err(shape_err("gather_rows", format!("row {bad} out of {n}")));
        }
        let src = self.val(ia).data();
        let mut out = Vec::with_capacity(rows.len() * m);
        for &r in rows {
            out.extend_from_slice(&src[r * m..(r + 1) * m]);
        }
        let out = Tensor::matrix(rows.len(), m, out)?;
        let ng = self.ng(ia);
        Ok(self.push(out, Op::GatherRows(ia, rows.to_vec()), ng))
    }

    /// Row sums: `[n, m] -> [n]`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let (n, m) = self.val(ia).dims2()?;
        let src = self.val(ia).data();
        let out = (0..n).map(|r| src[r * m..(r + 1) * m].iter().sum()).collect();
        let ng = self.ng(ia);
        Ok(self.push(Tensor::vector(out), Op::SumCols(ia), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.val(ia).reshape(shape)?;
        let ng = self.ng(ia);
        Ok(self.push(out, Op::Reshape(ia), ng))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = Tensor::scalar(self.val(ia).sum());
        let ng = self.ng(ia);
        Ok(self.push(out, Op::Sum(ia), ng))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let t = self.val(ia);
        if t.is_empty() {
            return Err(shape_err("mean", "empty tensor"));
        }
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        let ng = self.ng(ia);
        Ok(self.push(out, Op::Mean(ia), ng))
    }

    /// Reverse-mode pass from a scalar `loss`.
    ///
    /// The result holds one entry for every trainable parameter of the store;
    /// parameters the loss does not depend on get zeros. Frozen parameters
    /// never appear.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let il = self.check(loss)?;
        if self.val(il).len() != 1 {
            return Err(DiffError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.val(il).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; il + 1];
        if self.ng(il) {
            grads[il] = Some(Tensor::filled(self.val(il).shape(), 1.0));
        }
        let mut out = Gradients::default();
        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads, &mut out)?;
        }
        for (id, p) in self.store.iter() {
            if p.trainable && out.get(id).is_none() {
                out.insert(id, Tensor::zeros(p.value.shape()));
            }
        }
        Ok(out)
    }

    fn propagate(
        &self,
        i: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        out: &mut Gradients,
    ) -> Result<()> {
        let send = |target: usize, delta: Tensor, grads: &mut [Option<Tensor>]| -> Result<()> {
            if !self.nodes[target].needs_grad {
                return Ok(());
            }
            match &mut grads[target] {
                Some(acc) => acc.add_assign(&delta)?,
                slot @ None => *slot = Some(delta),
            }
            Ok(())
        };
        match &self.nodes[i].op {
            Op::Constant => {}
            Op::Param(id) => match out.grads.get_mut(id) {
                Some(acc) => acc.add_assign(g)?,
                None => out.insert(*id, g.clone()),
            },
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    send(*a, gemm(g, false, self.val(*b), true)?, grads)?;
                }
                if self.ng(*b) {
                    send(*b, gemm(self.val(*a), true, g, false)?, grads)?;
                }
            }
            Op::AddBias(x, b) => {
                if self.ng(*b) {
                    let (n, m) = g.dims2()?;
                    let mut db = vec![0.0; m];
                    for r in 0..n {
                        for (acc, v) in db.iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    let shape = self.val(*b).shape().to_vec();
                    send(*b, Tensor::new(shape, db)?, grads)?;
                }
                send(*x, g.clone(), grads)?;
            }
            Op::Add(a, b) => {
                send(*a, g.clone(), grads)?;
                send(*b, g.clone(), grads)?;
            }
            Op::Sub(a, b) => {
                send(*a, g.clone(), grads)?;
                if self.ng(*b) {
                    send(*b, g.map(|v| -v), grads)?;
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    send(*a, g.zip_map(self.val(*b), |gv, bv| gv * bv)?, grads)?;
                }
                if self.ng(*b) {
                    send(*b, g.zip_map(self.val(*a), |gv, av| gv * av)?, grads)?;
                }
            }
            Op::Scale(a, f) => send(*a, g.map(|v| v * f), grads)?,
            Op::AddScalar(a) => send(*a, g.clone(), grads)?,
            Op::Gelu(a) => send(*a, g.zip_map(self.val(*a), |gv, x| gv * gelu_grad(x))?, grads)?,
            Op::Square(a) => send(*a, g.zip_map(self.val(*a), |gv, x| 2.0 * gv * x)?, grads)?,
            Op::Exp(a) => {
                let y = self.nodes[i].value.as_ref().expect("exp output stored");
                send(*a, g.zip_map(y, |gv, yv| gv * yv)?, grads)?
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let d = g.zip_map(self.val(*a), |gv, x| if x >= lo && x <= hi { gv } else { 0.0 })?;
                send(*a, d, grads)?
            }
            Op::Minimum(a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                let mask: Vec<bool> = va.data().iter().zip(vb.data()).map(|(x, y)| x <= y).collect();
                if self.ng(*a) {
                    let d = g.data().iter().zip(&mask).map(|(gv, &m)| if m { *gv } else { 0.0 });
                    send(*a, Tensor::new(g.shape().to_vec(), d.collect())?, grads)?;
                }
                if self.ng(*b) {
                    let d = g.data().iter().zip(&mask).map(|(gv, &m)| if m { 0.0 } else { *gv });
                    send(*b, Tensor::new(g.shape().to_vec(), d.collect())?, grads)?;
                }
            }
            Op::ConcatCols(parts) => {
                let (n, total) = g.dims2()?;
                let mut offset = 0;
                for &p in parts {
                    let (_, c) = self.val(p).dims2()?;
                    if self.ng(p) {
                        let mut d = Vec::with_capacity(n * c);
                        for r in 0..n {
                            d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                        }
                        send(p, Tensor::matrix(n, c, d)?, grads)?;
                    }
                    offset += c;
                }
            }
            Op::GatherRows(a, rows) => {
                let (n, m) = self.val(*a).dims2()?;
                let mut d = vec![0.0; n * m];
                for (k, &r) in rows.iter().enumerate() {
                    for (acc, v) in d[r * m..(r + 1) * m].iter_mut().zip(g.row(k)) {
                        *acc += v;
                    }
                }
                send(*a, Tensor::matrix(n, m, d)?, grads)?;
            }
            Op::SumCols(a) => {
                let (n, m) = self.val(*a).dims2()?;
                let mut d = Vec::with_capacity(n * m);
                for r in 0..n {
                    d.extend(std::iter::repeat_n(g.data()[r], m));
                }
                send(*a, Tensor::matrix(n, m, d)?, grads)?;
            }
            Op::Reshape(a) => {
                let shape = self.val(*a).shape().to_vec();
                send(*a, g.reshape(&shape)?, grads)?;
            }
            Op::Sum(a) => {
                let gv = g.item()?;
                send(*a, Tensor::filled(self.val(*a).shape(), gv), grads)?;
            }
            Op::Mean(a) => {
                let t = self.val(*a);
                let gv = g.item()? / t.len() as f64;
                send(*a, Tensor::filled(t.shape(), gv), grads)?;
            }
        }
        Ok(())
    }
}

/// Tanh-form GELU.
pub fn gelu(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * x * (1.0 + t)
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamGroup;

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut store = ParamStore::new();
        let w = store.add("w", ParamGroup::Head, Tensor::vector(vec![1.0, 2.0])).unwrap();
        let mut tape = Tape::new(&store);
        let _ = tape.param(w);
        let c = tape.constant(Tensor::scalar(3.0));
        let loss = tape.scale(c, 2.0).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn foreign_variable_is_usage_error() {
        let store = ParamStore::new();
        let mut a = Tape::new(&store);
        let b = Tape::new(&store);
        let v = a.constant(Tensor::scalar(1.0));
        assert!(matches!(b.backward(v), Err(DiffError::Usage(_))));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let v = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(v), Err(DiffError::Usage(_))));
    }

    #[test]
    fn frozen_parameters_get_no_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("a", ParamGroup::Encoder, Tensor::vector(vec![1.0])).unwrap();
        let b = store.add("b", ParamGroup::Head, Tensor::vector(vec![2.0])).unwrap();
        store.set_trainable(a, false);
        let mut tape = Tape::new(&store);
        let (va, vb) = (tape.param(a), tape.param(b));
        let prod = tape.mul(va, vb).unwrap();
        let loss = tape.sum(prod).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap().data(), &[1.0]);
    }

    #[test]
    fn minimum_and_clamp_route_gradients() {
        let mut store = ParamStore::new();
        let x = store.add("x", ParamGroup::Head, Tensor::vector(vec![0.5, 1.5, 1.0])).unwrap();
        let mut tape = Tape::new(&store);
        let vx = tape.param(x);
        let c = tape.clamp(vx, 0.8, 1.2).unwrap();
        let loss = tape.sum(c).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);

        let mut tape = Tape::new(&store);
        let vx = tape.param(x);
        let k = tape.constant(Tensor::vector(vec![1.0, 1.0, 1.0]));
        let m = tape.minimum(vx, k).unwrap();
        let loss = tape.sum(m).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.0, 1.0]);
    }
}
