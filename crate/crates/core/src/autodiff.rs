//! Minimal reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every primitive in creation order, which is already a
//! topological order, so `backward` is a single reverse sweep. The policy
//! network is written against the [`Backend`] trait and runs either on a
//! tape (training) or on the allocation-light [`Eval`] backend (inference).

use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array2, Axis, Zip};

use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a tensor recorded on a particular tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    RowAdd(usize, usize),
    Mix { lambda: usize, a: usize, b: usize },
    Tanh(usize),
    Relu(usize),
    MeanOthers(usize),
    MaskedSoftmax { logits: usize, allowed: Vec<bool> },
    LogPick { probs: usize, index: usize },
    Add(usize, usize),
    Scale(usize, f64),
    Sum(usize),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
    /// True when some leaf upstream requires a gradient.
    tracked: bool,
    grad: Option<Array2<f64>>,
}

/// Recorded computation with gradient accumulators on its leaves.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite(name: &str, value: &Array2<f64>) -> Result<()> {
    if value.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(name.to_string()))
    }
}

fn shape_err(op: &str, a: &Array2<f64>, b: &Array2<f64>) -> Error {
    Error::InvalidArgument(format!("{op}: incompatible shapes {:?} and {:?}", a.dim(), b.dim()))
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Gradients are accumulated only for leaves created
    /// with `requires_grad`.
    pub fn leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> TensorId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            tracked: requires_grad,
            grad: None,
        });
        TensorId {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, t: TensorId) -> Result<usize> {
        if t.tape != self.id {
            return Err(Error::InvalidState("tensor belongs to a different tape".into()));
        }
        Ok(t.index)
    }

    fn push(&mut self, name: &str, value: Array2<f64>, op: Op, inputs: &[usize]) -> Result<TensorId> {
        check_finite(name, &value)?;
        let tracked = inputs.iter().any(|&i| self.nodes[i].tracked);
        self.nodes.push(Node {
            value,
            op,
            requires_grad: false,
            tracked,
            grad: None,
        });
        Ok(TensorId {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    pub fn value(&self, t: TensorId) -> Result<&Array2<f64>> {
        Ok(&self.nodes[self.idx(t)?].value)
    }

    /// Accumulated gradient of a `requires_grad` leaf, if any backward pass
    /// has reached it.
    pub fn grad(&self, t: TensorId) -> Result<Option<&Array2<f64>>> {
        Ok(self.nodes[self.idx(t)?].grad.as_ref())
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.ncols() != vb.nrows() {
            return Err(shape_err("matmul", va, vb));
        }
        let v = va.dot(vb);
        self.push("matmul", v, Op::MatMul(ia, ib), &[ia, ib])
    }

    /// Adds a `1 x m` row to every row of an `n x m` matrix.
    pub fn row_broadcast_add(&mut self, a: TensorId, row: TensorId) -> Result<TensorId> {
        let (ia, ir) = (self.idx(a)?, self.idx(row)?);
        let v = kernels::row_add(&self.nodes[ia].value, &self.nodes[ir].value)?;
        self.push("row_broadcast_add", v, Op::RowAdd(ia, ir), &[ia, ir])
    }

    /// `lambda * a + (1 - lambda) * b` with `lambda` a `1 x 1` tensor.
    pub fn scalar_mix(&mut self, lambda: TensorId, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (il, ia, ib) = (self.idx(lambda)?, self.idx(a)?, self.idx(b)?);
        let v = kernels::mix(&self.nodes[il].value, &self.nodes[ia].value, &self.nodes[ib].value)?;
        self.push("scalar_mix", v, Op::Mix { lambda: il, a: ia, b: ib }, &[il, ia, ib])
    }

    pub fn tanh(&mut self, a: TensorId) -> Result<TensorId> {
        let ia = self.idx(a)?;
        let v = self.nodes[ia].value.mapv(f64::tanh);
        self.push("tanh", v, Op::Tanh(ia), &[ia])
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        let ia = self.idx(a)?;
        let v = self.nodes[ia].value.mapv(|x| x.max(0.0));
        self.push("relu", v, Op::Relu(ia), &[ia])
    }

    /// Row `i` of the output is the mean of all rows of `a` except row `i`.
    pub fn row_mean_excluding_self(&mut self, a: TensorId) -> Result<TensorId> {
        let ia = self.idx(a)?;
        let v = kernels::mean_others(&self.nodes[ia].value)?;
        self.push("row_mean_excluding_self", v, Op::MeanOthers(ia), &[ia])
    }

    /// Softmax over all entries of a vector-shaped tensor, restricted to the
    /// entries with `allowed[i]`. Excluded entries get probability exactly 0
    /// and receive gradient exactly 0.
    pub fn masked_softmax(&mut self, logits: TensorId, allowed: &[bool]) -> Result<TensorId> {
        let il = self.idx(logits)?;
        let v = kernels::masked_softmax(&self.nodes[il].value, allowed)?;
        let op = Op::MaskedSoftmax {
            logits: il,
            allowed: allowed.to_vec(),
        };
        self.push("masked_softmax", v, op, &[il])
    }

    /// `ln probs[index]` as a `1 x 1` tensor (index into the flattened data).
    pub fn log_pick(&mut self, probs: TensorId, index: usize) -> Result<TensorId> {
        let ip = self.idx(probs)?;
        let v = kernels::log_pick(&self.nodes[ip].value, index)?;
        self.push("log_pick", v, Op::LogPick { probs: ip, index }, &[ip])
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.dim() != vb.dim() {
            return Err(shape_err("add", va, vb));
        }
        let v = va + vb;
        self.push("add", v, Op::Add(ia, ib), &[ia, ib])
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value * c;
        self.push("scale", v, Op::Scale(ia, c), &[ia])
    }

    /// Sum of all entries as a `1 x 1` tensor.
    pub fn sum(&mut self, a: TensorId) -> Result<TensorId> {
        let ia = self.idx(a)?;
        let v = Array2::from_elem((1, 1), self.nodes[ia].value.sum());
        self.push("sum", v, Op::Sum(ia), &[ia])
    }

    /// Accumulates d(loss)/d(leaf) into every `requires_grad` leaf.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        self.backward_scaled(loss, 1.0)
    }

    /// Like [`Tape::backward`] but for `seed * loss`.
    pub fn backward_scaled(&mut self, loss: TensorId, seed: f64) -> Result<()> {
        let il = self.idx(loss)?;
        if self.nodes[il].value.dim() != (1, 1) {
            return Err(Error::InvalidArgument(format!(
                "backward needs a 1 x 1 loss, got {:?}",
                self.nodes[il].value.dim()
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; il + 1];
        grads[il] = Some(Array2::from_elem((1, 1), seed));

        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].tracked {
                continue;
            }
            if self.nodes[i].requires_grad {
                check_finite("gradient", &g)?;
                match &mut self.nodes[i].grad {
                    Some(acc) => *acc += &g,
                    slot @ None => *slot = Some(g.clone()),
                }
            }
            let nodes = &self.nodes;
            let mut send = |j: usize, contrib: Array2<f64>| {
                if !nodes[j].tracked {
                    return;
                }
                match &mut grads[j] {
                    Some(acc) => *acc += &contrib,
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &nodes[i].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if nodes[*a].tracked {
                        send(*a, g.dot(&nodes[*b].value.t()));
                    }
                    if nodes[*b].tracked {
                        send(*b, nodes[*a].value.t().dot(&g));
                    }
                }
                Op::RowAdd(a, r) => {
                    if nodes[*r].tracked {
                        send(*r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    send(*a, g);
                }
                Op::Mix { lambda, a, b } => {
                    let l = nodes[*lambda].value[[0, 0]];
                    if nodes[*lambda].tracked {
                        let mut d = 0.0;
                        Zip::from(&g)
                            .and(&nodes[*a].value)
                            .and(&nodes[*b].value)
                            .for_each(|&g, &x, &y| d += g * (x - y));
                        send(*lambda, Array2::from_elem((1, 1), d));
                    }
                    if nodes[*a].tracked {
                        send(*a, &g * l);
                    }
                    if nodes[*b].tracked {
                        send(*b, &g * (1.0 - l));
                    }
                }
                Op::Tanh(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&nodes[i].value).for_each(|d, &y| *d *= 1.0 - y * y);
                    send(*a, d);
                }
                Op::Relu(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(&nodes[*a].value)
                        .for_each(|d, &x| {
                            if x <= 0.0 {
                                *d = 0.0
                            }
                        });
                    send(*a, d);
                }
                Op::MeanOthers(a) => {
                    // The map is symmetric, so its adjoint is itself.
                    send(*a, kernels::mean_others(&g)?);
                }
                Op::MaskedSoftmax { logits, allowed } => {
                    let p = &nodes[i].value;
                    let dot: f64 = p.iter().zip(g.iter()).map(|(p, g)| p * g).sum();
                    let mut d = Array2::zeros(p.dim());
                    for (k, ((d, &p), &g)) in d.iter_mut().zip(p.iter()).zip(g.iter()).enumerate() {
                        if allowed[k] {
                            *d = p * (g - dot);
                        }
                    }
                    send(*logits, d);
                }
                Op::LogPick { probs, index } => {
                    let p = &nodes[*probs].value;
                    let mut d = Array2::zeros(p.dim());
                    let pv = p.iter().nth(*index).copied().unwrap_or(1.0);
                    if let Some(slot) = d.iter_mut().nth(*index) {
                        *slot = g[[0, 0]] / pv;
                    }
                    send(*probs, d);
                }
                Op::Add(a, b) => {
                    send(*b, g.clone());
                    send(*a, g);
                }
                Op::Scale(a, c) => send(*a, g * *c),
                Op::Sum(a) => {
                    let s = g[[0, 0]];
                    send(*a, Array2::from_elem(nodes[*a].value.dim(), s));
                }
            }
        }
        Ok(())
    }
}

/// Forward kernels shared by the tape and the inference backend.
mod kernels {
    use super::*;

    pub fn row_add(a: &Array2<f64>, row: &Array2<f64>) -> Result<Array2<f64>> {
        if row.nrows() != 1 || row.ncols() != a.ncols() {
            return Err(shape_err("row_broadcast_add", a, row));
        }
        Ok(a + row)
    }

    pub fn mix(lambda: &Array2<f64>, a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
        if lambda.dim() != (1, 1) {
            return Err(Error::InvalidArgument(format!(
                "scalar_mix: lambda must be 1 x 1, got {:?}",
                lambda.dim()
            )));
        }
        if a.dim() != b.dim() {
            return Err(shape_err("scalar_mix", a, b));
        }
        let l = lambda[[0, 0]];
        let mut out = a * l;
        out.scaled_add(1.0 - l, b);
        Ok(out)
    }

    pub fn mean_others(a: &Array2<f64>) -> Result<Array2<f64>> {
        let n = a.nrows();
        if n < 2 {
            return Err(Error::InvalidState(
                "row_mean_excluding_self needs at least two rows".into(),
            ));
        }
        // Column sums over sorted values do not depend on row order, which
        // keeps row permutations exact.
        let mut buf = vec![0.0; n];
        let total: ndarray::Array1<f64> = a
            .columns()
            .into_iter()
            .map(|col| {
                buf.iter_mut().zip(col.iter()).for_each(|(b, &v)| *b = v);
                buf.sort_unstable_by(f64::total_cmp);
                buf.iter().sum::<f64>()
            })
            .collect();
        let inv = 1.0 / (n - 1) as f64;
        let mut out = a.clone();
        for mut row in out.rows_mut() {
            Zip::from(&mut row).and(&total).for_each(|x, &s| *x = (s - *x) * inv);
        }
        Ok(out)
    }

    pub fn masked_softmax(z: &Array2<f64>, allowed: &[bool]) -> Result<Array2<f64>> {
        if z.nrows() != 1 && z.ncols() != 1 {
            return Err(Error::InvalidArgument(format!(
                "masked_softmax expects a vector, got {:?}",
                z.dim()
            )));
        }
        if allowed.len() != z.len() {
            return Err(Error::InvalidArgument(format!(
                "masked_softmax: mask length {} for {} logits",
                allowed.len(),
                z.len()
            )));
        }
        let max = z
            .iter()
            .zip(allowed)
            .filter(|(_, &ok)| ok)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::InvalidState("masked_softmax: every entry is masked".into()));
        }
        let mut out = Array2::zeros(z.dim());
        let mut total = 0.0;
        for ((o, &v), &ok) in out.iter_mut().zip(z.iter()).zip(allowed) {
            if ok {
                *o = (v - max).exp();
                total += *o;
            }
        }
        out /= total;
        Ok(out)
    }

    pub fn log_pick(p: &Array2<f64>, index: usize) -> Result<Array2<f64>> {
        let v = *p.iter().nth(index).ok_or_else(|| {
            Error::InvalidArgument(format!("log_pick: index {index} out of {}", p.len()))
        })?;
        if v <= 0.0 {
            return Err(Error::InvalidState(format!(
                "log_pick: entry {index} has probability zero"
            )));
        }
        Ok(Array2::from_elem((1, 1), v.ln()))
    }
}

/// Operations the policy network needs, implemented both with and without
/// gradient recording.
pub trait Backend {
    type Var: Clone;

    /// Registers a model parameter under its index in the parameter list.
    fn param(&mut self, slot: usize, value: &Array2<f64>) -> Self::Var;
    fn constant(&mut self, value: Array2<f64>) -> Self::Var;
    fn value<'a>(&'a self, v: &'a Self::Var) -> &'a Array2<f64>;

    fn matmul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn row_broadcast_add(&mut self, a: &Self::Var, row: &Self::Var) -> Result<Self::Var>;
    fn scalar_mix(&mut self, lambda: &Self::Var, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn tanh(&mut self, a: &Self::Var) -> Result<Self::Var>;
    fn relu(&mut self, a: &Self::Var) -> Result<Self::Var>;
    fn row_mean_excluding_self(&mut self, a: &Self::Var) -> Result<Self::Var>;
    fn masked_softmax(&mut self, logits: &Self::Var, allowed: &[bool]) -> Result<Self::Var>;
    fn log_pick(&mut self, probs: &Self::Var, index: usize) -> Result<Self::Var>;
    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
}

/// Tape backend; remembers which tensor holds each registered parameter.
#[derive(Debug, Default)]
pub struct Recorder {
    pub tape: Tape,
    pub params: Vec<Option<TensorId>>,
}

impl Recorder {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Backend for Recorder {
    type Var = TensorId;

    fn param(&mut self, slot: usize, value: &Array2<f64>) -> TensorId {
        if self.params.len() <= slot {
            self.params.resize(slot + 1, None);
        }
        let id = self.tape.leaf(value.clone(), true);
        self.params[slot] = Some(id);
        id
    }

    fn constant(&mut self, value: Array2<f64>) -> TensorId {
        self.tape.leaf(value, false)
    }

    fn value<'a>(&'a self, v: &'a TensorId) -> &'a Array2<f64> {
        self.tape.value(*v).expect("tensor from this recorder")
    }

    fn matmul(&mut self, a: &TensorId, b: &TensorId) -> Result<TensorId> {
        self.tape.matmul(*a, *b)
    }

    fn row_broadcast_add(&mut self, a: &TensorId, row: &TensorId) -> Result<TensorId> {
        self.tape.row_broadcast_add(*a, *row)
    }

    fn scalar_mix(&mut self, lambda: &TensorId, a: &TensorId, b: &TensorId) -> Result<TensorId> {
        self.tape.scalar_mix(*lambda, *a, *b)
    }

    fn tanh(&mut self, a: &TensorId) -> Result<TensorId> {
        self.tape.tanh(*a)
    }

    fn relu(&mut self, a: &TensorId) -> Result<TensorId> {
        self.tape.relu(*a)
    }

    fn row_mean_excluding_self(&mut self, a: &TensorId) -> Result<TensorId> {
        self.tape.row_mean_excluding_self(*a)
    }

    fn masked_softmax(&mut self, logits: &TensorId, allowed: &[bool]) -> Result<TensorId> {
        self.tape.masked_softmax(*logits, allowed)
    }

    fn log_pick(&mut self, probs: &TensorId, index: usize) -> Result<TensorId> {
        self.tape.log_pick(*probs, index)
    }

    fn add(&mut self, a: &TensorId, b: &TensorId) -> Result<TensorId> {
        self.tape.add(*a, *b)
    }
}

/// Gradient-free backend for inference.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eval;

impl Backend for Eval {
    type Var = Rc<Array2<f64>>;

    fn param(&mut self, _slot: usize, value: &Array2<f64>) -> Self::Var {
        Rc::new(value.clone())
    }

    fn constant(&mut self, value: Array2<f64>) -> Self::Var {
        Rc::new(value)
    }

    fn value<'a>(&'a self, v: &'a Self::Var) -> &'a Array2<f64> {
        v
    }

    fn matmul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        if a.ncols() != b.nrows() {
            return Err(shape_err("matmul", a, b));
        }
        Ok(Rc::new(a.dot(&**b)))
    }

    fn row_broadcast_add(&mut self, a: &Self::Var, row: &Self::Var) -> Result<Self::Var> {
        Ok(Rc::new(kernels::row_add(a, row)?))
    }

    fn scalar_mix(&mut self, lambda: &Self::Var, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        Ok(Rc::new(kernels::mix(lambda, a, b)?))
    }

    fn tanh(&mut self, a: &Self::Var) -> Result<Self::Var> {
        Ok(Rc::new(a.mapv(f64::tanh)))
    }

    fn relu(&mut self, a: &Self::Var) -> Result<Self::Var> {
        Ok(Rc::new(a.mapv(|x| x.max(0.0))))
    }

    fn row_mean_excluding_self(&mut self, a: &Self::Var) -> Result<Self::Var> {
        Ok(Rc::new(kernels::mean_others(a)?))
    }

    fn masked_softmax(&mut self, logits: &Self::Var, allowed: &[bool]) -> Result<Self::Var> {
        let p = kernels::masked_softmax(logits, allowed)?;
        check_finite("masked_softmax", &p)?;
        Ok(Rc::new(p))
    }

    fn log_pick(&mut self, probs: &Self::Var, index: usize) -> Result<Self::Var> {
        Ok(Rc::new(kernels::log_pick(probs, index)?))
    }

    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        if a.dim() != b.dim() {
            return Err(shape_err("add", a, b));
        }
        Ok(Rc::new(&**a + &**b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn random_matrix(rows: usize, cols: usize, rng: &mut RngStream) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| 2.0 * rng.uniform() - 1.0)
    }

    /// Central differences of `f` with respect to every entry of `x`.
    fn numeric_grad(x: &Array2<f64>, f: &dyn Fn(&Array2<f64>) -> f64) -> Array2<f64> {
        let eps = 1e-5;
        let mut g = Array2::zeros(x.dim());
        for idx in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            *xp.iter_mut().nth(idx).unwrap() += eps;
            *xm.iter_mut().nth(idx).unwrap() -= eps;
            *g.iter_mut().nth(idx).unwrap() = (f(&xp) - f(&xm)) / (2.0 * eps);
        }
        g
    }

    fn assert_close(analytic: &Array2<f64>, numeric: &Array2<f64>, tol: f64) {
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-2);
            assert!(rel < tol, "analytic {a} numeric {n}");
        }
    }

    /// Gradient of the unary map `op` under a fixed random linear read-out.
    fn check_unary(
        x: Array2<f64>,
        op: &dyn Fn(&mut Tape, TensorId) -> Result<TensorId>,
        reference: &dyn Fn(&Array2<f64>) -> Array2<f64>,
        weights: &Array2<f64>,
    ) {
        let mut tape = Tape::new();
        let xi = tape.leaf(x.clone(), true);
        let wi = tape.leaf(weights.clone(), false);
        let y = op(&mut tape, xi).unwrap();
        assert_eq!(tape.value(y).unwrap().dim(), weights.dim());
        let scaled = elementwise_weight(&mut tape, y, wi);
        let loss = tape.sum(scaled).unwrap();
        tape.backward(loss).unwrap();
        let analytic = tape.grad(xi).unwrap().unwrap().clone();
        let numeric = numeric_grad(&x, &|x| (reference(x) * weights).sum());
        assert_close(&analytic, &numeric, 1e-4);
    }

    /// `sum_j y_ij * w_ij` expressed with tape primitives: diag(Y W^T).
    fn elementwise_weight(tape: &mut Tape, y: TensorId, w: TensorId) -> TensorId {
        let (rows, cols) = tape.value(y).unwrap().dim();
        let mut total: Option<TensorId> = None;
        for r in 0..rows {
            let mut pick = Array2::zeros((1, rows));
            pick[[0, r]] = 1.0;
            let p = tape.leaf(pick, false);
            let yr = tape.matmul(p, y).unwrap();
            let wr_val = tape.value(w).unwrap().row(r).to_owned().into_shape_with_order((cols, 1)).unwrap();
            let wr = tape.leaf(wr_val, false);
            let s = tape.matmul(yr, wr).unwrap();
            total = Some(match total {
                None => s,
                Some(t) => tape.add(t, s).unwrap(),
            });
        }
        total.unwrap()
    }

    #[test]
    fn masked_softmax_symmetric_example() {
        let mut tape = Tape::new();
        let z = tape.leaf(Array2::from_shape_vec((4, 1), vec![1.0, 1.0, 123.0, 1.0]).unwrap(), false);
        let p = tape.masked_softmax(z, &[true, true, false, true]).unwrap();
        let v = tape.value(p).unwrap();
        assert_eq!(v[[2, 0]], 0.0);
        for i in [0, 1, 3] {
            assert!((v[[i, 0]] - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn all_masked_is_invalid_state() {
        let mut tape = Tape::new();
        let z = tape.leaf(Array2::zeros((3, 1)), false);
        assert!(matches!(
            tape.masked_softmax(z, &[false; 3]),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn mix_endpoint_is_exact() {
        let mut rng = RngStream::new(3);
        let mut tape = Tape::new();
        let a = random_matrix(3, 4, &mut rng);
        let ai = tape.leaf(a.clone(), false);
        let bi = tape.leaf(random_matrix(3, 4, &mut rng), false);
        let l = tape.leaf(Array2::from_elem((1, 1), 1.0), false);
        let m = tape.scalar_mix(l, ai, bi).unwrap();
        assert_eq!(tape.value(m).unwrap(), &a);
    }

    #[test]
    fn shape_mismatch_is_invalid_argument() {
        let mut tape = Tape::new();
        let a = tape.leaf(Array2::zeros((2, 3)), false);
        let b = tape.leaf(Array2::zeros((2, 3)), false);
        assert!(matches!(tape.matmul(a, b), Err(Error::InvalidArgument(_))));
        let r = tape.leaf(Array2::zeros((1, 2)), false);
        assert!(matches!(tape.row_broadcast_add(a, r), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn foreign_tensor_is_invalid_state() {
        let mut t1 = Tape::new();
        let mut t2 = Tape::new();
        let a = t1.leaf(Array2::zeros((1, 1)), true);
        let _ = t2.leaf(Array2::zeros((1, 1)), true);
        assert!(matches!(t2.backward(a), Err(Error::InvalidState(_))));
    }

    #[test]
    fn sum_gives_ones_and_zero_scale_gives_zeros() {
        let mut tape = Tape::new();
        let a = tape.leaf(Array2::from_elem((3, 3), 2.5), true);
        let s = tape.sum(a).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap().unwrap(), &Array2::<f64>::ones((3, 3)));

        let mut tape = Tape::new();
        let a = tape.leaf(Array2::from_elem((3, 3), 2.5), true);
        let t = tape.tanh(a).unwrap();
        let s = tape.sum(t).unwrap();
        let z = tape.scale(s, 0.0).unwrap();
        tape.backward(z).unwrap();
        assert_eq!(tape.grad(a).unwrap().unwrap(), &Array2::<f64>::zeros((3, 3)));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let a = tape.leaf(Array2::from_elem((2, 2), 1.0), true);
        let s = tape.sum(a).unwrap();
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap().unwrap(), &Array2::from_elem((2, 2), 2.0));
        tape.zero_grad();
        assert!(tape.grad(a).unwrap().is_none());
    }

    #[test]
    fn non_finite_forward_is_reported() {
        let mut tape = Tape::new();
        let a = tape.leaf(Array2::from_elem((1, 1), f64::MAX), false);
        let b = tape.leaf(Array2::from_elem((1, 1), f64::MAX), false);
        assert!(matches!(tape.add(a, b), Err(Error::NonFinite(_))));
    }

    #[test]
    fn pick_softmax_matmul_matches_finite_differences() {
        let mut rng = RngStream::new(17);
        let x = random_matrix(5, 4, &mut rng);
        let w = random_matrix(4, 1, &mut rng);
        let allowed = [true, false, true, true, true];
        let target = 3;
        let f = |x: &Array2<f64>, w: &Array2<f64>| {
            let p = kernels::masked_softmax(&x.dot(w), &allowed).unwrap();
            p[[target, 0]].ln()
        };
        let mut tape = Tape::new();
        let xi = tape.leaf(x.clone(), true);
        let wi = tape.leaf(w.clone(), true);
        let z = tape.matmul(xi, wi).unwrap();
        let p = tape.masked_softmax(z, &allowed).unwrap();
        let l = tape.log_pick(p, target).unwrap();
        tape.backward(l).unwrap();
        let gx = tape.grad(xi).unwrap().unwrap().clone();
        let gw = tape.grad(wi).unwrap().unwrap().clone();
        assert_close(&gx, &numeric_grad(&x, &|x| f(x, &w)), 1e-4);
        assert_close(&gw, &numeric_grad(&w, &|w| f(&x, w)), 1e-4);
        // Row 1 is masked: its logit cannot influence anything.
        assert!(gx.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masked_logit_perturbation_changes_nothing() {
        let z = Array2::from_shape_vec((3, 1), vec![0.2, -1.0, 0.7]).unwrap();
        let mut z2 = z.clone();
        z2[[1, 0]] = 50.0;
        let allowed = [true, false, true];
        assert_eq!(
            kernels::masked_softmax(&z, &allowed).unwrap(),
            kernels::masked_softmax(&z2, &allowed).unwrap()
        );
    }

    #[test]
    fn eval_backend_matches_tape() {
        let mut rng = RngStream::new(8);
        let x = random_matrix(4, 3, &mut rng);
        let w = random_matrix(3, 3, &mut rng);
        let b = random_matrix(1, 3, &mut rng);
        fn run<B: Backend>(be: &mut B, x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
            let x = be.constant(x.clone());
            let w = be.param(0, w);
            let b = be.param(1, b);
            let h = be.matmul(&x, &w).unwrap();
            let h = be.row_broadcast_add(&h, &b).unwrap();
            let m = be.row_mean_excluding_self(&h).unwrap();
            let r = be.relu(&m).unwrap();
            let t = be.tanh(&h).unwrap();
            let l = be.constant(Array2::from_elem((1, 1), 0.3));
            let y = be.scalar_mix(&l, &r, &t).unwrap();
            be.value(&y).clone()
        }
        let mut rec = Recorder::new();
        assert_eq!(run(&mut rec, &x, &w, &b), run(&mut Eval, &x, &w, &b));
        assert!(rec.params.iter().all(Option::is_some));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn primitive_gradients_match_finite_differences(seed in 0u64..1000, rows in 2usize..5, cols in 1usize..4) {
            let mut rng = RngStream::new(seed);
            let x = random_matrix(rows, cols, &mut rng);
            let weights = random_matrix(rows, cols, &mut rng);
            let m = random_matrix(cols, cols, &mut rng);
            let row = random_matrix(1, cols, &mut rng);
            let other = random_matrix(rows, cols, &mut rng);

            check_unary(x.clone(), &|t, a| t.tanh(a), &|x| x.mapv(f64::tanh), &weights);
            // Keep relu inputs away from the kink.
            let xr = x.mapv(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
            check_unary(xr, &|t, a| t.relu(a), &|x| x.mapv(|v| v.max(0.0)), &weights);
            check_unary(x.clone(), &|t, a| t.row_mean_excluding_self(a), &|x| kernels::mean_others(x).unwrap(), &weights);
            {
                let m = m.clone();
                let mm = m.clone();
                check_unary(x.clone(), &move |t, a| { let w = t.leaf(m.clone(), false); t.matmul(a, w) }, &move |x| x.dot(&mm), &weights);
            }
            {
                let r1 = row.clone();
                let r2 = row.clone();
                check_unary(x.clone(), &move |t, a| { let r = t.leaf(r1.clone(), false); t.row_broadcast_add(a, r) }, &move |x| x + &r2, &weights);
            }
            {
                let o1 = other.clone();
                let o2 = other.clone();
                check_unary(x.clone(), &move |t, a| {
                    let l = t.leaf(Array2::from_elem((1, 1), 0.3), false);
                    let o = t.leaf(o1.clone(), false);
                    t.scalar_mix(l, a, o)
                }, &move |x| x * 0.3 + &(&o2 * 0.7), &weights);
            }
            // Gradient with respect to the mixing weight itself.
            {
                let mut tape = Tape::new();
                let lam = 0.2 + 0.6 * rng.uniform();
                let li = tape.leaf(Array2::from_elem((1, 1), lam), true);
                let ai = tape.leaf(x.clone(), false);
                let bi = tape.leaf(other.clone(), false);
                let y = tape.scalar_mix(li, ai, bi).unwrap();
                let t = tape.tanh(y).unwrap();
                let s = tape.sum(t).unwrap();
                tape.backward(s).unwrap();
                let g = tape.grad(li).unwrap().unwrap()[[0, 0]];
                let f = |l: f64| (&x * l + &(&other * (1.0 - l))).mapv(f64::tanh).sum();
                let n = (f(lam + 1e-5) - f(lam - 1e-5)) / 2e-5;
                prop_assert!((g - n).abs() / g.abs().max(n.abs()).max(1e-2) < 1e-4);
            }
            // Softmax + log pick on a column vector.
            {
                let z = random_matrix(rows + 1, 1, &mut rng);
                let mut allowed = vec![true; rows + 1];
                allowed[0] = false;
                let target = rows;
                let mut tape = Tape::new();
                let zi = tape.leaf(z.clone(), true);
                let p = tape.masked_softmax(zi, &allowed).unwrap();
                let l = tape.log_pick(p, target).unwrap();
                tape.backward(l).unwrap();
                let g = tape.grad(zi).unwrap().unwrap().clone();
                let al = allowed.clone();
                let n = numeric_grad(&z, &move |z| kernels::masked_softmax(z, &al).unwrap()[[target, 0]].ln());
                assert_close(&g, &n, 1e-4);
                prop_assert_eq!(g[[0, 0]], 0.0);
            }
        }
    }
}
