//! The constructive policy: an MLP embedding of the first city, a GNN over
//! the remaining cities, and an attention decoder producing next-city
//! probabilities.

mod checkpoint;
mod rollout;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::Backend;
use crate::equivariance::CanonicalView;
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use rollout::{greedy_then_search, rollout, rollout_with, sample_best, Decoding, RolloutResult, Variant};

/// Network dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Embedding width `H`.
    pub hidden: usize,
    /// Number of GNN layers.
    pub n_gnn: usize,
    /// Hidden widths of the first-city MLP; its output width is `hidden`.
    pub mlp_hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: 128,
            n_gnn: 3,
            mlp_hidden: vec![128, 256],
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.mlp_hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Slot indices of every named tensor, in storage order.
    pub fn layout(&self) -> Layout {
        let mut next = 0;
        let mut take = || {
            next += 1;
            next - 1
        };
        let mlp = (0..=self.mlp_hidden.len()).map(|_| (take(), take())).collect();
        let theta0 = take();
        let gnn = (0..self.n_gnn).map(|_| (take(), take(), take())).collect();
        let lambda = take();
        let theta_g = take();
        let theta_m = take();
        let w = take();
        Layout {
            mlp,
            theta0,
            gnn,
            lambda,
            theta_g,
            theta_m,
            w,
            count: next,
        }
    }

    /// `(name, rows, cols, fan_in)` for every tensor in storage order.
    fn specs(&self) -> Vec<(String, usize, usize, usize)> {
        let h = self.hidden;
        let mut out = Vec::new();
        let mut dims = vec![2];
        dims.extend(&self.mlp_hidden);
        dims.push(h);
        for (l, win) in dims.windows(2).enumerate() {
            out.push((format!("mlp.{l}.weight"), win[0], win[1], win[0]));
            out.push((format!("mlp.{l}.bias"), 1, win[1], win[0]));
        }
        out.push(("gnn.theta0".into(), 2, h, 2));
        for l in 1..=self.n_gnn {
            out.push((format!("gnn.{l}.theta"), h, h, h));
            out.push((format!("gnn.{l}.aggr.weight"), h, h, h));
            out.push((format!("gnn.{l}.aggr.bias"), 1, h, h));
        }
        out.push(("gnn.lambda".into(), 1, 1, 1));
        out.push(("decoder.theta_g".into(), h, h, h));
        out.push(("decoder.theta_m".into(), h, h, h));
        out.push(("decoder.w".into(), h, 1, h));
        out
    }
}

/// Tensor slots for one architecture.
#[derive(Debug, Clone)]
pub struct Layout {
    /// `(weight, bias)` per MLP layer.
    pub mlp: Vec<(usize, usize)>,
    pub theta0: usize,
    /// `(theta, aggregation weight, aggregation bias)` per GNN layer.
    pub gnn: Vec<(usize, usize, usize)>,
    pub lambda: usize,
    pub theta_g: usize,
    pub theta_m: usize,
    pub w: usize,
    pub count: usize,
}

/// All trainable tensors of the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    arch: Architecture,
    names: Vec<String>,
    tensors: Vec<Array2<f64>>,
}

impl PolicyParams {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, lambda = 0.5.
    pub fn init(arch: &Architecture, rng: &mut RngStream) -> Result<Self> {
        arch.validate()?;
        let specs = arch.specs();
        let lambda_slot = arch.layout().lambda;
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (slot, (name, r, c, fan_in)) in specs.into_iter().enumerate() {
            let t = if slot == lambda_slot {
                Array2::from_elem((1, 1), 0.5)
            } else {
                let bound = 1.0 / (fan_in as f64).sqrt();
                Array2::from_shape_fn((r, c), |_| bound * (2.0 * rng.uniform() - 1.0))
            };
            names.push(name);
            tensors.push(t);
        }
        Ok(Self {
            arch: arch.clone(),
            names,
            tensors,
        })
    }

    /// Assembles parameters from named tensors, checking them against the
    /// architecture.
    pub fn from_named(arch: &Architecture, named: Vec<(String, Array2<f64>)>) -> Result<Self> {
        arch.validate()?;
        let specs = arch.specs();
        if specs.len() != named.len() {
            return Err(Error::Model(format!(
                "architecture expects {} tensors, got {}",
                specs.len(),
                named.len()
            )));
        }
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for ((name, r, c, _), (got_name, t)) in specs.into_iter().zip(named) {
            if name != got_name || t.dim() != (r, c) {
                return Err(Error::Model(format!(
                    "expected tensor {name} {r}x{c}, found {got_name} {}x{}",
                    t.nrows(),
                    t.ncols()
                )));
            }
            names.push(name);
            tensors.push(t);
        }
        let p = Self {
            arch: arch.clone(),
            names,
            tensors,
        };
        p.check_finite()?;
        Ok(p)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layout(&self) -> Layout {
        self.arch.layout()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn lambda(&self) -> f64 {
        self.tensors[self.arch.layout().lambda][[0, 0]]
    }

    pub fn set_lambda(&mut self, value: f64) {
        let slot = self.arch.layout().lambda;
        self.tensors[slot][[0, 0]] = value;
    }

    pub fn clamp_lambda(&mut self) {
        let l = self.lambda().clamp(0.0, 1.0);
        self.set_lambda(l);
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in self.names.iter().zip(&self.tensors) {
            if !t.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("parameter {name}")));
            }
        }
        Ok(())
    }

    /// Registers every tensor with a backend.
    pub fn bind<B: Backend>(&self, be: &mut B) -> Vec<B::Var> {
        self.tensors.iter().enumerate().map(|(i, t)| be.param(i, t)).collect()
    }
}

fn points_matrix(points: &[crate::tsp::Point]) -> Array2<f64> {
    Array2::from_shape_fn((points.len(), 2), |(i, k)| if k == 0 { points[i].x } else { points[i].y })
}

/// GNN embedding of the view's rows, `|J| x H`.
pub fn gnn_encode<B: Backend>(be: &mut B, vars: &[B::Var], layout: &Layout, rel: &[crate::tsp::Point]) -> Result<B::Var> {
    if rel.len() < 2 {
        return Err(Error::InvalidState(format!(
            "gnn_encode needs at least two cities, got {}",
            rel.len()
        )));
    }
    let x_in = be.constant(points_matrix(rel));
    let mut x = be.matmul(&x_in, &vars[layout.theta0])?;
    for &(theta, aw, ab) in &layout.gnn {
        let own = be.matmul(&x, &vars[theta])?;
        let mean = be.row_mean_excluding_self(&x)?;
        let agg = be.matmul(&mean, &vars[aw])?;
        let agg = be.row_broadcast_add(&agg, &vars[ab])?;
        let agg = be.relu(&agg)?;
        x = be.scalar_mix(&vars[layout.lambda], &own, &agg)?;
    }
    Ok(x)
}

/// MLP embedding of the first city's relative position, `1 x H`.
pub fn mlp_encode<B: Backend>(be: &mut B, vars: &[B::Var], layout: &Layout, first_rel: crate::tsp::Point) -> Result<B::Var> {
    let mut h = be.constant(Array2::from_shape_vec((1, 2), vec![first_rel.x, first_rel.y]).expect("1x2"));
    let last = layout.mlp.len() - 1;
    for (l, &(w, b)) in layout.mlp.iter().enumerate() {
        h = be.matmul(&h, &vars[w])?;
        h = be.row_broadcast_add(&h, &vars[b])?;
        if l < last {
            h = be.relu(&h)?;
        }
    }
    Ok(h)
}

/// Next-city probabilities over the view's rows, `|J| x 1`.
pub fn decode_probs<B: Backend>(
    be: &mut B,
    vars: &[B::Var],
    layout: &Layout,
    keys: &B::Var,
    query: &B::Var,
    allowed: &[bool],
) -> Result<B::Var> {
    let k = be.matmul(keys, &vars[layout.theta_g])?;
    let q = be.matmul(query, &vars[layout.theta_m])?;
    let s = be.row_broadcast_add(&k, &q)?;
    let s = be.tanh(&s)?;
    let u = be.matmul(&s, &vars[layout.w])?;
    be.masked_softmax(&u, allowed)
}

/// Full network evaluation for one decoding step.
pub fn step_probs<B: Backend>(be: &mut B, vars: &[B::Var], layout: &Layout, view: &CanonicalView) -> Result<B::Var> {
    let keys = gnn_encode(be, vars, layout, &view.rel_coords)?;
    let query = mlp_encode(be, vars, layout, view.first_rel)?;
    decode_probs(be, vars, layout, &keys, &query, &view.selectable)
}
