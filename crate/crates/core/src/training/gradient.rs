use ndarray::Array2;
use rayon::prelude::*;

use super::config::{OptimizerKind, TrainConfig};
use crate::autodiff::Recorder;
use crate::equivariance::PreprocessConfig;
use crate::error::{Error, Result};
use crate::local_search::{combined_local_search, LocalSearchConfig};
use crate::policy::{rollout, rollout_with, Decoding, PolicyParams};
use crate::rng::RngStream;
use crate::tsp::{Instance, Tour};

/// What is subtracted from the (improved) tour length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// The sampled tour's own length before local search.
    PolicyRollout,
    /// Length of the greedy tour on the same instance, without local search.
    SelfCritic,
    /// No baseline.
    Zero,
}

/// Per-instance quantities of one gradient estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemStats {
    pub n: usize,
    pub raw_len: f64,
    pub improved_len: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone)]
pub struct GradientEstimate {
    /// Gradient of `(1/B) sum_b A_b log p_b`, one array per parameter; an
    /// SGD step subtracts it.
    pub grads: Vec<Array2<f64>>,
    pub items: Vec<ItemStats>,
}

/// Summary of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub n: usize,
    pub mean_raw_len: f64,
    pub mean_improved_len: f64,
    pub mean_advantage: f64,
    pub mean_abs_advantage: f64,
    pub grad_norm: f64,
    pub clipped: bool,
    /// The gradient was not finite and the parameters were left unchanged.
    pub aborted: bool,
}

/// Log-probability of a fixed tour (starting at city 0) and its gradient
/// with respect to every parameter.
pub fn log_prob_gradient(
    params: &PolicyParams,
    instance: &Instance,
    preprocess: &PreprocessConfig,
    order: &[usize],
) -> Result<(f64, Vec<Array2<f64>>)> {
    let mut rec = Recorder::new();
    let vars = params.bind(&mut rec);
    let mut rng = RngStream::new(0);
    let (_, lp) = rollout_with(&mut rec, params, &vars, instance, preprocess, Decoding::Replay(order), &mut rng)?;
    let Some(lp) = lp else {
        return Ok((0.0, zeros_like(params)));
    };
    let value = rec.tape.value(lp)?[[0, 0]];
    rec.tape.backward(lp)?;
    Ok((value, collect_grads(&rec, params, 1.0)?))
}

fn zeros_like(params: &PolicyParams) -> Vec<Array2<f64>> {
    params.tensors().iter().map(|t| Array2::zeros(t.dim())).collect()
}

fn collect_grads(rec: &Recorder, params: &PolicyParams, scale: f64) -> Result<Vec<Array2<f64>>> {
    params
        .tensors()
        .iter()
        .enumerate()
        .map(|(slot, t)| {
            let g = rec.params.get(slot).copied().flatten().map(|id| rec.tape.grad(id)).transpose()?.flatten();
            Ok(match g {
                Some(g) => g * scale,
                None => Array2::zeros(t.dim()),
            })
        })
        .collect()
}

struct ItemOutcome {
    stats: ItemStats,
    grads: Option<Vec<Array2<f64>>>,
}

fn item_gradient(
    params: &PolicyParams,
    instance: &Instance,
    preprocess: &PreprocessConfig,
    ls: Option<&LocalSearchConfig>,
    baseline: Baseline,
    weight: f64,
    mut rng: RngStream,
) -> Result<ItemOutcome> {
    let mut rec = Recorder::new();
    let vars = params.bind(&mut rec);
    let (order, lp) = rollout_with(&mut rec, params, &vars, instance, preprocess, Decoding::Sample, &mut rng)?;
    let sampled = Tour::new(instance, order)?;
    let improved_len = match ls {
        Some(cfg) => combined_local_search(instance, &sampled, cfg, &mut rng).length(),
        None => sampled.length(),
    };
    let base = match baseline {
        Baseline::PolicyRollout => sampled.length(),
        Baseline::SelfCritic => rollout(instance, params, preprocess, Decoding::Greedy, &mut rng)?.tour.length(),
        Baseline::Zero => 0.0,
    };
    let advantage = improved_len - base;
    let grads = match lp {
        Some(lp) if advantage != 0.0 => {
            rec.tape.backward_scaled(lp, advantage * weight)?;
            Some(collect_grads(&rec, params, 1.0)?)
        }
        _ => None,
    };
    Ok(ItemOutcome {
        stats: ItemStats {
            n: instance.len(),
            raw_len: sampled.length(),
            improved_len,
            advantage,
        },
        grads,
    })
}

/// Monte-Carlo estimate of the smoothed policy gradient over a batch.
///
/// Item `b` samples a tour and runs local search on `rng.fork(b)`, so the
/// result does not depend on thread count or scheduling. Passing `ls =
/// None` scores the raw sampled tour instead.
pub fn estimate_gradient(
    params: &PolicyParams,
    instances: &[Instance],
    preprocess: &PreprocessConfig,
    ls: Option<&LocalSearchConfig>,
    baseline: Baseline,
    rng: &RngStream,
) -> Result<GradientEstimate> {
    if instances.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let weight = 1.0 / instances.len() as f64;
    let mut grads = zeros_like(params);
    let mut items = Vec::with_capacity(instances.len());
    // Bounded chunks keep at most a few per-item gradients alive at once;
    // summation order is fixed by item index.
    let chunk = 2 * rayon::current_num_threads().max(1);
    let indexed: Vec<(usize, &Instance)> = instances.iter().enumerate().collect();
    for part in indexed.chunks(chunk) {
        let outcomes: Vec<Result<ItemOutcome>> = part
            .par_iter()
            .map(|&(b, inst)| item_gradient(params, inst, preprocess, ls, baseline, weight, rng.fork(b as u64)))
            .collect();
        for out in outcomes {
            let out = out?;
            if let Some(g) = out.grads {
                for (acc, g) in grads.iter_mut().zip(g) {
                    *acc += &g;
                }
            }
            items.push(out.stats);
        }
    }
    Ok(GradientEstimate { grads, items })
}

const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// SGD, optionally with heavy-ball momentum, or Adam (`momentum` is then
/// the first-moment decay).
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    momentum: f64,
    clip_norm: f64,
    velocity: Option<Vec<Array2<f64>>>,
    second: Option<Vec<Array2<f64>>>,
    steps: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, momentum: f64, clip_norm: f64) -> Self {
        Self {
            kind,
            momentum,
            clip_norm,
            velocity: None,
            second: None,
            steps: 0,
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.optimizer, cfg.momentum, cfg.clip_norm)
    }
}

/// Applies one descent step on `grads`; returns `(norm, clipped, aborted)`.
/// A non-finite gradient leaves the parameters untouched.
pub fn apply_update(
    params: &mut PolicyParams,
    opt: &mut Optimizer,
    grads: &[Array2<f64>],
    lr: f64,
) -> (f64, bool, bool) {
    let sq: f64 = grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum();
    let norm = sq.sqrt();
    if !norm.is_finite() {
        log::warn!("non-finite gradient; step skipped");
        return (norm, false, true);
    }
    let clipped = opt.clip_norm > 0.0 && norm > opt.clip_norm;
    let scale = if clipped { opt.clip_norm / norm } else { 1.0 };
    if clipped {
        log::debug!("gradient norm {norm:.4} clipped to {}", opt.clip_norm);
    }
    match opt.kind {
        OptimizerKind::Sgd => {
            for (p, g) in params.tensors_mut().iter_mut().zip(grads) {
                p.scaled_add(-lr * scale, g);
            }
        }
        OptimizerKind::Momentum => {
            let v = opt
                .velocity
                .get_or_insert_with(|| grads.iter().map(|g| Array2::zeros(g.dim())).collect());
            for ((p, g), v) in params.tensors_mut().iter_mut().zip(grads).zip(v.iter_mut()) {
                *v *= opt.momentum;
                v.scaled_add(scale, g);
                p.scaled_add(-lr, v);
            }
        }
        OptimizerKind::Adam => {
            let zeros = || grads.iter().map(|g| Array2::zeros(g.dim())).collect::<Vec<_>>();
            let m = opt.velocity.get_or_insert_with(zeros);
            let v = opt.second.get_or_insert_with(zeros);
            opt.steps += 1;
            let b1 = opt.momentum;
            let c1 = 1.0 - b1.powi(opt.steps);
            let c2 = 1.0 - ADAM_BETA2.powi(opt.steps);
            for (((p, g), m), v) in params.tensors_mut().iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * scale * g);
                v.zip_mut_with(g, |v, &g| *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * (scale * g).powi(2));
                ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                    *p -= lr * (m / c1) / ((v / c2).sqrt() + ADAM_EPS);
                });
            }
        }
    }
    params.clamp_lambda();
    (norm, clipped, false)
}

/// Baseline and search settings implied by the ablation flags.
pub(crate) fn objective(cfg: &TrainConfig) -> (Option<LocalSearchConfig>, Baseline) {
    let ls = cfg.use_interleaved_ls.then(|| cfg.ls_config());
    // Without local search the rollout baseline would cancel the reward.
    let baseline = if cfg.use_rollout_baseline && cfg.use_interleaved_ls {
        Baseline::PolicyRollout
    } else {
        Baseline::SelfCritic
    };
    (ls, baseline)
}

/// One training step on a batch of same-size instances.
pub fn smoothed_policy_gradient_step(
    params: &mut PolicyParams,
    opt: &mut Optimizer,
    instances: &[Instance],
    cfg: &TrainConfig,
    lr: f64,
    rng: &RngStream,
) -> Result<StepStats> {
    let (ls, baseline) = objective(cfg);
    let est = estimate_gradient(params, instances, &cfg.preprocess_config(), ls.as_ref(), baseline, rng)?;
    let (grad_norm, clipped, aborted) = apply_update(params, opt, &est.grads, lr);
    let b = est.items.len() as f64;
    let mean = |f: &dyn Fn(&ItemStats) -> f64| est.items.iter().map(f).sum::<f64>() / b;
    Ok(StepStats {
        n: instances[0].len(),
        mean_raw_len: mean(&|s| s.raw_len),
        mean_improved_len: mean(&|s| s.improved_len),
        mean_advantage: mean(&|s| s.advantage),
        mean_abs_advantage: mean(&|s| s.advantage.abs()),
        grad_norm,
        clipped,
        aborted,
    })
}
