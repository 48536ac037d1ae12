//! Smoothed REINFORCE training with a stochastic size curriculum.

mod config;
mod gradient;
mod trainer;

pub use config::{OptimizerKind, TrainConfig};
pub use gradient::{
    apply_update, estimate_gradient, log_prob_gradient, smoothed_policy_gradient_step, Baseline, GradientEstimate,
    ItemStats, Optimizer, StepStats,
};
pub use trainer::{checkpoint_name, train, EpochSummary, StepRecord, TrainOutcome};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Size distribution for epoch `epoch` (1-based): a Gaussian density with
/// mean `epoch` and standard deviation `sigma` evaluated at every size in
/// `min..=max`, then turned into probabilities by a softmax.
pub fn curriculum_dist(epoch: usize, sigma: f64, min: usize, max: usize) -> Result<Vec<f64>> {
    if epoch == 0 {
        return Err(Error::InvalidArgument("epochs are numbered from 1".into()));
    }
    if !(sigma > 0.0) || min > max {
        return Err(Error::InvalidArgument(format!(
            "curriculum needs sigma > 0 and min <= max (sigma {sigma}, range {min}..={max})"
        )));
    }
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * sigma);
    let g: Vec<f64> = (min..=max)
        .map(|size| {
            let z = (size as f64 - epoch as f64) / sigma;
            norm * (-0.5 * z * z).exp()
        })
        .collect();
    let top = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = g.iter().map(|v| (v - top).exp()).collect();
    let total: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / total).collect())
}

/// Draws an index from a categorical distribution.
pub fn sample_categorical(p: &[f64], rng: &mut RngStream) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Learning rate at 1-based `epoch`: `lr0 * decay^(epoch - 1)`.
pub fn lr_at(lr0: f64, decay: f64, epoch: usize) -> f64 {
    lr0 * decay.powi(epoch.saturating_sub(1) as i32)
}
