//! Tour improvement heuristics and classical constructive baselines.
//!
//! The combined local search cycles local insertion, random 2-opt, search
//! 2-opt and search random 3-opt, `iterations` times. Every stage only
//! accepts strictly improving moves, so tour length never increases.

mod construct;
mod insertion;
mod three_opt;
mod two_opt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tsp::{DistanceMatrix, Instance, Tour};

pub use construct::{insertion_heuristic, InsertionVariant};
pub use insertion::local_insertion;
pub use three_opt::search_random_three_opt;
pub use two_opt::{plain_two_opt_baseline, random_two_opt, search_two_opt, two_opt_first_improvement};

/// Moves must shorten the tour by more than this to be applied.
pub(crate) const IMPROVEMENT_EPS: f64 = 1e-10;

/// Strength parameters of the randomized heuristics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalSearchConfig {
    /// Multiplier of the `alpha * N^beta` trial budget.
    pub alpha: f64,
    /// Exponent of the trial budget.
    pub beta: f64,
    /// Outer repetitions of the combined search.
    pub iterations: usize,
    /// Accepted for configuration compatibility; no heuristic reads it.
    pub gamma: f64,
}

impl Default for LocalSearchConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 1.5,
            iterations: 10,
            gamma: 0.25,
        }
    }
}

impl LocalSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("ls alpha must be positive, got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("ls beta must be positive, got {}", self.beta)));
        }
        if self.iterations == 0 {
            return Err(Error::Config("ls iterations must be at least 1".into()));
        }
        Ok(())
    }

    /// `ceil(alpha * n^beta)`: trial count of random 2-opt and rounds of
    /// search random 3-opt.
    pub fn trials(&self, n: usize) -> usize {
        (self.alpha * (n as f64).powf(self.beta)).ceil() as usize
    }
}

/// Runs the four heuristics in sequence, `config.iterations` times, and
/// returns the best tour seen.
pub fn combined_local_search(
    instance: &Instance,
    tour: &Tour,
    config: &LocalSearchConfig,
    rng: &mut RngStream,
) -> Tour {
    let dm = DistanceMatrix::new(instance);
    let order = combined_with(&dm, tour.order().to_vec(), config, rng);
    Tour::from_parts(instance, order)
}

pub(crate) fn combined_with(
    dm: &DistanceMatrix,
    mut order: Vec<usize>,
    config: &LocalSearchConfig,
    rng: &mut RngStream,
) -> Vec<usize> {
    if order.len() < 4 {
        return order;
    }
    let mut best_len = dm.tour_length(&order);
    let mut best = order.clone();
    let trials = config.trials(order.len());
    for _ in 0..config.iterations {
        insertion::run(dm, &mut order);
        two_opt::random_run(dm, &mut order, trials, rng);
        two_opt::search_run(dm, &mut order);
        three_opt::run(dm, &mut order, trials, rng);
        let len = dm.tour_length(&order);
        if len < best_len {
            best_len = len;
            best.clone_from(&order);
        }
    }
    best
}

#[inline]
pub(crate) fn prev(i: usize, n: usize) -> usize {
    if i == 0 {
        n - 1
    } else {
        i - 1
    }
}

#[inline]
pub(crate) fn next(i: usize, n: usize) -> usize {
    if i + 1 == n {
        0
    } else {
        i + 1
    }
}
