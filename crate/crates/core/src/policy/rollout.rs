use std::fmt;
use std::str::FromStr;

use super::{step_probs, PolicyParams};
use crate::autodiff::{Backend, Eval};
use crate::equivariance::{build_view, PreprocessConfig};
use crate::error::{Error, Result};
use crate::local_search::{combined_local_search, LocalSearchConfig};
use crate::rng::RngStream;
use crate::tsp::{Instance, Tour};

/// How the next city is chosen from the policy's distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoding<'a> {
    /// Highest probability, smallest city index on ties.
    Greedy,
    /// Draw from the distribution.
    Sample,
    /// Follow a given tour (which must start at city 0) and score it.
    Replay(&'a [usize]),
}

/// A decoded tour with its log-probability and per-step rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub tour: Tour,
    /// Sum of log-probabilities of every action after the fixed first city.
    pub log_prob: f64,
    /// `rewards[t]` is the negative length added by step `t`; the first
    /// entry is 0 and the last includes the closing edge.
    pub rewards: Vec<f64>,
    /// Actions taken after the first city, forced ones included.
    pub decisions: usize,
}

/// Decodes a tour on any backend. Returns the visiting order and, when at
/// least one unforced choice was made, the summed log-probability tensor.
pub fn rollout_with<B: Backend>(
    be: &mut B,
    params: &PolicyParams,
    vars: &[B::Var],
    instance: &Instance,
    preprocess: &PreprocessConfig,
    decoding: Decoding<'_>,
    rng: &mut RngStream,
) -> Result<(Vec<usize>, Option<B::Var>)> {
    let n = instance.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("rollout needs N >= 3, got {n}")));
    }
    if let Decoding::Replay(order) = decoding {
        crate::tsp::check_permutation(order, n)?;
        if order[0] != 0 {
            return Err(Error::InvalidArgument("replayed tour must start at city 0".into()));
        }
    }
    let layout = params.layout();
    let mut visited = Vec::with_capacity(n);
    visited.push(0);
    let mut log_prob: Option<B::Var> = None;

    while visited.len() < n {
        let view = build_view(instance, &visited, preprocess)?;
        let allowed: Vec<usize> = (0..view.len()).filter(|&r| view.selectable[r]).collect();
        let city = if allowed.len() == 1 {
            // Forced move: probability one, nothing to learn.
            view.remaining_ids[allowed[0]]
        } else {
            let probs = step_probs(be, vars, &layout, &view)?;
            let row = {
                let p = be.value(&probs);
                match decoding {
                    Decoding::Greedy => {
                        let mut best = allowed[0];
                        for &r in &allowed[1..] {
                            if p[[r, 0]] > p[[best, 0]] {
                                best = r;
                            }
                        }
                        best
                    }
                    Decoding::Sample => {
                        let u = rng.uniform();
                        let mut acc = 0.0;
                        let mut pick = *allowed.last().expect("non-empty");
                        for &r in &allowed {
                            acc += p[[r, 0]];
                            if u < acc {
                                pick = r;
                                break;
                            }
                        }
                        pick
                    }
                    Decoding::Replay(order) => {
                        let target = order[visited.len()];
                        view.remaining_ids
                            .binary_search(&target)
                            .ok()
                            .filter(|&r| view.selectable[r])
                            .ok_or_else(|| Error::InvalidState(format!("city {target} not selectable")))?
                    }
                }
            };
            let lp = be.log_pick(&probs, row)?;
            log_prob = Some(match log_prob {
                None => lp,
                Some(acc) => be.add(&acc, &lp)?,
            });
            view.remaining_ids[row]
        };
        visited.push(city);
    }
    Ok((visited, log_prob))
}

fn rewards(instance: &Instance, order: &[usize]) -> Vec<f64> {
    let n = order.len();
    let mut r = vec![0.0; n];
    for t in 1..n {
        r[t] = -instance.dist(order[t - 1], order[t]);
    }
    r[n - 1] -= instance.dist(order[n - 1], order[0]);
    r
}

/// Decodes a tour without recording gradients.
pub fn rollout(
    instance: &Instance,
    params: &PolicyParams,
    preprocess: &PreprocessConfig,
    decoding: Decoding<'_>,
    rng: &mut RngStream,
) -> Result<RolloutResult> {
    let mut be = Eval;
    let vars = params.bind(&mut be);
    let (order, lp) = rollout_with(&mut be, params, &vars, instance, preprocess, decoding, rng)?;
    let log_prob = lp.map_or(0.0, |v| v[[0, 0]]);
    let rewards = rewards(instance, &order);
    Ok(RolloutResult {
        decisions: order.len() - 1,
        tour: Tour::new(instance, order)?,
        log_prob,
        rewards,
    })
}

/// Greedy rollout refined by combined local search.
pub fn greedy_then_search(
    instance: &Instance,
    params: &PolicyParams,
    preprocess: &PreprocessConfig,
    ls: &LocalSearchConfig,
    rng: &mut RngStream,
) -> Result<Tour> {
    let r = rollout(instance, params, preprocess, Decoding::Greedy, rng)?;
    Ok(combined_local_search(instance, &r.tour, ls, rng))
}

/// Best of `k` locally improved policy tours. `k = 1` is the greedy
/// variant; larger `k` samples, each sample on its own forked stream.
pub fn sample_best(
    instance: &Instance,
    params: &PolicyParams,
    preprocess: &PreprocessConfig,
    k: usize,
    ls: &LocalSearchConfig,
    rng: &mut RngStream,
) -> Result<Tour> {
    if k == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    if k == 1 {
        return greedy_then_search(instance, params, preprocess, ls, rng);
    }
    let mut best: Option<Tour> = None;
    for i in 0..k {
        let mut r = rng.fork(i as u64);
        let sampled = rollout(instance, params, preprocess, Decoding::Sample, &mut r)?;
        let improved = combined_local_search(instance, &sampled.tour, ls, &mut r);
        if best.as_ref().is_none_or(|b| improved.length() < b.length()) {
            best = Some(improved);
        }
    }
    Ok(best.expect("k >= 1"))
}

/// Solving variants: greedy, best of 10 samples, best of 100 samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Greedy,
    S10,
    S100,
}

impl Variant {
    pub fn samples(self) -> usize {
        match self {
            Variant::Greedy => 1,
            Variant::S10 => 10,
            Variant::S100 => 100,
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Variant::Greedy),
            "s10" | "s" => Ok(Variant::S10),
            "S100" | "S" => Ok(Variant::S100),
            _ => Err(Error::InvalidArgument(format!(
                "unknown variant {s:?} (expected greedy, s10 or S100)"
            ))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Greedy => "greedy",
            Variant::S10 => "s10",
            Variant::S100 => "S100",
        })
    }
}
