use super::{next, LocalSearchConfig, IMPROVEMENT_EPS};
use crate::rng::RngStream;
use crate::tsp::{DistanceMatrix, Instance, Tour};

/// Change in length from replacing edges (o[i], o[i+1]) and (o[j], o[j+1])
/// by reversing `o[i+1..=j]`. Requires `i < j`.
#[inline]
fn reversal_delta(dm: &DistanceMatrix, o: &[usize], i: usize, j: usize) -> f64 {
    let n = o.len();
    let (a, b) = (o[i], o[i + 1]);
    let (c, d) = (o[j], o[next(j, n)]);
    dm.get(a, c) + dm.get(b, d) - dm.get(a, b) - dm.get(c, d)
}

/// Applies `config.trials(N)` random edge-pair 2-opt attempts, keeping
/// only strictly improving reversals.
pub fn random_two_opt(
    instance: &Instance,
    tour: &Tour,
    config: &LocalSearchConfig,
    rng: &mut RngStream,
) -> Tour {
    let dm = DistanceMatrix::new(instance);
    let mut order = tour.order().to_vec();
    let trials = config.trials(order.len());
    random_run(&dm, &mut order, trials, rng);
    Tour::from_parts(instance, order)
}

pub(crate) fn random_run(dm: &DistanceMatrix, o: &mut [usize], trials: usize, rng: &mut RngStream) {
    let n = o.len();
    if n < 4 {
        return;
    }
    for _ in 0..trials {
        let (x, y) = rng.distinct_pair(n);
        let (i, j) = if x < y { (x, y) } else { (y, x) };
        if j == i + 1 || (i == 0 && j == n - 1) {
            continue;
        }
        if reversal_delta(dm, o, i, j) < -IMPROVEMENT_EPS {
            o[i + 1..=j].reverse();
        }
    }
}

/// For every position `t`, applies the best reversal of `o[t..=t']` over
/// all `t' >= t`, if it strictly shortens the tour.
pub fn search_two_opt(instance: &Instance, tour: &Tour) -> Tour {
    let dm = DistanceMatrix::new(instance);
    let mut order = tour.order().to_vec();
    search_run(&dm, &mut order);
    Tour::from_parts(instance, order)
}

pub(crate) fn search_run(dm: &DistanceMatrix, o: &mut [usize]) {
    let n = o.len();
    if n < 4 {
        return;
    }
    for t in 0..n {
        let a = o[if t == 0 { n - 1 } else { t - 1 }];
        let b = o[t];
        let dab = dm.get(a, b);
        let mut best = (0.0, usize::MAX);
        let end = if t == 0 { n - 1 } else { n };
        for tp in t + 1..end {
            let c = o[tp];
            let e = o[next(tp, n)];
            let delta = dm.get(a, c) + dm.get(b, e) - dab - dm.get(c, e);
            if delta < best.0 {
                best = (delta, tp);
            }
        }
        if best.0 < -IMPROVEMENT_EPS {
            o[t..=best.1].reverse();
        }
    }
}

/// One pass of first-improvement 2-opt; returns whether any move applied.
pub(crate) fn first_improvement_sweep(dm: &DistanceMatrix, o: &mut [usize]) -> bool {
    let n = o.len();
    let mut improved = false;
    if n < 4 {
        return false;
    }
    for i in 0..n - 2 {
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if reversal_delta(dm, o, i, j) < -IMPROVEMENT_EPS {
                o[i + 1..=j].reverse();
                improved = true;
            }
        }
    }
    improved
}

/// Repeats first-improvement sweeps until the tour is 2-opt optimal.
pub fn two_opt_first_improvement(instance: &Instance, tour: &Tour) -> Tour {
    let dm = DistanceMatrix::new(instance);
    let mut order = tour.order().to_vec();
    while first_improvement_sweep(&dm, &mut order) {}
    Tour::from_parts(instance, order)
}

/// Classical 2-opt: a uniformly random tour driven to a 2-opt local optimum.
pub fn plain_two_opt_baseline(instance: &Instance, rng: &mut RngStream) -> Tour {
    let start = Tour::random(instance, rng);
    two_opt_first_improvement(instance, &start)
}
