use serde::{Deserialize, Serialize};

use crate::rng::RngStream;
use crate::tsp::{DistanceMatrix, Instance, Tour};

/// City selection rule of the insertion heuristics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertionVariant {
    Random,
    Nearest,
    Farthest,
}

/// Builds a tour from a random start city, repeatedly choosing an
/// unvisited city by `variant` and inserting it where it adds least length.
pub fn insertion_heuristic(instance: &Instance, variant: InsertionVariant, rng: &mut RngStream) -> Tour {
    let n = instance.len();
    let dm = DistanceMatrix::new(instance);
    let start = rng.below(n);
    let mut order = Vec::with_capacity(n);
    order.push(start);
    let mut remaining: Vec<usize> = (0..n).filter(|&c| c != start).collect();
    let mut to_tour: Vec<f64> = (0..n).map(|c| dm.get(c, start)).collect();

    while !remaining.is_empty() {
        let slot = match variant {
            InsertionVariant::Random => rng.below(remaining.len()),
            InsertionVariant::Nearest => argbest(&remaining, &to_tour, |a, b| a < b),
            InsertionVariant::Farthest => argbest(&remaining, &to_tour, |a, b| a > b),
        };
        let c = remaining.remove(slot);
        let m = order.len();
        let mut best = (f64::INFINITY, 0);
        for k in 0..m {
            let a = order[k];
            let b = order[(k + 1) % m];
            let cost = dm.get(a, c) + dm.get(c, b) - if m > 1 { dm.get(a, b) } else { 0.0 };
            if cost < best.0 {
                best = (cost, k);
            }
        }
        order.insert(best.1 + 1, c);
        for &r in &remaining {
            to_tour[r] = to_tour[r].min(dm.get(r, c));
        }
    }
    Tour::from_parts(instance, order)
}

fn argbest(remaining: &[usize], key: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    for (slot, &c) in remaining.iter().enumerate().skip(1) {
        if better(key[c], key[remaining[best]]) {
            best = slot;
        }
    }
    best
}
