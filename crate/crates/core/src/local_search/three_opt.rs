use super::{next, LocalSearchConfig, IMPROVEMENT_EPS};
use crate::rng::RngStream;
use crate::tsp::{DistanceMatrix, Instance, Tour};

/// Reconnections of the segments B = o[i+1..=j] and C = o[j+1..=k].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Reconnect {
    /// A B C'
    RevC,
    /// A B' C
    RevB,
    /// A C' B'
    RevBoth,
    /// A B' C'
    RevEach,
    /// A C B
    Swap,
    /// A C B'
    SwapRevB,
    /// A C' B
    SwapRevC,
}

const CASES: [Reconnect; 7] = [
    Reconnect::RevC,
    Reconnect::RevB,
    Reconnect::RevBoth,
    Reconnect::RevEach,
    Reconnect::Swap,
    Reconnect::SwapRevB,
    Reconnect::SwapRevC,
];

#[inline]
fn case_delta(dm: &DistanceMatrix, o: &[usize], i: usize, j: usize, k: usize, case: Reconnect) -> f64 {
    let n = o.len();
    let (a, b, c, d, e, f) = (o[i], o[i + 1], o[j], o[j + 1], o[k], o[next(k, n)]);
    let g = |x: usize, y: usize| dm.get(x, y);
    let base = g(a, b) + g(c, d) + g(e, f);
    let new = match case {
        Reconnect::RevC => g(a, b) + g(c, e) + g(d, f),
        Reconnect::RevB => g(a, c) + g(b, d) + g(e, f),
        Reconnect::RevBoth => g(a, e) + g(d, c) + g(b, f),
        Reconnect::RevEach => g(a, c) + g(b, e) + g(d, f),
        Reconnect::Swap => g(a, d) + g(e, b) + g(c, f),
        Reconnect::SwapRevB => g(a, d) + g(e, c) + g(b, f),
        Reconnect::SwapRevC => g(a, e) + g(d, b) + g(c, f),
    };
    new - base
}

fn apply(o: &mut [usize], i: usize, j: usize, k: usize, case: Reconnect) {
    let seg_b: Vec<usize> = o[i + 1..=j].to_vec();
    let seg_c: Vec<usize> = o[j + 1..=k].to_vec();
    let (first, first_rev, second, second_rev) = match case {
        Reconnect::RevC => (&seg_b, false, &seg_c, true),
        Reconnect::RevB => (&seg_b, true, &seg_c, false),
        Reconnect::RevBoth => (&seg_c, true, &seg_b, true),
        Reconnect::RevEach => (&seg_b, true, &seg_c, true),
        Reconnect::Swap => (&seg_c, false, &seg_b, false),
        Reconnect::SwapRevB => (&seg_c, false, &seg_b, true),
        Reconnect::SwapRevC => (&seg_c, true, &seg_b, false),
    };
    let mut pos = i + 1;
    let mut put = |seg: &[usize], rev: bool| {
        if rev {
            for &x in seg.iter().rev() {
                o[pos] = x;
                pos += 1;
            }
        } else {
            for &x in seg {
                o[pos] = x;
                pos += 1;
            }
        }
    };
    put(first, first_rev);
    put(second, second_rev);
}

/// Best strictly improving reconnection for removed edges after the given
/// three distinct positions, as `(delta, i, j, k, case)`.
fn best_for(dm: &DistanceMatrix, o: &[usize], p: [usize; 3]) -> Option<(f64, usize, usize, usize, Reconnect)> {
    let mut s = p;
    s.sort_unstable();
    let [i, j, k] = s;
    let mut best: Option<(f64, usize, usize, usize, Reconnect)> = None;
    for case in CASES {
        let d = case_delta(dm, o, i, j, k, case);
        if d < best.map_or(-IMPROVEMENT_EPS, |b| b.0) {
            best = Some((d, i, j, k, case));
        }
    }
    best
}

/// Runs `config.trials(N)` rounds; each picks two distinct random removed
/// edges, scans every third edge and applies the best of the seven 3-opt
/// reconnections when it strictly shortens the tour.
pub fn search_random_three_opt(
    instance: &Instance,
    tour: &Tour,
    config: &LocalSearchConfig,
    rng: &mut RngStream,
) -> Tour {
    let dm = DistanceMatrix::new(instance);
    let mut order = tour.order().to_vec();
    let trials = config.trials(order.len());
    run(&dm, &mut order, trials, rng);
    Tour::from_parts(instance, order)
}

pub(crate) fn run(dm: &DistanceMatrix, o: &mut [usize], rounds: usize, rng: &mut RngStream) {
    let n = o.len();
    if n < 4 {
        return;
    }
    for _ in 0..rounds {
        let (t1, t2) = rng.distinct_pair(n);
        let mut best: Option<(f64, usize, usize, usize, Reconnect)> = None;
        for t3 in 0..n {
            if t3 == t1 || t3 == t2 {
                continue;
            }
            if let Some(c) = best_for(dm, o, [t1, t2, t3]) {
                if best.is_none_or(|b| c.0 < b.0) {
                    best = Some(c);
                }
            }
        }
        if let Some((_, i, j, k, case)) = best {
            apply(o, i, j, k, case);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tsp::{check_permutation, random_instance};

    fn polygon(n: usize) -> Instance {
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                (0.5 + 0.4 * a.cos(), 0.5 + 0.4 * a.sin())
            })
            .collect();
        Instance::from_xy(&pts).unwrap()
    }

    #[test]
    fn case_deltas_match_applied_lengths() {
        let mut rng = RngStream::new(41);
        let inst = random_instance(11, &mut rng).unwrap();
        let dm = DistanceMatrix::new(&inst);
        let base: Vec<usize> = Tour::random(&inst, &mut rng).into_order();
        let l0 = dm.tour_length(&base);
        for i in 0..11 {
            for j in i + 1..11 {
                for k in j + 1..11 {
                    for case in CASES {
                        let mut o = base.clone();
                        apply(&mut o, i, j, k, case);
                        check_permutation(&o, 11).unwrap();
                        let want = dm.tour_length(&o) - l0;
                        let got = case_delta(&dm, &base, i, j, k, case);
                        assert!((want - got).abs() < 1e-12, "{i} {j} {k} {case:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn hexagon_hull_order_unchanged() {
        let inst = polygon(6);
        let t = Tour::identity(&inst);
        for seed in 0..20 {
            let out = search_random_three_opt(&inst, &t, &LocalSearchConfig::default(), &mut RngStream::new(seed));
            assert_eq!(out, t);
        }
    }

    #[test]
    fn round_budget() {
        assert_eq!(LocalSearchConfig::default().trials(50), 177);
    }

    /// Length of the best tour reachable by moving one segment elsewhere
    /// without reversing it, by explicit construction.
    fn best_segment_move(inst: &Instance, o: &[usize]) -> f64 {
        let n = o.len();
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let mut t = o[..=i].to_vec();
                    t.extend_from_slice(&o[j + 1..=k]);
                    t.extend_from_slice(&o[i + 1..=j]);
                    t.extend_from_slice(&o[k + 1..]);
                    best = best.min(crate::tsp::tour_length(inst, &t).unwrap());
                }
            }
        }
        best
    }

    #[test]
    fn fixes_a_segment_insertion_defect() {
        let cfg = LocalSearchConfig { alpha: 10.0, ..Default::default() };
        let mut found = false;
        for seed in 0..200 {
            let mut rng = RngStream::new(9000 + seed);
            let inst = random_instance(9, &mut rng).unwrap();
            let t = super::super::two_opt_first_improvement(&inst, &Tour::random(&inst, &mut rng));
            if best_segment_move(&inst, t.order()) >= t.length() - 1e-9 {
                continue;
            }
            found = true;
            let out = search_random_three_opt(&inst, &t, &cfg, &mut rng);
            assert!(out.length() < t.length() - 1e-9, "seed {seed}");
            break;
        }
        assert!(found, "no 2-opt optimal tour with an improving segment move");
    }

    #[test]
    fn monotone_and_valid() {
        for seed in 0..30 {
            let mut rng = RngStream::new(seed);
            let inst = random_instance(15, &mut rng).unwrap();
            let t = Tour::random(&inst, &mut rng);
            let out = search_random_three_opt(&inst, &t, &LocalSearchConfig::default(), &mut rng);
            assert!(out.length() <= t.length() + 1e-12);
            check_permutation(out.order(), 15).unwrap();
        }
    }
}
