use super::{next, prev, IMPROVEMENT_EPS};
use crate::tsp::{DistanceMatrix, Instance, Tour};

/// Visits every tour position once and moves the city found there to the
/// edge where reinserting it is cheapest, if that beats its current slot.
pub fn local_insertion(instance: &Instance, tour: &Tour) -> Tour {
    let dm = DistanceMatrix::new(instance);
    let mut order = tour.order().to_vec();
    run(&dm, &mut order);
    Tour::from_parts(instance, order)
}

pub(crate) fn run(dm: &DistanceMatrix, order: &mut Vec<usize>) {
    let n = order.len();
    if n < 4 {
        return;
    }
    for t in 0..n {
        let c = order[t];
        let p = order[prev(t, n)];
        let q = order[next(t, n)];
        let removal_gain = dm.get(p, c) + dm.get(c, q) - dm.get(p, q);

        // Edges of the tour with `c` removed, excluding (p, q) where it sits now.
        let mut best = (f64::INFINITY, usize::MAX);
        for k in 0..n {
            let a = order[k];
            let b = order[next(k, n)];
            if a == c || b == c {
                continue;
            }
            let cost = dm.get(a, c) + dm.get(c, b) - dm.get(a, b);
            if cost < best.0 {
                best = (cost, k);
            }
        }
        if best.0 < removal_gain - IMPROVEMENT_EPS {
            let after = order[best.1];
            order.remove(t);
            let pos = order.iter().position(|&x| x == after).expect("city present");
            order.insert(pos + 1, c);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::tsp::{brute_force_optimal, random_instance};

    fn square() -> Instance {
        Instance::from_xy(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]).unwrap()
    }

    #[test]
    fn optimal_square_unchanged() {
        let inst = square();
        let t = Tour::new(&inst, vec![0, 1, 2, 3]).unwrap();
        assert_eq!(local_insertion(&inst, &t), t);
    }

    #[test]
    fn displaced_corner_fixed() {
        let inst = square();
        let t = Tour::new(&inst, vec![0, 2, 1, 3]).unwrap();
        let out = local_insertion(&inst, &t);
        assert!((out.length() - 4.0).abs() < 1e-12, "{:?}", out);
    }

    #[test]
    fn never_worse_and_often_optimal() {
        // Measured 28 of 100 once on these seeds; floor frozen below that.
        let mut hits = 0;
        for seed in 0..100 {
            let mut rng = RngStream::new(1000 + seed);
            let inst = random_instance(8, &mut rng).unwrap();
            let start = Tour::random(&inst, &mut rng);
            let out = local_insertion(&inst, &start);
            assert!(out.length() <= start.length() + 1e-12);
            if out.length() <= brute_force_optimal(&inst).unwrap().length() + 1e-9 {
                hits += 1;
            }
        }
        assert!(hits >= 25, "{hits}");
    }
}
