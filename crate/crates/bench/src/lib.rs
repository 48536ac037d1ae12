//! Fixtures shared by the criterion benchmarks in `benches/`.

use tsprl::tsp::random_instance;
use tsprl::{Instance, RngStream, Tour};

/// A uniform random instance and a random tour on it, both seeded by `n`.
pub fn fixture(n: usize) -> (Instance, Tour) {
    let rng = RngStream::new(n as u64);
    let inst = random_instance(n, &mut rng.fork(0)).expect("n >= 3");
    let tour = Tour::random(&inst, &mut rng.fork(1));
    (inst, tour)
}
