//! Instances, tours and tour-length evaluation for the symmetric 2D
//! Euclidean TSP.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Largest instance the exhaustive oracle accepts.
pub const BRUTE_FORCE_MAX: usize = 10;

/// A point in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Point { x, y }
    }
}

/// A set of cities in the plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    coords: Vec<Point>,
    id: Option<String>,
}

impl Instance {
    /// Builds an instance; rejects empty input and non-finite coordinates.
    pub fn new(coords: Vec<Point>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidArgument("instance needs at least one city".into()));
        }
        if let Some(i) = coords.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument(format!("city {} has a non-finite coordinate", i + 1)));
        }
        Ok(Self { coords, id: None })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn from_xy(xy: &[(f64, f64)]) -> Result<Self> {
        Self::new(xy.iter().copied().map(Point::from).collect())
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn id(&self) -> Option<&str> {
        self.id.as_deref()
    }

    #[inline]
    pub fn dist(&self, a: usize, b: usize) -> f64 {
        self.coords[a].dist(self.coords[b])
    }

    /// Applies `f` to every coordinate, keeping the id.
    pub fn map_points(&self, f: impl Fn(Point) -> Point) -> Result<Self> {
        let mut out = Self::new(self.coords.iter().copied().map(f).collect())?;
        out.id = self.id.clone();
        Ok(out)
    }

    /// Reorders cities: city `i` of the result is city `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.len())?;
        let mut out = Self::new(perm.iter().map(|&i| self.coords[i]).collect())?;
        out.id = self.id.clone();
        Ok(out)
    }
}

/// A closed tour: a permutation of city indices (0-based) with its cached
/// length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tour {
    order: Vec<usize>,
    length: f64,
}

impl Tour {
    pub fn new(instance: &Instance, order: Vec<usize>) -> Result<Self> {
        let length = tour_length(instance, &order)?;
        Ok(Self { order, length })
    }

    /// The identity tour `0, 1, ..., n-1`.
    pub fn identity(instance: &Instance) -> Self {
        let order: Vec<usize> = (0..instance.len()).collect();
        let length = cycle_length(instance, &order);
        Self { order, length }
    }

    /// A uniformly random tour.
    pub fn random(instance: &Instance, rng: &mut RngStream) -> Self {
        let mut order: Vec<usize> = (0..instance.len()).collect();
        rng.shuffle(&mut order);
        let length = cycle_length(instance, &order);
        Self { order, length }
    }

    pub(crate) fn from_parts(instance: &Instance, order: Vec<usize>) -> Self {
        debug_assert!(check_permutation(&order, instance.len()).is_ok());
        let length = cycle_length(instance, &order);
        Self { order, length }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn into_order(self) -> Vec<usize> {
        self.order
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// 1-based city labels, as printed by the command line tools.
    pub fn one_based(&self) -> Vec<usize> {
        self.order.iter().map(|&c| c + 1).collect()
    }
}

/// Checks that `order` is a permutation of `0..n`.
pub fn check_permutation(order: &[usize], n: usize) -> Result<()> {
    if order.len() != n {
        return Err(Error::InvalidArgument(format!(
            "tour has {} entries but the instance has {} cities",
            order.len(),
            n
        )));
    }
    let mut seen = vec![false; n];
    for &c in order {
        if c >= n {
            return Err(Error::InvalidArgument(format!("city index {c} out of range")));
        }
        if std::mem::replace(&mut seen[c], true) {
            return Err(Error::InvalidArgument(format!("city index {c} repeated")));
        }
    }
    Ok(())
}

/// Length of the closed tour `order`, including the edge back to the start.
pub fn tour_length(instance: &Instance, order: &[usize]) -> Result<f64> {
    check_permutation(order, instance.len())?;
    Ok(cycle_length(instance, order))
}

pub(crate) fn cycle_length(instance: &Instance, order: &[usize]) -> f64 {
    let n = order.len();
    (0..n)
        .map(|t| instance.dist(order[t], order[(t + 1) % n]))
        .sum()
}

/// `n` cities drawn i.i.d. uniformly from the unit square.
pub fn random_instance(n: usize, rng: &mut RngStream) -> Result<Instance> {
    if n == 0 {
        return Err(Error::InvalidArgument("random_instance needs n >= 1".into()));
    }
    let coords = (0..n)
        .map(|_| {
            let x = rng.uniform();
            let y = rng.uniform();
            Point { x, y }
        })
        .collect();
    Instance::new(coords)
}

/// Dense symmetric distance table.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(instance: &Instance) -> Self {
        let n = instance.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = instance.dist(i, j);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Self { n, d }
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.d[a * self.n + b]
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn tour_length(&self, order: &[usize]) -> f64 {
        let n = order.len();
        (0..n).map(|t| self.get(order[t], order[(t + 1) % n])).sum()
    }
}

/// Exhaustive search with city 0 pinned first. Ties go to the
/// lexicographically smallest order.
pub fn brute_force_optimal(instance: &Instance) -> Result<Tour> {
    let n = instance.len();
    if n > BRUTE_FORCE_MAX {
        return Err(Error::OracleSizeExceeded(n));
    }
    if n < 3 {
        return Err(Error::InvalidArgument(format!("brute force needs N >= 3, got {n}")));
    }
    let dm = DistanceMatrix::new(instance);
    let mut rest: Vec<usize> = (1..n).collect();
    let mut best_order = Vec::new();
    let mut best = f64::INFINITY;
    let mut order = vec![0; n];
    loop {
        order[1..].copy_from_slice(&rest);
        let len = dm.tour_length(&order);
        if len < best - 1e-12 {
            best = len;
            best_order.clone_from(&order);
        }
        if !next_permutation(&mut rest) {
            break;
        }
    }
    Ok(Tour::from_parts(instance, best_order))
}

fn next_permutation(v: &mut [usize]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn square() -> Instance {
        Instance::from_xy(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]).unwrap()
    }

    #[test]
    fn square_perimeter() {
        assert_abs_diff_eq!(tour_length(&square(), &[0, 1, 2, 3]).unwrap(), 4.0);
    }

    #[test]
    fn collinear_out_and_back() {
        let inst = Instance::from_xy(&[(0.0, 0.0), (0.5, 0.0), (1.0, 0.0)]).unwrap();
        for order in [[0, 1, 2], [1, 0, 2], [2, 1, 0]] {
            assert_abs_diff_eq!(tour_length(&inst, &order).unwrap(), 2.0);
        }
    }

    #[test]
    fn seven_city_identity_matches_resummation() {
        let inst = random_instance(7, &mut RngStream::new(7)).unwrap();
        let c = inst.coords();
        // Second implementation: explicit edge list with sqrt of squares.
        let mut oracle = 0.0;
        for k in 0..7 {
            let (a, b) = (c[k], c[(k + 1) % 7]);
            oracle += ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
        }
        let got = tour_length(&inst, &[0, 1, 2, 3, 4, 5, 6]).unwrap();
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn length_rejects_bad_tours() {
        let inst = square();
        assert!(matches!(tour_length(&inst, &[0, 1, 2]), Err(Error::InvalidArgument(_))));
        assert!(matches!(tour_length(&inst, &[0, 1, 2, 2]), Err(Error::InvalidArgument(_))));
        assert!(matches!(tour_length(&inst, &[0, 1, 2, 9]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn instance_rejects_non_finite() {
        assert!(Instance::from_xy(&[(0.0, f64::NAN)]).is_err());
        assert!(Instance::from_xy(&[(f64::INFINITY, 0.0)]).is_err());
        assert!(Instance::new(vec![]).is_err());
    }

    #[test]
    fn random_instance_is_reproducible() {
        let a = random_instance(20, &mut RngStream::new(7)).unwrap();
        let b = random_instance(20, &mut RngStream::new(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_instance_in_unit_square() {
        let inst = random_instance(1000, &mut RngStream::new(3)).unwrap();
        assert!(inst
            .coords()
            .iter()
            .all(|p| (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y)));
    }

    #[test]
    fn random_instance_mean_is_centered() {
        let inst = random_instance(10_000, &mut RngStream::new(5)).unwrap();
        let n = inst.len() as f64;
        let mx = inst.coords().iter().map(|p| p.x).sum::<f64>() / n;
        let my = inst.coords().iter().map(|p| p.y).sum::<f64>() / n;
        assert!((mx - 0.5).abs() < 0.01, "mean x {mx}");
        assert!((my - 0.5).abs() < 0.01, "mean y {my}");
    }

    #[test]
    fn random_instance_rejects_zero() {
        assert!(random_instance(0, &mut RngStream::new(1)).is_err());
    }

    #[test]
    fn brute_force_square() {
        let t = brute_force_optimal(&square()).unwrap();
        assert_abs_diff_eq!(t.length(), 4.0);
        assert_eq!(t.order(), &[0, 1, 2, 3]);
    }

    #[test]
    fn brute_force_circle_is_angular_order() {
        // Cities listed out of angular order.
        let angles = [0.0, 2.0, 4.0, 1.0, 3.0];
        let xy: Vec<(f64, f64)> = angles
            .iter()
            .map(|k| {
                let a = k * std::f64::consts::TAU / 5.0;
                (a.cos(), a.sin())
            })
            .collect();
        let t = brute_force_optimal(&Instance::from_xy(&xy).unwrap()).unwrap();
        // Angular order is 0,3,1,4,2; its reversal 0,2,4,1,3 is lexicographically smaller.
        assert_eq!(t.order(), &[0, 2, 4, 1, 3]);
    }

    #[test]
    fn brute_force_refuses_large() {
        let inst = random_instance(11, &mut RngStream::new(1)).unwrap();
        assert!(matches!(brute_force_optimal(&inst), Err(Error::OracleSizeExceeded(11))));
    }

    #[test]
    fn next_permutation_counts() {
        let mut v = vec![0, 1, 2, 3];
        let mut count = 1;
        while next_permutation(&mut v) {
            count += 1;
        }
        assert_eq!(count, 24);
    }
}
