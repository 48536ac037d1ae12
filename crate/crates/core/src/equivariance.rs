//! Canonicalizing preprocessing of city coordinates.
//!
//! Each decoding step sees the remaining cities after mapping them to a
//! standard representative of their symmetry orbit: the principal axis is
//! turned onto the main diagonal, the cloud is fitted into the unit square,
//! and optional flips move most cities into a fixed half. Positions are
//! then expressed relative to the last visited city.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tsp::{Instance, Point};

/// One canonicalization transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessStep {
    Rotation,
    ScaleTranslate,
    ReflectH,
    ReflectV,
    ReflectDiag,
}

impl PreprocessStep {
    pub fn name(self) -> &'static str {
        match self {
            PreprocessStep::Rotation => "rotation",
            PreprocessStep::ScaleTranslate => "scale_translate",
            PreprocessStep::ReflectH => "reflect_h",
            PreprocessStep::ReflectV => "reflect_v",
            PreprocessStep::ReflectDiag => "reflect_diag",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "rotation" => PreprocessStep::Rotation,
            "scale_translate" => PreprocessStep::ScaleTranslate,
            "reflect_h" => PreprocessStep::ReflectH,
            "reflect_v" => PreprocessStep::ReflectV,
            "reflect_diag" => PreprocessStep::ReflectDiag,
            other => return Err(Error::Config(format!("unknown preprocessing step {other:?}"))),
        })
    }

    pub fn apply(self, points: &[Point]) -> Vec<Point> {
        match self {
            PreprocessStep::Rotation => rotate_canonical(points),
            PreprocessStep::ScaleTranslate => scale_translate_canonical(points),
            PreprocessStep::ReflectH => reflect_canonical(points, Reflection::H),
            PreprocessStep::ReflectV => reflect_canonical(points, Reflection::V),
            PreprocessStep::ReflectDiag => reflect_canonical(points, Reflection::Diag),
        }
    }
}

/// How the policy input is built from the instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Transforms applied in order. Empty disables preprocessing.
    pub steps: Vec<PreprocessStep>,
    /// Re-canonicalize the remaining cities at every decoding step instead
    /// of once on the whole instance.
    pub per_step: bool,
    /// Drop visited cities other than the first and last from the view.
    pub delete_visited: bool,
    /// Express positions relative to the last visited city.
    pub relative_positions: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            steps: vec![PreprocessStep::Rotation, PreprocessStep::ScaleTranslate],
            per_step: true,
            delete_visited: true,
            relative_positions: true,
        }
    }
}

impl PreprocessConfig {
    /// Every symmetry-exploiting feature switched off.
    pub fn disabled() -> Self {
        Self {
            steps: Vec::new(),
            per_step: false,
            delete_visited: false,
            relative_positions: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.steps.iter().enumerate() {
            if self.steps[..i].contains(s) {
                return Err(Error::Config(format!("preprocessing step {} listed twice", s.name())));
            }
        }
        Ok(())
    }

    pub fn apply(&self, points: &[Point]) -> Vec<Point> {
        let mut pts = points.to_vec();
        for step in &self.steps {
            pts = step.apply(&pts);
        }
        pts
    }
}

/// Min-max fit into `[0,1]²` with one shared scale. `None` when all points
/// coincide.
pub fn fit_unit_square(points: &[Point]) -> Option<Vec<Point>> {
    let (min, max) = bounds(points)?;
    let scale = (max.x - min.x).max(max.y - min.y);
    if !(scale > 0.0) {
        return None;
    }
    Some(
        points
            .iter()
            .map(|p| Point {
                x: (p.x - min.x) / scale,
                y: (p.y - min.y) / scale,
            })
            .collect(),
    )
}

fn bounds(points: &[Point]) -> Option<(Point, Point)> {
    let first = *points.first()?;
    Some(points.iter().fold((first, first), |(lo, hi), p| {
        (
            Point::new(lo.x.min(p.x), lo.y.min(p.y)),
            Point::new(hi.x.max(p.x), hi.y.max(p.y)),
        )
    }))
}

/// Translate the bounding box to the origin and divide by the larger side.
/// Degenerate input is returned unchanged.
pub fn scale_translate_canonical(points: &[Point]) -> Vec<Point> {
    fit_unit_square(points).unwrap_or_else(|| points.to_vec())
}

/// Angle in `(-π/2, π/2]` of the largest-variance direction of the points,
/// or `None` if the covariance vanishes.
pub fn principal_angle(points: &[Point]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p.x - cx, p.y - cy);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let scale = points.iter().map(|p| p.x.abs().max(p.y.abs())).fold(0.0, f64::max).max(1.0);
    if sxx + syy <= 1e-24 * scale * scale * n {
        return None;
    }
    let mut phi = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    // atan2 may return -π, i.e. a vertical axis pointing down: orient it up.
    if phi <= -FRAC_PI_2 {
        phi += std::f64::consts::PI;
    }
    Some(phi)
}

/// Rotate the principal axis onto the 45° diagonal, then fit into `[0,1]²`.
///
/// The axis is oriented to a non-negative x-component (up when vertical)
/// before rotating. Degenerate covariance skips the rotation.
pub fn rotate_canonical(points: &[Point]) -> Vec<Point> {
    let Some(phi) = principal_angle(points) else {
        return points.to_vec();
    };
    let theta = FRAC_PI_4 - phi;
    let (s, c) = theta.sin_cos();
    let rotated: Vec<Point> = points
        .iter()
        .map(|p| Point::new(c * p.x - s * p.y, s * p.x + c * p.y))
        .collect();
    scale_translate_canonical(&rotated)
}

/// Which flip [`reflect_canonical`] considers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reflection {
    /// `y -> 1 - y`; fixed region is the lower half.
    H,
    /// `x -> 1 - x`; fixed region is the left half.
    V,
    /// `(x, y) -> (y, x)`; fixed region is below the main diagonal.
    Diag,
}

/// Applies the flip iff strictly more points lie outside the fixed region
/// than inside it. Points on the dividing line count for neither side.
pub fn reflect_canonical(points: &[Point], which: Reflection) -> Vec<Point> {
    let side = |p: &Point| -> f64 {
        match which {
            Reflection::H => p.y - 0.5,
            Reflection::V => p.x - 0.5,
            Reflection::Diag => p.y - p.x,
        }
    };
    let outside = points.iter().filter(|p| side(p) > 0.0).count();
    let inside = points.iter().filter(|p| side(p) < 0.0).count();
    if outside <= inside {
        return points.to_vec();
    }
    points
        .iter()
        .map(|p| match which {
            Reflection::H => Point::new(p.x, 1.0 - p.y),
            Reflection::V => Point::new(1.0 - p.x, p.y),
            Reflection::Diag => Point::new(p.y, p.x),
        })
        .collect()
}

/// What the policy sees at one decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalView {
    /// City ids of the rows, ascending: unvisited cities plus the first and
    /// last visited ones (all cities when visited cities are kept).
    pub remaining_ids: Vec<usize>,
    /// One position per row.
    pub rel_coords: Vec<Point>,
    /// Position of the first visited city in the same frame.
    pub first_rel: Point,
    /// Row of the last visited city; `None` before any city is chosen.
    pub last_row: Option<usize>,
    /// Rows that may still be chosen.
    pub selectable: Vec<bool>,
}

impl CanonicalView {
    pub fn len(&self) -> usize {
        self.remaining_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.remaining_ids.is_empty()
    }

    pub fn selectable_count(&self) -> usize {
        self.selectable.iter().filter(|&&s| s).count()
    }
}

/// Builds the canonical view after the cities in `visited` (in visiting
/// order) have been chosen.
pub fn build_view(instance: &Instance, visited: &[usize], config: &PreprocessConfig) -> Result<CanonicalView> {
    let n = instance.len();
    let mut is_visited = vec![false; n];
    for &c in visited {
        if c >= n {
            return Err(Error::InvalidArgument(format!("visited city {c} out of range")));
        }
        if std::mem::replace(&mut is_visited[c], true) {
            return Err(Error::InvalidArgument(format!("city {c} visited twice")));
        }
    }
    let coords = instance.coords();

    let (Some(&first), Some(&last)) = (visited.first(), visited.last()) else {
        let pts = config.apply(coords);
        let rel_coords = if config.relative_positions {
            let c = centroid(&pts);
            pts.iter().map(|p| Point::new(p.x - c.x, p.y - c.y)).collect()
        } else {
            pts
        };
        return Ok(CanonicalView {
            remaining_ids: (0..n).collect(),
            rel_coords,
            first_rel: Point::ORIGIN,
            last_row: None,
            selectable: vec![true; n],
        });
    };

    let remaining_ids: Vec<usize> = if config.delete_visited {
        (0..n).filter(|&i| !is_visited[i] || i == first || i == last).collect()
    } else {
        (0..n).collect()
    };
    let row_of = |id: usize| remaining_ids.binary_search(&id).expect("first/last kept in view");
    let first_row = row_of(first);
    let last_row = row_of(last);

    let pts: Vec<Point> = if config.per_step {
        let sub: Vec<Point> = remaining_ids.iter().map(|&i| coords[i]).collect();
        config.apply(&sub)
    } else {
        let all = config.apply(coords);
        remaining_ids.iter().map(|&i| all[i]).collect()
    };

    let (rel_coords, first_rel) = if config.relative_positions {
        let o = pts[last_row];
        let rel: Vec<Point> = pts.iter().map(|p| Point::new(p.x - o.x, p.y - o.y)).collect();
        let f = rel[first_row];
        (rel, f)
    } else {
        let f = pts[first_row];
        (pts, f)
    };
    let selectable = remaining_ids.iter().map(|&i| !is_visited[i]).collect();
    Ok(CanonicalView {
        remaining_ids,
        rel_coords,
        first_rel,
        last_row: Some(last_row),
        selectable,
    })
}

fn centroid(points: &[Point]) -> Point {
    let n = points.len() as f64;
    Point::new(
        points.iter().map(|p| p.x).sum::<f64>() / n,
        points.iter().map(|p| p.y).sum::<f64>() / n,
    )
}
