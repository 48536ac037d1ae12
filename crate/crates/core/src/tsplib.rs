//! TSPLIB reader and writer for symmetric `EUC_2D` instances.
//!
//! Gaps on TSPLIB instances are reported with the library's own integer
//! distance convention ([`tsplib_length`]) against the published optima,
//! while solvers work on coordinates normalized to the unit square.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::equivariance::fit_unit_square;
use crate::error::{Error, Result};
use crate::tsp::{check_permutation, Instance, Point};

/// Supported `EDGE_WEIGHT_TYPE` values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeWeightType {
    Euc2d,
}

impl EdgeWeightType {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeWeightType::Euc2d => "EUC_2D",
        }
    }
}

/// A parsed TSPLIB problem.
#[derive(Debug, Clone, PartialEq)]
pub struct TsplibRecord {
    pub name: String,
    pub comment: Option<String>,
    pub dimension: usize,
    pub edge_weight_type: EdgeWeightType,
    /// Coordinates in file units, ordered by node id.
    pub raw_coords: Vec<Point>,
    pub known_opt: Option<u64>,
}

impl TsplibRecord {
    /// The instance in original units (no normalization).
    pub fn raw_instance(&self) -> Result<Instance> {
        Ok(Instance::new(self.raw_coords.clone())?.with_id(self.name.clone()))
    }
}

/// Published optimal tour lengths of the `EUC_2D` instances used for
/// benchmarking.
const KNOWN_OPTIMA: &[(&str, u64)] = &[
    ("eil51", 426),
    ("berlin52", 7542),
    ("st70", 675),
    ("eil76", 538),
    ("pr76", 108_159),
    ("rat99", 1211),
    ("kroA100", 21_282),
    ("kroB100", 22_141),
    ("kroC100", 20_749),
    ("kroD100", 21_294),
    ("kroE100", 22_068),
    ("rd100", 7910),
    ("eil101", 629),
    ("lin105", 14_379),
    ("pr107", 44_303),
    ("pr124", 59_030),
    ("bier127", 118_282),
    ("ch130", 6110),
    ("pr136", 96_772),
    ("pr144", 58_537),
    ("ch150", 6528),
    ("kroA150", 26_524),
    ("kroB150", 26_130),
    ("pr152", 73_682),
    ("u159", 42_080),
    ("rat195", 2323),
    ("d198", 15_780),
    ("kroA200", 29_368),
    ("kroB200", 29_437),
    ("ts225", 126_643),
    ("tsp225", 3916),
    ("pr226", 80_369),
    ("gil262", 2378),
    ("pr264", 49_135),
    ("a280", 2579),
    ("pr299", 48_191),
    ("lin318", 42_029),
    ("rd400", 15_281),
    ("fl417", 11_861),
    ("pr439", 107_217),
    ("pcb442", 50_778),
    ("d493", 35_002),
    ("u574", 36_905),
    ("rat575", 6773),
    ("p654", 34_643),
    ("d657", 48_912),
    ("u724", 41_910),
    ("rat783", 8806),
    ("pr1002", 259_045),
];

pub fn known_optimum(name: &str) -> Option<u64> {
    KNOWN_OPTIMA
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|&(_, v)| v)
}

/// Instances shipped with the crate.
pub const BUNDLED: &[&str] = &["eil51", "berlin52"];

pub fn bundled_text(name: &str) -> Option<&'static str> {
    match name {
        "eil51" => Some(include_str!("../data/tsplib/eil51.tsp")),
        "berlin52" => Some(include_str!("../data/tsplib/berlin52.tsp")),
        _ => None,
    }
}

pub fn bundled(name: &str) -> Option<TsplibRecord> {
    bundled_text(name).map(|t| parse_tsplib(t.as_bytes()).expect("bundled TSPLIB file parses"))
}

/// Parses a TSPLIB file with a `NODE_COORD_SECTION`.
pub fn parse_tsplib(text: &[u8]) -> Result<TsplibRecord> {
    let text = std::str::from_utf8(text).map_err(|e| Error::Parse(format!("not UTF-8: {e}")))?;
    let mut name = None;
    let mut comment = None;
    let mut dimension = None;
    let mut edge_type = None;
    let mut optimum = None;
    let mut nodes: BTreeMap<u64, Point> = BTreeMap::new();
    let mut in_coords = false;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line == "EOF" {
            break;
        }
        if in_coords {
            let starts_numeric = line
                .chars()
                .next()
                .is_some_and(|c| c.is_ascii_digit() || c == '-' || c == '+');
            if starts_numeric {
                let mut it = line.split_whitespace();
                let parse_err = || Error::Parse(format!("line {}: bad coordinate line {line:?}", lineno + 1));
                let id: u64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(parse_err)?;
                let x: f64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(parse_err)?;
                let y: f64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(parse_err)?;
                if it.next().is_some() {
                    return Err(parse_err());
                }
                if nodes.insert(id, Point { x, y }).is_some() {
                    return Err(Error::Parse(format!("line {}: duplicate node id {id}", lineno + 1)));
                }
                continue;
            }
            in_coords = false;
        }

        let (key, value) = match line.split_once(':') {
            Some((k, v)) => (k.trim(), v.trim()),
            None => (line.trim_end_matches(':').trim(), ""),
        };
        match key {
            "NAME" => name = Some(value.to_string()),
            "COMMENT" => comment = Some(value.to_string()),
            "TYPE" => {
                if value != "TSP" {
                    return Err(Error::UnsupportedFormat(format!("TYPE {value}")));
                }
            }
            "DIMENSION" => {
                let d: usize = value
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad DIMENSION {value:?}")))?;
                if d == 0 {
                    return Err(Error::Parse("DIMENSION must be positive".into()));
                }
                dimension = Some(d);
            }
            "EDGE_WEIGHT_TYPE" => {
                if value != "EUC_2D" {
                    return Err(Error::UnsupportedFormat(format!("EDGE_WEIGHT_TYPE {value}")));
                }
                edge_type = Some(EdgeWeightType::Euc2d);
            }
            "OPTIMUM" => {
                optimum = Some(
                    value
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad OPTIMUM {value:?}")))?,
                )
            }
            "NODE_COORD_SECTION" => in_coords = true,
            _ if key.ends_with("_SECTION") => {
                return Err(Error::UnsupportedFormat(format!("section {key}")));
            }
            // Other specification keywords (DISPLAY_DATA_TYPE, ...) carry nothing we use.
            _ => {}
        }
    }

    let dimension = dimension.ok_or_else(|| Error::Parse("missing DIMENSION".into()))?;
    let edge_weight_type = edge_type.ok_or_else(|| Error::Parse("missing EDGE_WEIGHT_TYPE".into()))?;
    if nodes.len() != dimension {
        return Err(Error::Parse(format!(
            "DIMENSION is {dimension} but {} coordinate lines were read",
            nodes.len()
        )));
    }
    let name = name.unwrap_or_default();
    let known_opt = optimum.or_else(|| known_optimum(&name));
    Ok(TsplibRecord {
        name,
        comment,
        dimension,
        edge_weight_type,
        raw_coords: nodes.into_values().collect(),
        known_opt,
    })
}

/// Writes `record` back in TSPLIB syntax with contiguous node ids.
pub fn to_tsplib_string(record: &TsplibRecord) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "NAME : {}", record.name);
    if let Some(c) = &record.comment {
        let _ = writeln!(s, "COMMENT : {c}");
    }
    let _ = writeln!(s, "TYPE : TSP");
    let _ = writeln!(s, "DIMENSION : {}", record.dimension);
    let _ = writeln!(s, "EDGE_WEIGHT_TYPE : {}", record.edge_weight_type.as_str());
    if let Some(opt) = record.known_opt {
        if known_optimum(&record.name) != Some(opt) {
            let _ = writeln!(s, "OPTIMUM : {opt}");
        }
    }
    let _ = writeln!(s, "NODE_COORD_SECTION");
    for (i, p) in record.raw_coords.iter().enumerate() {
        let _ = writeln!(s, "{} {:?} {:?}", i + 1, p.x, p.y);
    }
    s.push_str("EOF\n");
    s
}

/// TSPLIB `nint` rounding of a Euclidean distance.
#[inline]
pub fn euc_2d(a: Point, b: Point) -> u64 {
    (a.dist(b) + 0.5).floor() as u64
}

/// Tour length under the `EUC_2D` convention: every edge is rounded to the
/// nearest integer before summing.
pub fn tsplib_length(record: &TsplibRecord, order: &[usize]) -> Result<u64> {
    check_permutation(order, record.raw_coords.len())?;
    let n = order.len();
    let c = &record.raw_coords;
    Ok((0..n).map(|t| euc_2d(c[order[t]], c[order[(t + 1) % n]])).sum())
}

/// Min-max normalization into `[0,1]²` with one shared scale factor, so
/// angles and the optimal tour are preserved.
pub fn normalize_to_unit_square(record: &TsplibRecord) -> Result<Instance> {
    let pts = fit_unit_square(&record.raw_coords).ok_or_else(|| {
        Error::DegenerateInstance(format!("all cities of {} coincide", record.name))
    })?;
    Ok(Instance::new(pts)?.with_id(record.name.clone()))
}

/// Gap of an integer length to the known optimum, in percent.
pub fn gap_percent(length: u64, opt: u64) -> f64 {
    100.0 * (length as f64 - opt as f64) / opt as f64
}
