//! Seeded benchmark harness producing gap tables.
//!
//! Random suites are scored against published mean optimal lengths (there
//! is no exact solver here); TSPLIB instances against their known optima
//! using integer `EUC_2D` lengths.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::equivariance::PreprocessConfig;
use crate::error::{Error, Result};
use crate::local_search::{combined_local_search, insertion_heuristic, plain_two_opt_baseline, InsertionVariant, LocalSearchConfig};
use crate::policy::{rollout, sample_best, Architecture, Checkpoint, Decoding, PolicyParams};
use crate::rng::RngStream;
use crate::tsp::{random_instance, Instance, Tour};
use crate::tsplib::{self, TsplibRecord};

pub const REPORT_FORMAT: &str = "tsprl-bench";
pub const REPORT_VERSION: u32 = 1;

/// Mean optimal tour length of uniform random instances, for sizes with a
/// published exact-solver reference.
pub fn reference_mean(n: usize) -> Option<f64> {
    match n {
        20 => Some(3.830),
        50 => Some(5.691),
        100 => Some(7.761),
        200 => Some(10.72),
        500 => Some(16.55),
        1000 => Some(23.12),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Suite {
    /// Uniform instances in the unit square with `n` cities.
    Random(usize),
    /// The bundled TSPLIB instances.
    TsplibSmall,
    /// One TSPLIB file.
    TsplibFile(PathBuf),
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "tsplib-small" {
            return Ok(Suite::TsplibSmall);
        }
        if let Some(path) = s.strip_prefix("tsplib:") {
            return Ok(Suite::TsplibFile(PathBuf::from(path)));
        }
        if let Some(n) = s.strip_prefix("random") {
            if let Ok(n) = n.parse::<usize>() {
                if n >= 3 {
                    return Ok(Suite::Random(n));
                }
            }
        }
        Err(Error::InvalidArgument(format!(
            "unknown suite {s:?} (expected randomN, tsplib-small or tsplib:<path>)"
        )))
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Suite::Random(n) => write!(f, "random{n}"),
            Suite::TsplibSmall => f.write_str("tsplib-small"),
            Suite::TsplibFile(p) => write!(f, "tsplib:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    RandomInsert,
    NearestInsert,
    FarthestInsert,
    TwoOpt,
    /// Combined local search on sampled tours of an untrained policy.
    LsOnly,
    /// Greedy policy tour plus local search.
    Emagic,
    /// Best of 10 sampled, locally improved tours.
    EmagicS,
    /// Best of 100 sampled, locally improved tours.
    EmagicBigS,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::RandomInsert,
        Method::NearestInsert,
        Method::FarthestInsert,
        Method::TwoOpt,
        Method::LsOnly,
        Method::Emagic,
        Method::EmagicS,
        Method::EmagicBigS,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::RandomInsert => "random-insert",
            Method::NearestInsert => "nearest-insert",
            Method::FarthestInsert => "farthest-insert",
            Method::TwoOpt => "2opt",
            Method::LsOnly => "ls-only",
            Method::Emagic => "emagic",
            Method::EmagicS => "emagic-s",
            Method::EmagicBigS => "emagic-S",
        }
    }

    pub fn needs_model(self) -> bool {
        matches!(self, Method::Emagic | Method::EmagicS | Method::EmagicBigS)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

/// Parses a comma-separated method list.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let methods: Vec<Method> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if methods.is_empty() {
        return Err(Error::InvalidArgument("no methods given".into()));
    }
    Ok(methods)
}

/// Everything a benchmark run depends on.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub suite: Suite,
    pub methods: Vec<Method>,
    /// Number of instances for random suites.
    pub instances: usize,
    pub seed: u64,
    pub ls: LocalSearchConfig,
    /// Trained model for the policy-based methods.
    pub model: Option<Checkpoint>,
    /// Architecture of the untrained policy used by `ls-only`.
    pub untrained_arch: Architecture,
    /// Record wall-clock time (makes output non-reproducible).
    pub timing: bool,
}

impl BenchConfig {
    pub fn new(suite: Suite, methods: Vec<Method>, instances: usize, seed: u64) -> Self {
        Self {
            suite,
            methods,
            instances,
            seed,
            ls: LocalSearchConfig::default(),
            model: None,
            untrained_arch: Architecture::default(),
            timing: false,
        }
    }
}

/// One benchmark case: the instance solved, plus its TSPLIB record if any.
#[derive(Debug, Clone)]
pub struct Case {
    pub name: String,
    pub instance: Instance,
    pub record: Option<TsplibRecord>,
}

/// Instances of a suite. Random instance `i` is drawn from
/// `RngStream::new(seed).fork(0).fork(i)`.
pub fn suite_cases(suite: &Suite, count: usize, seed: u64) -> Result<Vec<Case>> {
    match suite {
        Suite::Random(n) => {
            if count == 0 {
                return Err(Error::InvalidArgument("instance count must be positive".into()));
            }
            let base = RngStream::new(seed).fork(0);
            (0..count)
                .map(|i| {
                    Ok(Case {
                        name: format!("random{n}-{i}"),
                        instance: random_instance(*n, &mut base.fork(i as u64))?,
                        record: None,
                    })
                })
                .collect()
        }
        Suite::TsplibSmall => tsplib::BUNDLED
            .iter()
            .map(|name| tsplib_case(tsplib::bundled(name).expect("bundled instance parses")))
            .collect(),
        Suite::TsplibFile(path) => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            Ok(vec![tsplib_case(tsplib::parse_tsplib(&bytes)?)?])
        }
    }
}

fn tsplib_case(record: TsplibRecord) -> Result<Case> {
    Ok(Case {
        name: record.name.clone(),
        instance: tsplib::normalize_to_unit_square(&record)?,
        record: Some(record),
    })
}

/// Policy and preprocessing used by the model-based methods.
#[derive(Debug, Clone)]
pub struct Solver<'a> {
    pub params: &'a PolicyParams,
    pub preprocess: &'a PreprocessConfig,
}

/// Runs one method on one instance.
pub fn solve_with(
    method: Method,
    instance: &Instance,
    ls: &LocalSearchConfig,
    model: Option<&Solver<'_>>,
    untrained: &Solver<'_>,
    rng: &mut RngStream,
) -> Result<Tour> {
    Ok(match method {
        Method::RandomInsert => insertion_heuristic(instance, InsertionVariant::Random, rng),
        Method::NearestInsert => insertion_heuristic(instance, InsertionVariant::Nearest, rng),
        Method::FarthestInsert => insertion_heuristic(instance, InsertionVariant::Farthest, rng),
        Method::TwoOpt => plain_two_opt_baseline(instance, rng),
        Method::LsOnly => {
            let start = rollout(instance, untrained.params, untrained.preprocess, Decoding::Sample, rng)?.tour;
            combined_local_search(instance, &start, ls, rng)
        }
        Method::Emagic | Method::EmagicS | Method::EmagicBigS => {
            let m = model.ok_or_else(|| Error::InvalidArgument(format!("{} needs a checkpoint", method.name())))?;
            let k = match method {
                Method::Emagic => 1,
                Method::EmagicS => 10,
                _ => 100,
            };
            sample_best(instance, m.params, m.preprocess, k, ls, rng)?
        }
    })
}

/// One row of a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: String,
    pub suite: String,
    /// Instance name for TSPLIB rows, `None` for random-suite means.
    pub instance: Option<String>,
    pub instances: usize,
    /// Mean length: normalized units for random suites, integer TSPLIB
    /// units otherwise. Rounded to 4 decimals.
    pub mean_len: f64,
    /// Optimum or reference mean the gap is computed against.
    pub opt: Option<f64>,
    /// `"optimal"` or `"reference"`.
    pub opt_kind: Option<&'static str>,
    /// Percent, rounded to 2 decimals; `None` without a known optimum.
    pub gap_pct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub suite: String,
    pub seed: u64,
    pub instances: usize,
    pub rows: Vec<BenchRow>,
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (x * f).round() / f
}

fn make_row(method: Method, suite: &str, instance: Option<String>, instances: usize, mean: f64, opt: Option<(f64, &'static str)>, wall: Option<u64>) -> BenchRow {
    let mean_len = round_to(mean, 4);
    BenchRow {
        method: method.name().to_string(),
        suite: suite.to_string(),
        instance,
        instances,
        mean_len,
        opt: opt.map(|o| o.0),
        opt_kind: opt.map(|o| o.1),
        gap_pct: opt.map(|(o, _)| round_to(100.0 * (mean - o) / o, 2)),
        wall_ms: wall,
    }
}

/// Runs every method of `cfg` over the suite.
///
/// Method randomness for case `i` comes from `RngStream::new(seed).fork(1)
/// .fork(i)`, identical across methods. Cases run in parallel; results are
/// reduced in case order, so the report does not depend on thread count.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.methods.is_empty() {
        return Err(Error::InvalidArgument("no methods given".into()));
    }
    let cases = suite_cases(&cfg.suite, cfg.instances, cfg.seed)?;
    let untrained_params = PolicyParams::init(&cfg.untrained_arch, &mut RngStream::new(cfg.seed).fork(2))?;
    let default_pre = PreprocessConfig::default();
    let untrained = Solver {
        params: &untrained_params,
        preprocess: &default_pre,
    };
    let model = cfg.model.as_ref().map(|c| Solver {
        params: &c.params,
        preprocess: &c.preprocess,
    });
    for &m in &cfg.methods {
        if m.needs_model() && model.is_none() {
            return Err(Error::InvalidArgument(format!("method {} needs a checkpoint", m.name())));
        }
    }
    let suite_name = cfg.suite.to_string();
    let method_rng = RngStream::new(cfg.seed).fork(1);
    let mut rows = Vec::new();

    for &method in &cfg.methods {
        let start = Instant::now();
        let tours: Vec<Tour> = cases
            .par_iter()
            .enumerate()
            .map(|(i, case)| {
                let mut rng = method_rng.fork(i as u64);
                solve_with(method, &case.instance, &cfg.ls, model.as_ref(), &untrained, &mut rng)
            })
            .collect::<Result<_>>()?;
        let wall = cfg.timing.then(|| start.elapsed().as_millis() as u64);

        match &cfg.suite {
            Suite::Random(n) => {
                let mean = tours.iter().map(Tour::length).sum::<f64>() / tours.len() as f64;
                let opt = reference_mean(*n).map(|r| (r, "reference"));
                rows.push(make_row(method, &suite_name, None, cases.len(), mean, opt, wall));
            }
            Suite::TsplibSmall | Suite::TsplibFile(_) => {
                for (case, tour) in cases.iter().zip(&tours) {
                    let rec = case.record.as_ref().expect("tsplib case has a record");
                    let len = tsplib::tsplib_length(rec, tour.order())?;
                    let opt = rec.known_opt.map(|o| (o as f64, "optimal"));
                    rows.push(make_row(method, &suite_name, Some(case.name.clone()), 1, len as f64, opt, wall));
                }
            }
        }
    }
    Ok(BenchReport {
        suite: suite_name,
        seed: cfg.seed,
        instances: cases.len(),
        rows,
    })
}

impl BenchReport {
    /// Aligned text table.
    pub fn to_table(&self) -> String {
        let timing = self.rows.iter().any(|r| r.wall_ms.is_some());
        let mut header = vec!["method", "suite", "instance", "count", "mean_len", "opt", "gap_%"];
        if timing {
            header.push("wall_ms");
        }
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut c = vec![
                    r.method.clone(),
                    r.suite.clone(),
                    r.instance.clone().unwrap_or_else(|| "-".into()),
                    r.instances.to_string(),
                    format!("{:.4}", r.mean_len),
                    match (r.opt, r.opt_kind) {
                        (Some(o), Some("reference")) => format!("{o} (ref)"),
                        (Some(o), _) => format!("{o}"),
                        _ => String::new(),
                    },
                    r.gap_pct.map(|g| format!("{g:.2}")).unwrap_or_default(),
                ];
                if timing {
                    c.push(r.wall_ms.map(|w| w.to_string()).unwrap_or_default());
                }
                c
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| cells.iter().map(|c| c[i].len()).chain([header[i].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let line = |out: &mut String, row: &[&str]| {
            let parts: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(i, s)| if i < 3 { format!("{s:<w$}", w = widths[i]) } else { format!("{s:>w$}", w = widths[i]) })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &header);
        for c in &cells {
            let refs: Vec<&str> = c.iter().map(String::as_str).collect();
            line(&mut out, &refs);
        }
        out
    }

    /// Line-delimited JSON: a versioned header, then one object per row.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Header<'a> {
            format: &'a str,
            version: u32,
            suite: &'a str,
            seed: u64,
            instances: usize,
        }
        let mut out = serde_json::to_string(&Header {
            format: REPORT_FORMAT,
            version: REPORT_VERSION,
            suite: &self.suite,
            seed: self.seed,
            instances: self.instances,
        })
        .expect("header serializes");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r).expect("row serializes"));
            out.push('\n');
        }
        out
    }
}
