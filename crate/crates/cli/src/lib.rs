//! Command-line front end: `train`, `solve`, `bench` and `ablate`.
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 I/O, 4 model
//! (checkpoint) problems, 1 anything else.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use tsprl::bench::{parse_methods, run_bench, BenchConfig, BenchReport, Method, Suite};
use tsprl::policy::{load_checkpoint, sample_best, Checkpoint, PolicyParams, Variant};
use tsprl::training::{train, TrainConfig};
use tsprl::tsp::random_instance;
use tsprl::{tsplib, Error, Instance, LocalSearchConfig, RngStream};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_MODEL: i32 = 4;

/// Environment variable giving the default worker-thread count.
pub const THREADS_ENV: &str = "TSPRL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "tsprl", version, about = "Equivariant RL tour construction with local search for the 2D Euclidean TSP")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy from a TOML config file.
    Train(TrainArgs),
    /// Solve one instance and print the tour.
    Solve(SolveArgs),
    /// Run methods over a benchmark suite and print a gap table.
    Bench(BenchArgs),
    /// Train with one feature disabled and compare against the full model.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct LsArgs {
    #[arg(long = "ls-alpha", default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long = "ls-beta", default_value_t = 1.5)]
    pub beta: f64,
    #[arg(long = "ls-iters", default_value_t = 10)]
    pub iterations: usize,
}

impl LsArgs {
    fn config(&self) -> Result<LocalSearchConfig, Error> {
        let cfg = LocalSearchConfig {
            alpha: self.alpha,
            beta: self.beta,
            iterations: self.iterations,
            ..LocalSearchConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML config file.
    pub config: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for checkpoints and the training log.
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// TSPLIB instance file.
    #[arg(conflicts_with = "random", required_unless_present = "random")]
    pub instance: Option<PathBuf>,
    /// Solve a uniform random instance with this many cities instead.
    #[arg(long)]
    pub random: Option<usize>,
    /// Trained checkpoint; without one an untrained policy is used.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// greedy, s10 or S100.
    #[arg(long, default_value = "greedy")]
    pub variant: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub ls: LsArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// random20, random50, random100, ..., tsplib-small or tsplib:<path>.
    #[arg(long, default_value = "random20")]
    pub suite: String,
    /// Comma-separated list of methods.
    #[arg(long, default_value = "random-insert,nearest-insert,farthest-insert,2opt")]
    pub methods: String,
    /// Instances for random suites.
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint for the emagic methods.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Also write line-delimited JSON records to this file.
    #[arg(long)]
    pub jsonl: Option<PathBuf>,
    /// Report wall-clock time per method.
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    pub ls: LsArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Feature to disable: equivariance, baseline, interleaved-ls,
    /// curriculum or rl. Exactly one.
    #[arg(long, action = clap::ArgAction::Append, required = true)]
    pub off: Vec<String>,
    /// Training config; defaults to the desk-scale recipe.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for both runs' checkpoints.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "random20")]
    pub suite: String,
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long)]
    pub jsonl: Option<PathBuf>,
}

/// Feature that `ablate` can switch off.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    Equivariance,
    Baseline,
    InterleavedLs,
    Curriculum,
    Rl,
}

impl Feature {
    pub fn parse(s: &str) -> Result<Self, Error> {
        Ok(match s {
            "equivariance" => Feature::Equivariance,
            "baseline" => Feature::Baseline,
            "interleaved-ls" => Feature::InterleavedLs,
            "curriculum" => Feature::Curriculum,
            "rl" => Feature::Rl,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown feature {s:?} (expected equivariance, baseline, interleaved-ls, curriculum or rl)"
                )))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Equivariance => "equivariance",
            Feature::Baseline => "baseline",
            Feature::InterleavedLs => "interleaved-ls",
            Feature::Curriculum => "curriculum",
            Feature::Rl => "rl",
        }
    }

    /// Turns the feature off in `cfg`.
    pub fn disable(self, cfg: &mut TrainConfig) {
        match self {
            Feature::Equivariance => cfg.use_equivariance = false,
            Feature::Baseline => cfg.use_rollout_baseline = false,
            Feature::InterleavedLs => cfg.use_interleaved_ls = false,
            Feature::Curriculum => cfg.use_curriculum = false,
            Feature::Rl => cfg.use_rl = false,
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_)
        | Error::Config(_)
        | Error::Parse(_)
        | Error::UnsupportedFormat(_)
        | Error::DegenerateInstance(_) => EXIT_USAGE,
        Error::Io { .. } => EXIT_IO,
        Error::Model(_) => EXIT_MODEL,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args` (including the program name), runs the command writing
/// results to `out` and diagnostics to `err`, and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<(), Error> {
    match command {
        Command::Train(a) => cmd_train(&a, out),
        Command::Solve(a) => cmd_solve(&a, out),
        Command::Bench(a) => cmd_bench(&a, out),
        Command::Ablate(a) => cmd_ablate(&a, out),
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), Error> {
    out.write_all(text.as_bytes()).map_err(|e| Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<(), Error> {
    let mut cfg = TrainConfig::from_file(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let result = train(&cfg, &RngStream::new(cfg.seed), Some(&a.out))?;
    let mut text = String::new();
    for e in &result.epochs {
        text.push_str(&format!(
            "epoch {:>4}  N={:<3} raw {:.4}  improved {:.4}  advantage {:.4}\n",
            e.epoch, e.n, e.mean_raw_len, e.mean_improved_len, e.mean_advantage
        ));
    }
    text.push_str(&format!("wrote {} checkpoint(s) to {}\n", result.checkpoints.len(), a.out.display()));
    write_out(out, &text)
}

fn untrained(seed: u64) -> Result<Checkpoint, Error> {
    Ok(Checkpoint {
        params: PolicyParams::init(&Default::default(), &mut RngStream::new(seed).fork(2))?,
        preprocess: Default::default(),
    })
}

pub fn cmd_solve(a: &SolveArgs, out: &mut dyn Write) -> Result<(), Error> {
    let variant: Variant = a.variant.parse()?;
    let ls = a.ls.config()?;
    let root = RngStream::new(a.seed);
    let (instance, record): (Instance, _) = match (&a.instance, a.random) {
        (Some(path), _) => {
            let bytes = std::fs::read(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let rec = tsplib::parse_tsplib(&bytes)?;
            (tsplib::normalize_to_unit_square(&rec)?, Some(rec))
        }
        (None, Some(n)) => (random_instance(n, &mut root.fork(0))?, None),
        (None, None) => return Err(Error::InvalidArgument("give an instance file or --random N".into())),
    };
    let model = match &a.checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => {
            log::warn!("no checkpoint given; solving with an untrained policy");
            untrained(a.seed)?
        }
    };
    let tour = sample_best(&instance, &model.params, &model.preprocess, variant.samples(), &ls, &mut root.fork(1))?;
    let order: Vec<String> = tour.one_based().iter().map(usize::to_string).collect();
    let mut text = format!("tour: {}\nlength: {:.6}\n", order.join(" "), tour.length());
    if let Some(rec) = &record {
        text.push_str(&format!("tsplib_length: {}\n", tsplib::tsplib_length(rec, tour.order())?));
    }
    write_out(out, &text)
}

fn emit_report(report: &BenchReport, jsonl: Option<&Path>, out: &mut dyn Write) -> Result<(), Error> {
    if let Some(path) = jsonl {
        write_file(path, &report.to_jsonl())?;
    }
    write_out(out, &report.to_table())
}

pub fn cmd_bench(a: &BenchArgs, out: &mut dyn Write) -> Result<(), Error> {
    let suite: Suite = a.suite.parse()?;
    let methods = parse_methods(&a.methods)?;
    let mut cfg = BenchConfig::new(suite, methods, a.instances, a.seed);
    cfg.ls = a.ls.config()?;
    cfg.timing = a.timing;
    if let Some(p) = &a.checkpoint {
        cfg.model = Some(load_checkpoint(p)?);
    }
    let report = run_bench(&cfg)?;
    emit_report(&report, a.jsonl.as_deref(), out)
}

/// Result of an ablation: the full model's rows followed by the ablated
/// model's rows, on identical instances and seeds.
pub fn ablate(feature: Feature, base: &TrainConfig, suite: &Suite, instances: usize, seed: u64, out_dir: Option<&Path>) -> Result<BenchReport, Error> {
    let mut off = base.clone();
    feature.disable(&mut off);
    let root = RngStream::new(seed);
    let full_dir = out_dir.map(|d| d.join("full"));
    let off_dir = out_dir.map(|d| d.join(format!("no-{}", feature.name())));

    let full = train(base, &root, full_dir.as_deref())?;
    let bench_with = |ckpt: Checkpoint, method: Method, label: &str| -> Result<BenchReport, Error> {
        let mut cfg = BenchConfig::new(suite.clone(), vec![method], instances, seed);
        cfg.ls = base.ls_config();
        cfg.untrained_arch = ckpt.params.architecture().clone();
        cfg.model = Some(ckpt);
        let mut rep = run_bench(&cfg)?;
        for row in &mut rep.rows {
            row.method = format!("{label}:{}", row.method);
        }
        Ok(rep)
    };
    let mut report = bench_with(
        Checkpoint {
            params: full.params,
            preprocess: base.preprocess_config(),
        },
        Method::Emagic,
        "full",
    )?;
    let label = format!("no-{}", feature.name());
    let ablated = if feature == Feature::Rl {
        // Nothing to train: sampled untrained tours plus local search.
        let init = train(&off, &root, off_dir.as_deref())?;
        bench_with(
            Checkpoint {
                params: init.params,
                preprocess: off.preprocess_config(),
            },
            Method::LsOnly,
            &label,
        )?
    } else {
        let trained = train(&off, &root, off_dir.as_deref())?;
        bench_with(
            Checkpoint {
                params: trained.params,
                preprocess: off.preprocess_config(),
            },
            Method::Emagic,
            &label,
        )?
    };
    report.rows.extend(ablated.rows);
    Ok(report)
}

pub fn cmd_ablate(a: &AblateArgs, out: &mut dyn Write) -> Result<(), Error> {
    if a.off.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "exactly one --off feature per run, got {}",
            a.off.len()
        )));
    }
    let feature = Feature::parse(&a.off[0])?;
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::desk(),
    };
    cfg.seed = a.seed;
    let suite: Suite = a.suite.parse()?;
    let report = ablate(feature, &cfg, &suite, a.instances, a.seed, a.out.as_deref())?;
    emit_report(&report, a.jsonl.as_deref(), out)
}

/// Applies `TSPRL_THREADS` to the global worker pool, if set.
pub fn init_threads() -> Result<(), Error> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_names_round_trip() {
        for f in [Feature::Equivariance, Feature::Baseline, Feature::InterleavedLs, Feature::Curriculum, Feature::Rl] {
            assert_eq!(Feature::parse(f.name()).unwrap(), f);
        }
        assert!(Feature::parse("lambda").is_err());
    }

    #[test]
    fn equivariance_off_disables_all_preprocessing() {
        let mut cfg = TrainConfig::desk();
        Feature::Equivariance.disable(&mut cfg);
        let pre = cfg.preprocess_config();
        assert!(pre.steps.is_empty());
        assert!(!pre.delete_visited);
        assert!(!pre.relative_positions);
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::Model("x".into())), EXIT_MODEL);
        let io = Error::Io {
            path: "p".into(),
            source: std::io::Error::other("x"),
        };
        assert_eq!(exit_code(&io), EXIT_IO);
        assert_eq!(exit_code(&Error::NonFinite("x".into())), EXIT_FAILURE);
    }
}
