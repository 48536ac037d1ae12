use std::path::{Path, PathBuf};

use tsprl::training::TrainConfig;
use tsprl_cli::{run, EXIT_IO, EXIT_MODEL, EXIT_OK, EXIT_USAGE};

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn eil51() -> String {
    workspace().join("crates/core/data/tsplib/eil51.tsp").display().to_string()
}

fn invoke(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("tsprl").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn tour_line(stdout: &str) -> Vec<usize> {
    let line = stdout.lines().find_map(|l| l.strip_prefix("tour: ")).expect("tour line");
    line.split_whitespace().map(|t| t.parse().unwrap()).collect()
}

fn value<T: std::str::FromStr>(stdout: &str, key: &str) -> T
where
    T::Err: std::fmt::Debug,
{
    let prefix = format!("{key}: ");
    stdout.lines().find_map(|l| l.strip_prefix(prefix.as_str())).expect(key).trim().parse().unwrap()
}

#[test]
fn smoke_config_trains_and_writes_one_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = workspace().join("configs/smoke.toml");
    let (code, stdout, stderr) = invoke(&["train", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{stderr}");
    assert!(stdout.contains("wrote 1 checkpoint"));
    let ckpts: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "ckpt"))
        .collect();
    assert_eq!(ckpts.len(), 1);

    // The checkpoint solves an instance of a different size.
    let ckpt = ckpts[0].path();
    let (code, stdout, _) = invoke(&["solve", "--random", "12", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    let mut tour = tour_line(&stdout);
    tour.sort_unstable();
    assert_eq!(tour, (1..=12).collect::<Vec<_>>());
}

#[test]
fn zero_learning_rate_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "epochs = 1\nsteps_per_epoch = 1\nbatch_size = 2\nlr = 0.0\n").unwrap();
    let (code, _, stderr) = invoke(&["train", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, EXIT_USAGE);
    assert!(stderr.contains("error"));
}

#[test]
fn unwritable_output_directory_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "not a directory").unwrap();
    let out = blocker.join("run");
    let cfg = workspace().join("configs/smoke.toml");
    let (code, _, _) = invoke(&["train", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_IO);
}

#[test]
fn shipped_configs_parse() {
    let full = TrainConfig::from_file(workspace().join("configs/full-scale.toml")).unwrap();
    assert_eq!((full.epochs, full.steps_per_epoch, full.batch_size), (200, 1000, 128));
    let desk = TrainConfig::from_file(workspace().join("configs/desk.toml")).unwrap();
    assert_eq!((desk.epochs, desk.steps_per_epoch, desk.batch_size), (5, 50, 32));
    assert_eq!((desk.size_min, desk.size_max), (10, 20));
    TrainConfig::from_file(workspace().join("configs/smoke.toml")).unwrap();
}

#[test]
fn unit_square_corners_solve_to_length_four() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("square.tsp");
    std::fs::write(
        &path,
        "NAME : square\nTYPE : TSP\nDIMENSION : 4\nEDGE_WEIGHT_TYPE : EUC_2D\nNODE_COORD_SECTION\n1 0 0\n2 1 1\n3 1 0\n4 0 1\nEOF\n",
    )
    .unwrap();
    let (code, stdout, stderr) = invoke(&["solve", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{stderr}");
    let len: f64 = value(&stdout, "length");
    assert!((len - 4.0).abs() < 1e-9, "{stdout}");
    let mut tour = tour_line(&stdout);
    tour.sort_unstable();
    assert_eq!(tour, vec![1, 2, 3, 4]);
    assert_eq!(value::<u64>(&stdout, "tsplib_length"), 4);
}

#[test]
fn eil51_sampling_never_beats_the_optimum() {
    let (code, stdout, stderr) = invoke(&["solve", &eil51(), "--variant", "S100", "--seed", "3"]);
    assert_eq!(code, EXIT_OK, "{stderr}");
    let len: u64 = value(&stdout, "tsplib_length");
    assert!(len >= 426, "{len}");
    assert_eq!(tour_line(&stdout).len(), 51);
}

#[test]
fn solve_is_deterministic_for_a_seed() {
    let a = invoke(&["solve", "--random", "30", "--variant", "s10", "--seed", "9"]);
    let b = invoke(&["solve", "--random", "30", "--variant", "s10", "--seed", "9"]);
    assert_eq!(a.0, EXIT_OK);
    assert_eq!(a.1, b.1);
}

#[test]
fn bad_checkpoint_is_a_model_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    std::fs::write(&path, "{\"not\": \"a checkpoint\"}").unwrap();
    let (code, _, _) = invoke(&["solve", "--random", "10", "--checkpoint", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_MODEL);
}

#[test]
fn missing_instance_file_is_an_io_error() {
    let (code, _, _) = invoke(&["solve", "/nonexistent/none.tsp"]);
    assert_eq!(code, EXIT_IO);
}

#[test]
fn bench_rejects_bad_arguments() {
    assert_eq!(invoke(&["bench", "--methods", "simulated-annealing"]).0, EXIT_USAGE);
    assert_eq!(invoke(&["bench", "--instances", "0"]).0, EXIT_USAGE);
    assert_eq!(invoke(&["bench", "--suite", "random"]).0, EXIT_USAGE);
    assert_eq!(invoke(&["bench", "--ls-alpha", "0"]).0, EXIT_USAGE);
    assert_eq!(invoke(&["frobnicate"]).0, EXIT_USAGE);
}

#[test]
fn ablate_takes_exactly_one_feature() {
    assert_eq!(invoke(&["ablate", "--off", "curriculum", "--off", "baseline"]).0, EXIT_USAGE);
    assert_eq!(invoke(&["ablate", "--off", "attention"]).0, EXIT_USAGE);
}

#[test]
fn bench_table_and_jsonl_agree() {
    let dir = tempfile::tempdir().unwrap();
    let jsonl = dir.path().join("report.jsonl");
    let (code, stdout, stderr) = invoke(&[
        "bench",
        "--suite",
        "random20",
        "--methods",
        "nearest-insert,farthest-insert",
        "--instances",
        "20",
        "--jsonl",
        jsonl.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{stderr}");
    assert!(stdout.contains("nearest-insert") && stdout.contains("farthest-insert"));
    let text = std::fs::read_to_string(&jsonl).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["format"], "tsprl-bench");
    for row in &lines[1..] {
        assert_eq!(row["instances"], 20);
        assert_eq!(row["opt_kind"], "reference");
        assert!(row["mean_len"].as_f64().unwrap() > 3.0);
    }
}

#[test]
fn help_exits_zero() {
    let (code, stdout, _) = invoke(&["--help"]);
    assert_eq!(code, EXIT_OK);
    assert!(stdout.contains("bench"));
}
