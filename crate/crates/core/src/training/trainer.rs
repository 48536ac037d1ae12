use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::gradient::{smoothed_policy_gradient_step, Optimizer};
use super::{curriculum_dist, lr_at, sample_categorical};
use crate::error::{Error, Result};
use crate::policy::{save_checkpoint, Checkpoint, PolicyParams};
use crate::rng::RngStream;
use crate::tsp::{random_instance, Instance};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub mean_raw_len: f64,
    pub mean_improved_len: f64,
    pub mean_advantage: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

/// Per-epoch aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub n: usize,
    pub lr: f64,
    pub mean_raw_len: f64,
    pub mean_improved_len: f64,
    pub mean_advantage: f64,
    pub mean_abs_advantage: f64,
    pub clipped_steps: usize,
    pub aborted_steps: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub initial: PolicyParams,
    pub params: PolicyParams,
    pub epochs: Vec<EpochSummary>,
    pub checkpoints: Vec<PathBuf>,
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch-{epoch:04}.ckpt")
}

/// Stream layout: fork 0 initializes the weights, fork 1 draws epoch sizes,
/// fork 2 + epoch generates that epoch's batches.
pub fn train(cfg: &TrainConfig, rng: &RngStream, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let preprocess = cfg.preprocess_config();
    let initial = PolicyParams::init(&cfg.architecture(), &mut rng.fork(0))?;
    let mut params = initial.clone();
    let mut opt = Optimizer::from_config(cfg);
    let mut size_rng = rng.fork(1);
    let mut epochs = Vec::new();
    let mut checkpoints = Vec::new();

    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("train_log.jsonl");
            let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            Some((path, BufWriter::new(f)))
        }
        None => None,
    };

    let save = |params: &PolicyParams, epoch: usize, list: &mut Vec<PathBuf>| -> Result<()> {
        if let Some(dir) = out_dir {
            let path = dir.join(checkpoint_name(epoch));
            save_checkpoint(
                &Checkpoint {
                    params: params.clone(),
                    preprocess: preprocess.clone(),
                },
                &path,
            )?;
            list.push(path);
        }
        Ok(())
    };

    if !cfg.use_rl {
        log::info!("reinforcement learning disabled; keeping initial weights");
        save(&params, 0, &mut checkpoints)?;
        return Ok(TrainOutcome {
            initial,
            params,
            epochs,
            checkpoints,
        });
    }

    let start = Instant::now();
    for epoch in 1..=cfg.epochs {
        let n = match cfg.fixed_size {
            Some(n) => n,
            None if cfg.use_curriculum => {
                let p = curriculum_dist(epoch, cfg.sigma_n, cfg.size_min, cfg.size_max)?;
                cfg.size_min + sample_categorical(&p, &mut size_rng)
            }
            None => cfg.size_max,
        };
        let lr = lr_at(cfg.lr, cfg.lr_decay, epoch);
        let epoch_rng = rng.fork(2 + epoch as u64);
        let mut sums = [0.0f64; 4];
        let (mut clipped, mut aborted) = (0, 0);
        for step in 0..cfg.steps_per_epoch {
            let step_rng = epoch_rng.fork(step as u64);
            let mut data_rng = step_rng.fork(0);
            let batch: Vec<Instance> = (0..cfg.batch_size)
                .map(|_| random_instance(n, &mut data_rng))
                .collect::<Result<_>>()?;
            let s = smoothed_policy_gradient_step(&mut params, &mut opt, &batch, cfg, lr, &step_rng.fork(1))?;
            sums[0] += s.mean_raw_len;
            sums[1] += s.mean_improved_len;
            sums[2] += s.mean_advantage;
            sums[3] += s.mean_abs_advantage;
            clipped += s.clipped as usize;
            aborted += s.aborted as usize;
            if let Some((path, w)) = log.as_mut() {
                let rec = StepRecord {
                    epoch,
                    step: step + 1,
                    n,
                    mean_raw_len: s.mean_raw_len,
                    mean_improved_len: s.mean_improved_len,
                    mean_advantage: s.mean_advantage,
                    lr,
                    wall_ms: start.elapsed().as_millis() as u64,
                };
                let line = serde_json::to_string(&rec).expect("record serializes");
                writeln!(w, "{line}")
                    .and_then(|_| w.flush())
                    .map_err(|e| Error::io(path.as_path(), e))?;
            }
        }
        let t = cfg.steps_per_epoch as f64;
        let summary = EpochSummary {
            epoch,
            n,
            lr,
            mean_raw_len: sums[0] / t,
            mean_improved_len: sums[1] / t,
            mean_advantage: sums[2] / t,
            mean_abs_advantage: sums[3] / t,
            clipped_steps: clipped,
            aborted_steps: aborted,
        };
        log::info!(
            "epoch {epoch}: N={n} raw {:.4} improved {:.4} advantage {:.4} lr {lr:.2e} clipped {clipped}/{}",
            summary.mean_raw_len,
            summary.mean_improved_len,
            summary.mean_advantage,
            cfg.steps_per_epoch
        );
        epochs.push(summary);
        save(&params, epoch, &mut checkpoints)?;
    }
    Ok(TrainOutcome {
        initial,
        params,
        epochs,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            steps_per_epoch: 1,
            batch_size: 2,
            fixed_size: Some(5),
            hidden: 8,
            n_gnn: 1,
            mlp_hidden: vec![8],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn smoke_run_writes_one_checkpoint_and_log() {
        let dir = tempfile::tempdir().unwrap();
        let out = train(&tiny(), &RngStream::new(1), Some(dir.path())).unwrap();
        assert_eq!(out.checkpoints.len(), 1);
        assert!(out.checkpoints[0].ends_with("epoch-0001.ckpt"));
        assert_eq!(out.epochs.len(), 1);
        assert_eq!(out.epochs[0].n, 5);
        let log = fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
        let rec: StepRecord = serde_json::from_str(log.lines().next().unwrap()).unwrap();
        assert_eq!((rec.epoch, rec.step, rec.n), (1, 1, 5));
        if out.epochs[0].mean_advantage != 0.0 {
            assert_ne!(out.params, out.initial);
        }
    }

    #[test]
    fn without_rl_weights_stay_initial() {
        let cfg = TrainConfig { use_rl: false, ..tiny() };
        let out = train(&cfg, &RngStream::new(1), None).unwrap();
        assert_eq!(out.params, out.initial);
        assert!(out.epochs.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let a = train(&tiny(), &RngStream::new(3), None).unwrap();
        let b = train(&tiny(), &RngStream::new(3), None).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.epochs, b.epochs);
    }

    #[test]
    fn unwritable_output_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain-file");
        fs::write(&file, b"x").unwrap();
        assert!(matches!(train(&tiny(), &RngStream::new(1), Some(&file)), Err(Error::Io { .. })));
    }
}
