use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::equivariance::{PreprocessConfig, PreprocessStep};
use crate::error::{Error, Result};
use crate::local_search::LocalSearchConfig;
use crate::policy::Architecture;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    /// Adam with `momentum` as the first-moment decay.
    Adam,
}

/// Flat key/value training configuration, read from TOML.
///
/// Missing keys take the defaults below, which follow the full-scale
/// training recipe (200 epochs of 1000 batches of 128 instances).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub sigma_n: f64,
    pub size_min: usize,
    pub size_max: usize,
    /// Train on this size only, bypassing the curriculum.
    pub fixed_size: Option<usize>,
    pub seed: u64,

    pub hidden: usize,
    pub n_gnn: usize,
    pub mlp_hidden: Vec<usize>,

    pub ls_alpha: f64,
    pub ls_beta: f64,
    pub ls_iterations: usize,
    pub ls_gamma: f64,

    pub preprocess_steps: Vec<PreprocessStep>,
    pub preprocess_per_step: bool,
    pub delete_visited: bool,
    pub relative_positions: bool,

    pub optimizer: OptimizerKind,
    pub momentum: f64,
    /// Global gradient-norm bound; `0` disables clipping.
    pub clip_norm: f64,

    pub use_equivariance: bool,
    pub use_rollout_baseline: bool,
    pub use_interleaved_ls: bool,
    pub use_curriculum: bool,
    pub use_rl: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let ls = LocalSearchConfig::default();
        let pre = PreprocessConfig::default();
        let arch = Architecture::default();
        Self {
            epochs: 200,
            steps_per_epoch: 1000,
            batch_size: 128,
            lr: 1e-3,
            lr_decay: 0.96,
            sigma_n: 3.0,
            size_min: 10,
            size_max: 50,
            fixed_size: None,
            seed: 0,
            hidden: arch.hidden,
            n_gnn: arch.n_gnn,
            mlp_hidden: arch.mlp_hidden,
            ls_alpha: ls.alpha,
            ls_beta: ls.beta,
            ls_iterations: ls.iterations,
            ls_gamma: ls.gamma,
            preprocess_steps: pre.steps,
            preprocess_per_step: pre.per_step,
            delete_visited: pre.delete_visited,
            relative_positions: pre.relative_positions,
            optimizer: OptimizerKind::Sgd,
            momentum: 0.9,
            clip_norm: 1.0,
            use_equivariance: true,
            use_rollout_baseline: true,
            use_interleaved_ls: true,
            use_curriculum: true,
            use_rl: true,
        }
    }
}

impl TrainConfig {
    /// Small run used for ablations and the training-progress check:
    /// 5 epochs of 50 batches of 32, sizes 10 to 20.
    pub fn desk() -> Self {
        Self {
            epochs: 5,
            steps_per_epoch: 50,
            batch_size: 32,
            size_min: 10,
            size_max: 20,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 {
            return bad("epochs, steps_per_epoch and batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must be in (0, 1], got {}", self.lr_decay));
        }
        if !(self.sigma_n > 0.0 && self.sigma_n.is_finite()) {
            return bad(format!("sigma_n must be positive, got {}", self.sigma_n));
        }
        if self.size_min < 3 || self.size_min > self.size_max {
            return bad(format!(
                "size range {}..={} must satisfy 3 <= min <= max",
                self.size_min, self.size_max
            ));
        }
        if let Some(n) = self.fixed_size {
            if n < 3 {
                return bad(format!("fixed_size must be at least 3, got {n}"));
            }
        }
        if !(self.clip_norm >= 0.0) {
            return bad(format!("clip_norm must be non-negative, got {}", self.clip_norm));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        self.ls_config().validate()?;
        self.preprocess_config().validate()?;
        self.architecture().validate()
    }

    pub fn ls_config(&self) -> LocalSearchConfig {
        LocalSearchConfig {
            alpha: self.ls_alpha,
            beta: self.ls_beta,
            iterations: self.ls_iterations,
            gamma: self.ls_gamma,
        }
    }

    /// Preprocessing actually used; everything is off without equivariance.
    pub fn preprocess_config(&self) -> PreprocessConfig {
        if !self.use_equivariance {
            return PreprocessConfig::disabled();
        }
        PreprocessConfig {
            steps: self.preprocess_steps.clone(),
            per_step: self.preprocess_per_step,
            delete_visited: self.delete_visited,
            relative_positions: self.relative_positions,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            hidden: self.hidden,
            n_gnn: self.n_gnn,
            mlp_hidden: self.mlp_hidden.clone(),
        }
    }
}
