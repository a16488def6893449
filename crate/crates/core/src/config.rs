//! Strict JSON experiment configuration.
//!
//! Every section and every key is optional; missing values take the defaults
//! below. Unknown keys are rejected at every level.
//!
//! | key | default |
//! |-----|---------|
//! | `synth.*` | see [`SynthConfig::default`] (200 classes × 20 items, dim 64, K = 3) |
//! | `whitening.n_c` | teacher dimension |
//! | `whitening.eps_rel` | `1e-6` |
//! | `whitening.enabled` | `true` (`false` uses L2-normalized raw teachers) |
//! | `fusion.strategy` | `"max-min"` |
//! | `fusion.seed` | `0` |
//! | `fusion.per_batch_rand` | `false` |
//! | `train.tau_s`, `train.tau_t` | `0.05` |
//! | `train.lr0` / `train.lr_min` | `1e-3` / `0` |
//! | `train.weight_decay` | `1e-6` |
//! | `train.steps` / `train.batch_pairs` | `1000` / `64` |
//! | `train.adam_beta1` / `adam_beta2` / `adam_eps` | `0.9` / `0.999` / `1e-8` |
//! | `train.loss` | `"kl"` (also `"ed"`, `"cl"`) |
//! | `train.kl_direction` | `"student-first"` |
//! | `train.student_dim` | `null` (= n_c) |
//! | `train.seed` | `0` |
//! | `eval.k` | `[1, 5, 10]` |
//! | `eval.holdout_fraction` | `0.25` of the classes, taken from the end |
//! | `eval.mrr_batches` / `eval.mrr_batch_pairs` | `20` / `64` |
//! | `eval.seed` | `0` |
//! | `gradcheck.points` / `gradcheck.seed` | `20` / `0` |

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distill::{KlDirection, LossKind, TrainConfig};
use crate::error::{Error, Result};
use crate::fusion::{FusionStrategy, RandMode, StrategyName};
use crate::synthgen::SynthConfig;
use crate::whitening::DEFAULT_EPS_REL;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WhiteningSection {
    pub n_c: Option<usize>,
    pub eps_rel: f64,
    pub enabled: bool,
}

impl Default for WhiteningSection {
    fn default() -> Self {
        Self {
            n_c: None,
            eps_rel: DEFAULT_EPS_REL,
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSection {
    pub strategy: StrategyName,
    pub seed: u64,
    pub per_batch_rand: bool,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self {
            strategy: StrategyName::MaxMin,
            seed: 0,
            per_batch_rand: false,
        }
    }
}

impl FusionSection {
    pub fn strategy(&self) -> FusionStrategy {
        self.strategy.with_seed(self.seed)
    }

    pub fn rand_mode(&self) -> RandMode {
        if self.per_batch_rand {
            RandMode::PerBatch
        } else {
            RandMode::PerElement
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub tau_s: f64,
    pub tau_t: f64,
    pub lr0: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub steps: usize,
    pub batch_pairs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub loss: LossKind,
    pub kl_direction: KlDirection,
    pub student_dim: Option<usize>,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            tau_s: t.tau_s,
            tau_t: t.tau_t,
            lr0: t.lr0,
            lr_min: t.lr_min,
            weight_decay: t.weight_decay,
            steps: t.steps,
            batch_pairs: t.batch_pairs,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            loss: t.loss_kind,
            kl_direction: t.kl_direction,
            student_dim: t.student_dim,
            seed: t.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub k: Vec<usize>,
    pub holdout_fraction: f64,
    pub mrr_batches: usize,
    pub mrr_batch_pairs: usize,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            k: vec![1, 5, 10],
            holdout_fraction: 0.25,
            mrr_batches: 20,
            mrr_batch_pairs: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    pub points: usize,
    pub seed: u64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self { points: 20, seed: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub whitening: WhiteningSection,
    pub fusion: FusionSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub gradcheck: GradcheckSection,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::BadConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train_config().validate()?;
        let w = &self.whitening;
        if !(w.eps_rel > 0.0 && w.eps_rel < 1.0) {
            return Err(Error::BadConfig(format!("whitening.eps_rel must be in (0, 1), got {}", w.eps_rel)));
        }
        if let Some(n_c) = w.n_c {
            if n_c == 0 || n_c > self.synth.teacher_dim {
                return Err(Error::BadConfig(format!(
                    "whitening.n_c must be in 1..={}, got {n_c}",
                    self.synth.teacher_dim
                )));
            }
        }
        let e = &self.eval;
        if e.k.contains(&0) {
            return Err(Error::BadConfig("eval.k values must be >= 1".into()));
        }
        if !(e.holdout_fraction > 0.0 && e.holdout_fraction < 1.0) {
            return Err(Error::BadConfig(format!(
                "eval.holdout_fraction must be in (0, 1), got {}",
                e.holdout_fraction
            )));
        }
        if e.mrr_batch_pairs < 2 {
            return Err(Error::BadConfig("eval.mrr_batch_pairs must be >= 2".into()));
        }
        if self.gradcheck.points == 0 {
            return Err(Error::BadConfig("gradcheck.points must be >= 1".into()));
        }
        Ok(())
    }

    pub fn n_c(&self) -> usize {
        self.whitening.n_c.unwrap_or(self.synth.teacher_dim)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            tau_s: t.tau_s,
            tau_t: t.tau_t,
            lr0: t.lr0,
            lr_min: t.lr_min,
            weight_decay: t.weight_decay,
            steps: t.steps,
            batch_pairs: t.batch_pairs,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            strategy: self.fusion.strategy(),
            rand_mode: self.fusion.rand_mode(),
            loss_kind: t.loss,
            kl_direction: t.kl_direction,
            student_dim: t.student_dim,
            seed: t.seed,
        }
    }
}
