//! Run configuration: one flat key space covering data generation, the
//! adaptation phase, budget selection, and fine-tuning. A config file (TOML,
//! flat keys mirroring the struct fields) overrides the defaults; CLI flags
//! override the file. Validation reports every violation with its field
//! path, not just the first.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::budget::Strategy;
use crate::error::{ConfigIssue, Error, Result};
use crate::network::ScheduleStep;
use crate::perturb::PerturbConfig;
use crate::scoring::ScorerKind;

/// Which unsupervised objective the adaptation phase trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UdaMode {
    /// Supervised source loss only; the unsupervised branch is skipped.
    SourceOnly,
    /// Entropy of pristine target predictions.
    Entropy,
    /// Entropy plus consistency under perturbation (the combined objective).
    Consistency,
}

impl fmt::Display for UdaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UdaMode::SourceOnly => "source_only",
            UdaMode::Entropy => "entropy",
            UdaMode::Consistency => "consistency",
        })
    }
}

impl FromStr for UdaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source_only" => Ok(UdaMode::SourceOnly),
            "entropy" => Ok(UdaMode::Entropy),
            "consistency" => Ok(UdaMode::Consistency),
            other => Err(Error::Contract(format!(
                "unknown uda_mode '{other}' (expected source_only, entropy, or consistency)"
            ))),
        }
    }
}

/// Which optimizer family both training phases use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Contract(format!(
                "unknown optimizer '{other}' (expected adam or sgd)"
            ))),
        }
    }
}

/// Every knob of one pipeline run. All randomness descends from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every phase derives its own stream from it.
    pub seed: u64,

    // Synthetic benchmark geometry.
    pub synth_classes: usize,
    pub synth_dim: usize,
    pub synth_n_per_class: usize,
    /// Rotation (degrees, first two feature dims) between domains.
    pub synth_rotation_deg: f64,
    /// Additive Gaussian noise scale on target features.
    pub synth_noise: f64,

    /// Hidden layer widths of the classifier.
    pub hidden_dims: Vec<usize>,

    // Adaptation phase.
    pub uda_mode: UdaMode,
    /// Weight of the unsupervised loss; 0 degenerates to source-only.
    pub lambda: f64,
    pub epochs_uda: usize,
    pub batch_size: usize,
    pub lr_uda: f64,
    pub weight_decay: f64,
    pub uda_schedule: Vec<ScheduleStep>,
    pub optimizer: OptimizerKind,
    /// Momentum coefficient (SGD only).
    pub momentum: f64,
    /// Perturbation profile name: images_flip, images_noflip, vectors, identity.
    pub perturb_profile: String,
    /// Perturbed copies per sample for the consistency scorer.
    pub consistency_copies: usize,

    // Selection phase.
    pub scorer: ScorerKind,
    pub sampler: Strategy,
    /// Budget as a fraction of the target training set, in (0, 1].
    pub budget_fraction: f64,
    /// Keep the literal bin formula (maximum scores land outside the
    /// visited bins) instead of clamping them into the last bin.
    pub literal_bins: bool,

    // Fine-tuning phase.
    pub epochs_finetune: usize,
    pub lr_finetune: f64,
    pub finetune_schedule: Vec<ScheduleStep>,

    // Comparison matrix.
    /// Repeats for rows whose selection is stochastic.
    pub n_repeats: usize,
    /// Worker threads for the comparison matrix.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synth_classes: 3,
            synth_dim: 2,
            synth_n_per_class: 300,
            synth_rotation_deg: 30.0,
            synth_noise: 0.6,
            hidden_dims: vec![64, 64],
            uda_mode: UdaMode::Consistency,
            lambda: 1.0,
            epochs_uda: 120,
            batch_size: 32,
            lr_uda: 1e-3,
            weight_decay: 5e-4,
            uda_schedule: vec![
                ScheduleStep { epoch: 50, factor: 0.1 },
                ScheduleStep { epoch: 90, factor: 0.1 },
            ],
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            perturb_profile: "vectors".into(),
            consistency_copies: 5,
            scorer: ScorerKind::Entropy,
            sampler: Strategy::Uniform,
            budget_fraction: 0.10,
            literal_bins: false,
            epochs_finetune: 50,
            lr_finetune: 1e-4,
            finetune_schedule: vec![
                ScheduleStep { epoch: 10, factor: 0.1 },
                ScheduleStep { epoch: 20, factor: 0.1 },
                ScheduleStep { epoch: 30, factor: 0.1 },
                ScheduleStep { epoch: 40, factor: 0.1 },
            ],
            n_repeats: 10,
            workers: 1,
        }
    }
}

impl RunConfig {
    /// Reads a TOML file of flat keys over the defaults.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(format!("config file {}", path.display())));
        }
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| {
            Error::Config(vec![ConfigIssue {
                field: path.display().to_string(),
                message: e.to_string().replace('\n', " "),
            }])
        })
    }

    /// Checks every invariant and reports all violations together.
    pub fn validate(&self) -> Result<()> {
        let mut issues: Vec<ConfigIssue> = Vec::new();
        let mut bad = |field: &str, message: String| {
            issues.push(ConfigIssue { field: field.into(), message });
        };

        if self.synth_classes < 2 {
            bad("synth_classes", format!("{} must be >= 2", self.synth_classes));
        }
        if self.synth_dim < 2 {
            bad("synth_dim", format!("{} must be >= 2", self.synth_dim));
        }
        if self.synth_n_per_class < 1 {
            bad("synth_n_per_class", "must be >= 1".into());
        }
        if !self.synth_rotation_deg.is_finite() {
            bad("synth_rotation_deg", format!("{} must be finite", self.synth_rotation_deg));
        }
        if !(self.synth_noise.is_finite() && self.synth_noise >= 0.0) {
            bad("synth_noise", format!("{} must be finite and >= 0", self.synth_noise));
        }
        if let Some(&d) = self.hidden_dims.iter().find(|&&d| d == 0) {
            bad("hidden_dims", format!("layer width {d} must be >= 1"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            bad("lambda", format!("{} must be finite and >= 0", self.lambda));
        }
        if self.batch_size < 1 {
            bad("batch_size", "must be >= 1".into());
        }
        for (field, lr) in [("lr_uda", self.lr_uda), ("lr_finetune", self.lr_finetune)] {
            if !(lr.is_finite() && lr > 0.0) {
                bad(field, format!("{lr} must be finite and > 0"));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            bad("weight_decay", format!("{} must be finite and >= 0", self.weight_decay));
        }
        for (field, schedule) in [
            ("uda_schedule", &self.uda_schedule),
            ("finetune_schedule", &self.finetune_schedule),
        ] {
            if schedule.windows(2).any(|w| w[1].epoch <= w[0].epoch) {
                bad(field, "decay epochs must be strictly increasing".into());
            }
            if let Some(s) = schedule.iter().find(|s| !(s.factor.is_finite() && s.factor > 0.0)) {
                bad(field, format!("decay factor {} must be finite and > 0", s.factor));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            bad("momentum", format!("{} must be in [0, 1)", self.momentum));
        }
        if let Err(e) = PerturbConfig::profile(&self.perturb_profile) {
            bad("perturb_profile", e.to_string());
        }
        if self.consistency_copies < 1 {
            bad("consistency_copies", "must be >= 1".into());
        }
        if !(self.budget_fraction.is_finite()
            && self.budget_fraction > 0.0
            && self.budget_fraction <= 1.0)
        {
            bad("budget_fraction", format!("{} must lie in (0, 1]", self.budget_fraction));
        }
        if self.n_repeats < 1 {
            bad("n_repeats", "must be >= 1".into());
        }
        if self.workers < 1 {
            bad("workers", "must be >= 1".into());
        }

        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }

    /// The perturbation profile as a config (validated names only).
    pub fn perturbation(&self) -> Result<PerturbConfig> {
        PerturbConfig::profile(&self.perturb_profile)
    }

    /// Budget size for a target training set of `m` samples:
    /// `⌊fraction · m⌋`, at least 1.
    pub fn budget_k(&self, m: usize) -> usize {
        ((self.budget_fraction * m as f64).floor() as usize).max(1)
    }
}
