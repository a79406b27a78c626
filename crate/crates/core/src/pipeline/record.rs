//! Run provenance: seed derivation and the serializable records each phase
//! leaves behind. Records hold values a rerun must reproduce exactly —
//! wall-clock timings live in their own artifact and never enter these
//! structures.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;

/// Derives a phase seed from the root seed and a stable label: the first
/// eight bytes (little-endian) of `SHA-256(root_le_bytes ‖ label)`. Distinct
/// labels give statistically independent streams while staying reproducible
/// from the root alone.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Mean per-step losses of one training epoch. Components that a mode does
/// not train are recorded as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    /// Supervised cross-entropy on the labeled batch.
    pub l_s: f64,
    /// Prediction-entropy component on the unlabeled batch.
    pub l_e: f64,
    /// Consistency (perturbation KL) component on the unlabeled batch.
    pub l_c: f64,
    /// Combined unsupervised loss (entropy + consistency).
    pub l_u: f64,
    /// The optimized objective: `l_s + lambda * l_u`.
    pub total: f64,
}

/// What one training phase did: its per-epoch loss trace, the optional
/// per-epoch held-out accuracy trace, and the number of optimizer steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    /// Phase name: `"uda"` or `"finetune"`.
    pub phase: String,
    pub epochs: Vec<EpochLosses>,
    /// Held-out accuracy after each epoch (empty when no eval set was given).
    pub per_epoch_eval: Vec<f64>,
    /// Total optimizer steps taken across all epochs.
    pub steps: usize,
}

/// The complete provenance of one end-to-end run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub phases: Vec<PhaseRecord>,
    /// Named accuracies (e.g. `"uda_target_test"`).
    pub accuracies: BTreeMap<String, f64>,
    /// Logical artifact name -> file name inside the output directory.
    pub artifacts: BTreeMap<String, String>,
    /// Checkpoint name -> content fingerprint.
    pub checkpoint_hashes: BTreeMap<String, String>,
    /// Every derived seed, in the order the run consumed them (`"label=seed"`).
    pub seed_lineage: Vec<String>,
    /// Labels the oracle handed out during selection.
    pub oracle_queries: usize,
    /// File holding wall-clock timings; kept outside this record so reruns
    /// compare byte-for-byte.
    pub timings_ref: String,
}

/// One comparison-matrix cell: an adaptation mode crossed with a
/// (sampler, scorer) pair, fine-tuned `repeats` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub mode: String,
    pub sampler: String,
    pub scorer: String,
    /// Accuracy of the shared adapted model this cell fine-tunes from.
    pub uda_accuracy: f64,
    /// Fine-tuned test accuracy of each repeat.
    pub finetuned: Vec<f64>,
    pub finetuned_mean: f64,
    /// Sample standard deviation (n-1); `None` for single-run cells.
    pub finetuned_std: Option<f64>,
}

/// The full comparison matrix plus the config that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub config: RunConfig,
    pub cells: Vec<MatrixCell>,
}

/// Mean and sample standard deviation (n-1 denominator); the deviation is
/// `None` when fewer than two values exist.
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, Some(var.sqrt()))
}
