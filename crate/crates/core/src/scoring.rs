//! Difficulty scoring over target samples.
//!
//! Two scorers are provided: prediction entropy (bounded by `ln C`) and
//! perturbation consistency (mean KL divergence between the prediction on
//! the pristine sample and predictions on `P` randomly perturbed copies).
//! Both run the model in eval mode only — scores depend on running
//! statistics, never on batch composition — and both are deterministic:
//! entropy needs no randomness at all, and consistency draws every
//! perturbation from a per-sample-id stream, so scores are independent of
//! scoring order and chunking.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{row_entropy, row_kl};
use crate::network::{model_fingerprint, DomainTag, Model};
use crate::perturb::{perturb_features, sample_rng, PerturbConfig};

/// Rows per eval-mode forward. Eval batch norm is row-independent, so the
/// chunk size never changes a score; it only bounds memory.
const EVAL_CHUNK: usize = 256;

/// Which difficulty score a table holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Entropy,
    Consistency,
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScorerKind::Entropy => "entropy",
            ScorerKind::Consistency => "consistency",
        })
    }
}

impl FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entropy" => Ok(ScorerKind::Entropy),
            "consistency" => Ok(ScorerKind::Consistency),
            other => Err(Error::Contract(format!(
                "unknown scorer '{other}' (expected entropy or consistency)"
            ))),
        }
    }
}

/// One difficulty score per sample, in canonical (ascending sample id)
/// order, tagged with the checkpoint that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    entries: Vec<(u64, f64)>,
    pub scorer: ScorerKind,
    pub model_fingerprint: String,
    /// Base seed of the perturbation streams; `None` for scorers that draw
    /// no randomness.
    pub seed: Option<u64>,
}

impl ScoreTable {
    /// Builds a table from arbitrary-order pairs: sorts by id, then checks
    /// uniqueness and that every score is finite and non-negative.
    pub fn from_pairs(
        mut pairs: Vec<(u64, f64)>,
        scorer: ScorerKind,
        model_fingerprint: String,
        seed: Option<u64>,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Contract("a score table must hold at least one entry".into()));
        }
        pairs.sort_by_key(|&(id, _)| id);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Contract("score table sample ids must be unique".into()));
        }
        if let Some(&(id, s)) = pairs.iter().find(|&&(_, s)| !s.is_finite()) {
            return Err(Error::Data(format!("score {s} for sample {id} is not finite")));
        }
        if let Some(&(id, s)) = pairs.iter().find(|&&(_, s)| s < 0.0) {
            return Err(Error::Data(format!("score {s} for sample {id} is negative")));
        }
        Ok(Self { entries: pairs, scorer, model_fingerprint, seed })
    }

    /// `(sample_id, score)` pairs in ascending id order.
    pub fn entries(&self) -> &[(u64, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn score_of(&self, id: u64) -> Option<f64> {
        self.entries
            .binary_search_by_key(&id, |&(i, _)| i)
            .ok()
            .map(|idx| self.entries[idx].1)
    }

    /// Hash of the canonical text form; selections record it so a selection
    /// can be traced to the exact table it was drawn from.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.csv_body().as_bytes());
        hasher.update(self.scorer.to_string().as_bytes());
        hasher.update(self.model_fingerprint.as_bytes());
        format!("{:x}", hasher.finalize())
    }

    fn csv_body(&self) -> String {
        let mut s = String::from("sample_id,score\n");
        for (id, score) in &self.entries {
            s.push_str(&format!("{id},{score}\n"));
        }
        s
    }

    /// Writes `sample_id,score` rows plus a `.meta.json` sidecar holding the
    /// scorer kind, seed, and checkpoint hash. Floats use the shortest
    /// round-trip form, so reading back is value-exact.
    pub fn write_csv(&self, csv_path: &Path) -> Result<()> {
        let mut f = fs::File::create(csv_path)?;
        f.write_all(self.csv_body().as_bytes())?;
        let meta = SideCar {
            scorer: self.scorer,
            seed: self.seed,
            model_fingerprint: self.model_fingerprint.clone(),
        };
        fs::write(sidecar_path(csv_path), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }

    pub fn read_csv(csv_path: &Path) -> Result<Self> {
        let meta_path = sidecar_path(csv_path);
        if !csv_path.exists() {
            return Err(Error::MissingInput(format!("score table {}", csv_path.display())));
        }
        if !meta_path.exists() {
            return Err(Error::MissingInput(format!("score table sidecar {}", meta_path.display())));
        }
        let meta: SideCar = serde_json::from_str(&fs::read_to_string(&meta_path)?)?;
        let reader = BufReader::new(fs::File::open(csv_path)?);
        let mut lines = reader.lines().enumerate();
        match lines.next() {
            Some((_, Ok(h))) if h == "sample_id,score" => {}
            _ => {
                return Err(Error::Format {
                    offset: 0,
                    message: format!("{}: expected header 'sample_id,score'", csv_path.display()),
                })
            }
        }
        let mut pairs = Vec::new();
        let mut offset = "sample_id,score\n".len() as u64;
        for (lineno, line) in lines {
            let line = line?;
            let parse = |s: &str, what: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| Error::Format {
                    offset,
                    message: format!("{}: line {}: bad {what} '{s}'", csv_path.display(), lineno + 1),
                })
            };
            let mut cols = line.split(',');
            let id = cols
                .next()
                .and_then(|s| s.parse::<u64>().ok())
                .ok_or_else(|| Error::Format {
                    offset,
                    message: format!("{}: line {}: bad sample_id", csv_path.display(), lineno + 1),
                })?;
            let score = parse(
                cols.next().ok_or_else(|| Error::Format {
                    offset,
                    message: format!("{}: line {}: missing score", csv_path.display(), lineno + 1),
                })?,
                "score",
            )?;
            if cols.next().is_some() {
                return Err(Error::Format {
                    offset,
                    message: format!("{}: line {}: too many columns", csv_path.display(), lineno + 1),
                });
            }
            pairs.push((id, score));
            offset += line.len() as u64 + 1;
        }
        Self::from_pairs(pairs, meta.scorer, meta.model_fingerprint, meta.seed)
    }
}

#[derive(Serialize, Deserialize)]
struct SideCar {
    scorer: ScorerKind,
    seed: Option<u64>,
    model_fingerprint: String,
}

fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

/// Numerically stable softmax of one logit row (max subtraction before
/// exponentiation keeps magnitude-1e3 logits finite).
pub fn stable_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Entropy of one probability row, clamped into `[0, ln C]` so downstream
/// score invariants hold even at the numeric edges.
pub fn entropy_from_probs(row: &[f64], class_count: usize) -> f64 {
    row_entropy(row).clamp(0.0, (class_count as f64).ln())
}

fn check_model_dataset(model: &Model, data: &Dataset) -> Result<()> {
    data.validate()?;
    if data.class_count != model.class_count {
        return Err(Error::Contract(format!(
            "dataset has {} classes but the model predicts {}",
            data.class_count, model.class_count
        )));
    }
    if data.shape.len() != model.input_dim {
        return Err(Error::Contract(format!(
            "dataset feature length {} does not match model input_dim {}",
            data.shape.len(),
            model.input_dim
        )));
    }
    Ok(())
}

/// Prediction-entropy difficulty of every sample, eval mode on the target
/// branch. Labels, if present, are ignored.
pub fn entropy_score(model: &Model, data: &Dataset) -> Result<ScoreTable> {
    check_model_dataset(model, data)?;
    let fp = model_fingerprint(model)?;
    let mut pairs = Vec::with_capacity(data.len());
    for chunk_start in (0..data.len()).step_by(EVAL_CHUNK) {
        let chunk_end = (chunk_start + EVAL_CHUNK).min(data.len());
        let x = Tensor::from_rows(&data.features[chunk_start..chunk_end])?;
        let probs = model.predict(&x, DomainTag::Target)?;
        let c = model.class_count;
        for (i, idx) in (chunk_start..chunk_end).enumerate() {
            let score = entropy_from_probs(&probs.data()[i * c..(i + 1) * c], c);
            pairs.push((data.ids[idx], score));
        }
    }
    ScoreTable::from_pairs(pairs, ScorerKind::Entropy, fp, None)
}

/// Perturbation-consistency difficulty: the mean KL divergence between the
/// prediction on the pristine sample (target branch) and the predictions on
/// `copies` perturbed copies (perturbed-target branch). Each sample's
/// perturbations come from its own id-keyed stream, the copies drawing from
/// it in sequence.
pub fn consistency_score(
    model: &Model,
    data: &Dataset,
    cfg: &PerturbConfig,
    copies: usize,
    seed: u64,
) -> Result<ScoreTable> {
    if copies < 1 {
        return Err(Error::Contract(format!("consistency copies {copies} must be >= 1")));
    }
    check_model_dataset(model, data)?;
    cfg.validate()?;
    let fp = model_fingerprint(model)?;
    let mut pairs = Vec::with_capacity(data.len());
    for chunk_start in (0..data.len()).step_by(EVAL_CHUNK) {
        let chunk_end = (chunk_start + EVAL_CHUNK).min(data.len());
        let rows = &data.features[chunk_start..chunk_end];
        let pristine = model.predict(&Tensor::from_rows(rows)?, DomainTag::Target)?;

        // All copies of every sample up front, each sample consuming its own
        // stream in copy order.
        let mut per_copy: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(rows.len()); copies];
        for (i, idx) in (chunk_start..chunk_end).enumerate() {
            let mut rng = sample_rng(seed, data.ids[idx]);
            for copy in per_copy.iter_mut() {
                copy.push(perturb_features(&rows[i], &data.shape, cfg, &mut rng)?);
            }
            debug_assert_eq!(i + 1, per_copy[0].len());
        }

        let c = model.class_count;
        let mut kl_sums = vec![0.0; rows.len()];
        for copy in &per_copy {
            let perturbed = model.predict(&Tensor::from_rows(copy)?, DomainTag::TargetPerturbed)?;
            for (i, sum) in kl_sums.iter_mut().enumerate() {
                *sum += row_kl(
                    &pristine.data()[i * c..(i + 1) * c],
                    &perturbed.data()[i * c..(i + 1) * c],
                );
            }
        }
        for (i, idx) in (chunk_start..chunk_end).enumerate() {
            // KL is non-negative up to clamp-induced epsilons; pin it there.
            let score = (kl_sums[i] / copies as f64).max(0.0);
            pairs.push((data.ids[idx], score));
        }
    }
    ScoreTable::from_pairs(pairs, ScorerKind::Consistency, fp, Some(seed))
}

/// Scores every sample of `data` with the requested scorer.
pub fn score_dataset(
    model: &Model,
    data: &Dataset,
    scorer: ScorerKind,
    cfg: &PerturbConfig,
    copies: usize,
    seed: u64,
) -> Result<ScoreTable> {
    match scorer {
        ScorerKind::Entropy => entropy_score(model, data),
        ScorerKind::Consistency => consistency_score(model, data, cfg, copies, seed),
    }
}
