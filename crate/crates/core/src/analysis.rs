//! Diagnostic artifacts relating prediction confidence to correctness:
//! prefix-accuracy curves over entropy-sorted samples, score histograms of
//! selected budgets, and low/high-confidence region comparisons across
//! models. Everything is emitted as machine-readable plot data; rendering
//! is out of scope.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::budget::BudgetSelection;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{model_fingerprint, DomainTag, Model};
use crate::scoring::{entropy_from_probs, ScoreTable};

/// Index of the row maximum; exact ties resolve to the lower class index.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// One point of the curve: after taking the `prefix_size` lowest-entropy
/// samples, the accuracy over exactly that prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub prefix_size: usize,
    pub entropy: f64,
    pub accuracy: f64,
}

/// Prefix accuracy over samples sorted by ascending prediction entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyAccuracyCurve {
    pub points: Vec<CurvePoint>,
    pub model_fingerprint: String,
}

/// Builds the curve from raw predictions: sort by entropy ascending (ties
/// by lower id), then accumulate prefix accuracies; one point per sample.
pub fn curve_from_predictions(
    ids: &[u64],
    probs: &Tensor,
    labels: &[usize],
    model_fingerprint: String,
) -> Result<EntropyAccuracyCurve> {
    let (n, c) = probs.dims2()?;
    if n == 0 {
        return Err(Error::Contract("cannot build a curve from zero samples".into()));
    }
    if ids.len() != n || labels.len() != n {
        return Err(Error::Contract(format!(
            "ids ({}), probability rows ({n}), and labels ({}) must align",
            ids.len(),
            labels.len()
        )));
    }
    let mut rows: Vec<(f64, u64, bool)> = probs
        .data()
        .chunks(c)
        .enumerate()
        .map(|(i, row)| {
            let ent = entropy_from_probs(row, c);
            (ent, ids[i], argmax_row(row) == labels[i])
        })
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let mut correct = 0usize;
    let points = rows
        .iter()
        .enumerate()
        .map(|(i, &(ent, _, ok))| {
            if ok {
                correct += 1;
            }
            CurvePoint {
                prefix_size: i + 1,
                entropy: ent,
                accuracy: correct as f64 / (i + 1) as f64,
            }
        })
        .collect();
    Ok(EntropyAccuracyCurve { points, model_fingerprint })
}

/// Evaluates `model` on a labeled dataset (eval mode, target branch) and
/// builds the entropy-ordered prefix-accuracy curve.
pub fn entropy_accuracy_curve(model: &Model, data: &Dataset) -> Result<EntropyAccuracyCurve> {
    data.validate()?;
    let labels = data
        .labels
        .as_deref()
        .ok_or_else(|| Error::Contract("the entropy-accuracy curve needs labels".into()))?;
    let probs = model.predict(&Tensor::from_rows(&data.features)?, DomainTag::Target)?;
    curve_from_predictions(&data.ids, &probs, labels, model_fingerprint(model)?)
}

impl EntropyAccuracyCurve {
    /// Writes `prefix_size,entropy,accuracy` rows, floats value-exact.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(b"prefix_size,entropy,accuracy\n")?;
        for p in &self.points {
            writeln!(f, "{},{},{}", p.prefix_size, p.entropy, p.accuracy)?;
        }
        Ok(())
    }
}

/// Equal-width histogram of the selected samples' scores over the full
/// table's score range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges; the first is the table minimum, the last the table
    /// maximum.
    pub edges: Vec<f64>,
    /// One count per bin; counts sum to the selection size k.
    pub counts: Vec<usize>,
}

/// Buckets the selected samples' scores into `bins` equal-width bins across
/// the FULL table's `[s_min, s_max]`, so histograms of different selections
/// from the same table share edges.
pub fn selection_histogram(
    table: &ScoreTable,
    selection: &BudgetSelection,
    bins: usize,
) -> Result<Histogram> {
    if bins < 1 {
        return Err(Error::Contract(format!("bins = {bins} must be >= 1")));
    }
    let all = table.entries();
    let lo = all.iter().map(|&(_, s)| s).fold(f64::INFINITY, f64::min);
    let hi = all.iter().map(|&(_, s)| s).fold(f64::NEG_INFINITY, f64::max);
    let mut edges: Vec<f64> = (0..=bins)
        .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
        .collect();
    edges[0] = lo;
    edges[bins] = hi;
    let mut counts = vec![0usize; bins];
    for id in &selection.ids {
        let s = table.score_of(*id).ok_or_else(|| {
            Error::Contract(format!("selected sample {id} is not in the score table"))
        })?;
        let b = if hi == lo {
            0
        } else {
            (((s - lo) / (hi - lo) * bins as f64).floor() as usize).min(bins - 1)
        };
        counts[b] += 1;
    }
    Ok(Histogram { edges, counts })
}

impl Histogram {
    /// Writes `bin_lo,bin_hi,count` rows, one per bin.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(b"bin_lo,bin_hi,count\n")?;
        for (i, &c) in self.counts.iter().enumerate() {
            writeln!(f, "{},{},{c}", self.edges[i], self.edges[i + 1])?;
        }
        Ok(())
    }
}

/// One model's row of the region report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRow {
    pub label: String,
    /// Prefix size at the low-entropy cut and the accuracy there.
    pub low_cut: usize,
    pub low_accuracy: f64,
    /// Peak-to-cut accuracy drop inside the low-entropy region `[1, low_cut]`.
    pub low_drop: f64,
    /// Prefix size at the high-entropy cut.
    pub high_cut: usize,
    /// Peak-to-end accuracy drop across the high-entropy region `[high_cut, m]`.
    pub high_drop: f64,
    /// Accuracy over the full set (the final curve point).
    pub final_accuracy: f64,
}

/// Compares confidence regions across models evaluated on the same dataset:
/// for each curve, the prefix accuracy at the low-quantile cut (and how far
/// it fell from the region's best point) plus the accuracy drop across the
/// high-quantile region.
pub fn compare_regions(
    curves: &[(String, &EntropyAccuracyCurve)],
    low_quantile: f64,
    high_quantile: f64,
) -> Result<Vec<RegionRow>> {
    if curves.is_empty() {
        return Err(Error::Contract("compare_regions needs at least one curve".into()));
    }
    if !(0.0 < low_quantile && low_quantile <= high_quantile && high_quantile <= 1.0) {
        return Err(Error::Contract(format!(
            "quantiles ({low_quantile}, {high_quantile}) must satisfy 0 < low <= high <= 1"
        )));
    }
    let m = curves[0].1.points.len();
    if curves.iter().any(|(_, c)| c.points.len() != m) {
        return Err(Error::Contract(
            "curves cover different sample counts; they must come from the same dataset".into(),
        ));
    }
    let cut = |q: f64| ((q * m as f64).floor() as usize).clamp(1, m);
    let (low_cut, high_cut) = (cut(low_quantile), cut(high_quantile));
    Ok(curves
        .iter()
        .map(|(label, curve)| {
            let a = |i: usize| curve.points[i - 1].accuracy;
            let peak_low = (1..=low_cut).map(a).fold(f64::NEG_INFINITY, f64::max);
            let peak_high = (high_cut..=m).map(a).fold(f64::NEG_INFINITY, f64::max);
            RegionRow {
                label: label.clone(),
                low_cut,
                low_accuracy: a(low_cut),
                low_drop: peak_low - a(low_cut),
                high_cut,
                high_drop: peak_high - a(m),
                final_accuracy: a(m),
            }
        })
        .collect())
}

/// Writes the region report as delimited text, one row per model.
pub fn write_regions_csv(rows: &[RegionRow], path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(b"label,low_cut,low_accuracy,low_drop,high_cut,high_drop,final_accuracy\n")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            r.label, r.low_cut, r.low_accuracy, r.low_drop, r.high_cut, r.high_drop, r.final_accuracy
        )?;
    }
    Ok(())
}
