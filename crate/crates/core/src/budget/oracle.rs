//! A second, deliberately naive implementation of the uniform-over-score
//! selection, used as a differential-test oracle. It shares no helper code
//! with [`super::select_uniform`]: bins, per-bin bests, and extraction are
//! all done with plain linear scans. Only the declared semantics coincide —
//! the same bin formula (evaluated in the same order, so the floating-point
//! results agree bitwise), the same clamping rule, the same pass structure,
//! and the same lower-id tie-break.

use crate::budget::{BudgetSelection, Strategy};
use crate::error::{Error, Result};
use crate::scoring::ScoreTable;

/// Naive-scan transcription of the uniform selection. Identical contract to
/// `select_uniform`, independent implementation.
pub fn reference_uniform_oracle(
    table: &ScoreTable,
    k: usize,
    literal_bins: bool,
) -> Result<BudgetSelection> {
    let entries = table.entries();
    let m = entries.len();
    if k < 1 || k > m {
        return Err(Error::Contract(format!("k = {k} must satisfy 1 <= k <= m = {m}")));
    }
    if let Some(&(id, s)) = entries.iter().find(|&&(_, s)| s.is_nan()) {
        return Err(Error::Data(format!("score for sample {id} is NaN ({s})")));
    }

    let mut smin = f64::INFINITY;
    let mut smax = f64::NEG_INFINITY;
    for &(_, s) in entries {
        if s < smin {
            smin = s;
        }
        if s > smax {
            smax = s;
        }
    }

    let mut bins = Vec::with_capacity(m);
    for &(_, s) in entries {
        let b = if smax == smin {
            1
        } else {
            let raw = ((s - smin) / (smax - smin) * k as f64).floor() as usize + 1;
            if literal_bins {
                raw
            } else if raw > k {
                k
            } else {
                raw
            }
        };
        bins.push(b);
    }

    let mut selected = vec![false; m];
    let mut picked: Vec<usize> = Vec::new();
    while picked.len() < k {
        // One pass: each visited bin j in [1, k] posts its best unselected
        // sample (highest score; ties to the lower id).
        let mut posted: Vec<usize> = Vec::new();
        for j in 1..=k {
            let mut best: Option<usize> = None;
            for idx in 0..m {
                if selected[idx] || bins[idx] != j {
                    continue;
                }
                best = match best {
                    None => Some(idx),
                    Some(cur) => {
                        let better = entries[idx].1 > entries[cur].1
                            || (entries[idx].1 == entries[cur].1
                                && entries[idx].0 < entries[cur].0);
                        if better {
                            Some(idx)
                        } else {
                            Some(cur)
                        }
                    }
                };
            }
            if let Some(idx) = best {
                posted.push(idx);
            }
        }
        if posted.is_empty() {
            return Err(Error::Contract(format!(
                "selection stalled at {} of k = {k}: literal bin indices leave every \
                 maximum-score sample outside the visited bins",
                picked.len()
            )));
        }
        // Drain the posted list highest-score-first (ties to the lower id)
        // until the budget is full or the list is empty.
        while picked.len() < k && !posted.is_empty() {
            let mut best_pos = 0;
            for pos in 1..posted.len() {
                let (cand, cur) = (entries[posted[pos]], entries[posted[best_pos]]);
                if cand.1 > cur.1 || (cand.1 == cur.1 && cand.0 < cur.0) {
                    best_pos = pos;
                }
            }
            let idx = posted.remove(best_pos);
            selected[idx] = true;
            picked.push(idx);
        }
    }

    Ok(BudgetSelection {
        ids: picked.iter().map(|&i| entries[i].0).collect(),
        scores: picked.iter().map(|&i| entries[i].1).collect(),
        strategy: Strategy::Uniform,
        scorer: table.scorer,
        k,
        seed: None,
        table_fingerprint: table.fingerprint(),
    })
}
