//! Budget sample selection: choosing which k target samples to send to the
//! labeling oracle.
//!
//! The headline strategy bins samples by normalized difficulty score into k
//! equal-width bins and then drafts across bins in passes, so the selected
//! set covers the whole confidence spectrum instead of clustering at one
//! end. Baselines: top-k by score, bottom-k by score, and seeded uniform
//! random. All non-random strategies are deterministic pure functions of
//! `(table, k)`; ties are always broken toward the lower sample id.

pub mod oracle;

pub use oracle::reference_uniform_oracle;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, BTreeMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{ScorerKind, ScoreTable};

/// How the budget is drawn from a score table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Uniform,
    Toprank,
    Minrank,
    Random,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Uniform => "uniform",
            Strategy::Toprank => "toprank",
            Strategy::Minrank => "minrank",
            Strategy::Random => "random",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Strategy::Uniform),
            "toprank" => Ok(Strategy::Toprank),
            "minrank" => Ok(Strategy::Minrank),
            "random" => Ok(Strategy::Random),
            other => Err(Error::Contract(format!(
                "unknown sampler '{other}' (expected uniform, toprank, minrank, or random)"
            ))),
        }
    }
}

/// A selected budget: k unique sample ids in selection order, with their
/// scores, traceable to the exact score table they were drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSelection {
    pub ids: Vec<u64>,
    pub scores: Vec<f64>,
    pub strategy: Strategy,
    pub scorer: ScorerKind,
    pub k: usize,
    /// Seed of the draw; `None` for the deterministic strategies.
    pub seed: Option<u64>,
    pub table_fingerprint: String,
}

fn check_args(table: &ScoreTable, k: usize) -> Result<()> {
    let m = table.len();
    if k < 1 || k > m {
        return Err(Error::Contract(format!("k = {k} must satisfy 1 <= k <= m = {m}")));
    }
    if let Some(&(id, s)) = table.entries().iter().find(|&&(_, s)| s.is_nan()) {
        return Err(Error::Data(format!("score for sample {id} is NaN ({s})")));
    }
    Ok(())
}

/// Assigns every entry its 1-based bin index: the score range is split into
/// k equal-width bins, the normalized score floored into one of them. With
/// `literal_bins`, maximum scores land in bin k+1 (outside the visited
/// range); otherwise they are clamped into bin k. A degenerate table (all
/// scores equal) puts everything in bin 1.
fn bin_indices(table: &ScoreTable, k: usize, literal_bins: bool) -> Vec<usize> {
    let scores = table.entries().iter().map(|&(_, s)| s);
    let smin = scores.clone().fold(f64::INFINITY, f64::min);
    let smax = scores.clone().fold(f64::NEG_INFINITY, f64::max);
    table
        .entries()
        .iter()
        .map(|&(_, s)| {
            if smax == smin {
                1
            } else {
                let b = ((s - smin) / (smax - smin) * k as f64).floor() as usize + 1;
                if literal_bins {
                    b
                } else {
                    b.min(k)
                }
            }
        })
        .collect()
}

#[derive(PartialEq)]
struct Cand {
    score: f64,
    id: u64,
    bin: usize,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        // Max-heap priority: higher score first, then lower id.
        self.score.total_cmp(&other.score).then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Uniform-over-confidence selection. Per pass: every bin in `[1, k]` posts
/// its best still-unselected sample (highest score, ties to the lower id)
/// into a fresh max-priority queue, which is then drained highest-first
/// into the budget until it is full or the queue is empty; passes repeat
/// until the budget holds k samples.
pub fn select_uniform(table: &ScoreTable, k: usize, literal_bins: bool) -> Result<BudgetSelection> {
    check_args(table, k)?;
    let bins = bin_indices(table, k, literal_bins);

    // Per-bin candidate lists ordered best-first, with a cursor marking how
    // many have been selected so far. Bins above k are never visited.
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (idx, &b) in bins.iter().enumerate() {
        if b <= k {
            groups.entry(b).or_default().push(idx);
        }
    }
    let entries = table.entries();
    for group in groups.values_mut() {
        group.sort_by(|&a, &b| {
            entries[b].1.total_cmp(&entries[a].1).then_with(|| entries[a].0.cmp(&entries[b].0))
        });
    }
    let mut cursors: BTreeMap<usize, usize> = groups.keys().map(|&b| (b, 0)).collect();

    let mut picked: Vec<usize> = Vec::with_capacity(k);
    while picked.len() < k {
        let mut heap = BinaryHeap::new();
        for (&b, group) in &groups {
            let cur = cursors[&b];
            if cur < group.len() {
                let idx = group[cur];
                heap.push(Cand { score: entries[idx].1, id: entries[idx].0, bin: b });
            }
        }
        if heap.is_empty() {
            return Err(Error::Contract(format!(
                "selection stalled at {} of k = {k}: literal bin indices leave every \
                 maximum-score sample outside the visited bins",
                picked.len()
            )));
        }
        while picked.len() < k {
            match heap.pop() {
                Some(c) => {
                    let cur = cursors.get_mut(&c.bin).expect("cursor exists for posted bin");
                    picked.push(groups[&c.bin][*cur]);
                    *cur += 1;
                }
                None => break,
            }
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

fn select_sorted(table: &ScoreTable, k: usize, strategy: Strategy) -> Result<BudgetSelection> {
    check_args(table, k)?;
    let entries = table.entries();
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| {
        let by_score = match strategy {
            Strategy::Toprank => entries[b].1.total_cmp(&entries[a].1),
            Strategy::Minrank => entries[a].1.total_cmp(&entries[b].1),
            _ => unreachable!("select_sorted only serves the rank strategies"),
        };
        by_score.then_with(|| entries[a].0.cmp(&entries[b].0))
    });
    order.truncate(k);
    Ok(BudgetSelection {
        ids: order.iter().map(|&i| entries[i].0).collect(),
        scores: order.iter().map(|&i| entries[i].1).collect(),
        strategy,
        scorer: table.scorer,
        k,
        seed: None,
        table_fingerprint: table.fingerprint(),
    })
}

/// The k highest-score samples, descending; ties to the lower id.
pub fn select_toprank(table: &ScoreTable, k: usize) -> Result<BudgetSelection> {
    select_sorted(table, k, Strategy::Toprank)
}

/// The k lowest-score samples, ascending; ties to the lower id.
pub fn select_minrank(table: &ScoreTable, k: usize) -> Result<BudgetSelection> {
    select_sorted(table, k, Strategy::Minrank)
}

/// A uniform draw of k ids without replacement, deterministic per seed
/// (partial Fisher-Yates over the ascending id list).
pub fn select_random(table: &ScoreTable, k: usize, seed: u64) -> Result<BudgetSelection> {
    check_args(table, k)?;
    let entries = table.entries();
    let m = entries.len();
    let mut order: Vec<usize> = (0..m).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..k {
        let j = rng.gen_range(i..m);
        order.swap(i, j);
    }
    order.truncate(k);
    Ok(BudgetSelection {
        ids: order.iter().map(|&i| entries[i].0).collect(),
        scores: order.iter().map(|&i| entries[i].1).collect(),
        strategy: Strategy::Random,
        scorer: table.scorer,
        k,
        seed: Some(seed),
        table_fingerprint: table.fingerprint(),
    })
}

/// Dispatches to the configured strategy. `seed` is required by (and only
/// read by) the random strategy; `literal_bins` only affects uniform.
pub fn select(
    table: &ScoreTable,
    strategy: Strategy,
    k: usize,
    seed: Option<u64>,
    literal_bins: bool,
) -> Result<BudgetSelection> {
    match strategy {
        Strategy::Uniform => select_uniform(table, k, literal_bins),
        Strategy::Toprank => select_toprank(table, k),
        Strategy::Minrank => select_minrank(table, k),
        Strategy::Random => {
            let seed = seed.ok_or_else(|| {
                Error::Contract("the random sampler requires a seed".into())
            })?;
            select_random(table, k, seed)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SideCar {
    strategy: Strategy,
    scorer: ScorerKind,
    k: usize,
    seed: Option<u64>,
    table_fingerprint: String,
}

fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

impl BudgetSelection {
    /// Writes `rank,sample_id,score` rows (rank 1 = first selected) plus a
    /// `.meta.json` sidecar; floats round-trip value-exactly.
    pub fn write_csv(&self, csv_path: &Path) -> Result<()> {
        let mut f = fs::File::create(csv_path)?;
        f.write_all(b"rank,sample_id,score\n")?;
        for (rank, (id, score)) in self.ids.iter().zip(&self.scores).enumerate() {
            writeln!(f, "{},{id},{score}", rank + 1)?;
        }
        let meta = SideCar {
            strategy: self.strategy,
            scorer: self.scorer,
            k: self.k,
            seed: self.seed,
            table_fingerprint: self.table_fingerprint.clone(),
        };
        fs::write(sidecar_path(csv_path), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }

    pub fn read_csv(csv_path: &Path) -> Result<Self> {
        let meta_path = sidecar_path(csv_path);
        if !csv_path.exists() {
            return Err(Error::MissingInput(format!("selection {}", csv_path.display())));
        }
        if !meta_path.exists() {
            return Err(Error::MissingInput(format!(
                "selection sidecar {}",
                meta_path.display()
            )));
        }
        let meta: SideCar = serde_json::from_str(&fs::read_to_string(&meta_path)?)?;
        let reader = BufReader::new(fs::File::open(csv_path)?);
        let mut lines = reader.lines().enumerate();
        match lines.next() {
            Some((_, Ok(h))) if h == "rank,sample_id,score" => {}
            _ => {
                return Err(Error::Format {
                    offset: 0,
                    message: format!("{}: expected header 'rank,sample_id,score'", csv_path.display()),
                })
            }
        }
        let mut offset = "rank,sample_id,score\n".len() as u64;
        let mut ids = Vec::new();
        let mut scores = Vec::new();
        for (lineno, line) in lines {
            let line = line?;
            let bad = |what: &str| Error::Format {
                offset,
                message: format!("{}: line {}: bad {what}", csv_path.display(), lineno + 1),
            };
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(bad("column count"));
            }
            let rank: usize = cols[0].parse().map_err(|_| bad("rank"))?;
            if rank != ids.len() + 1 {
                return Err(bad("rank order"));
            }
            ids.push(cols[1].parse::<u64>().map_err(|_| bad("sample_id"))?);
            scores.push(cols[2].parse::<f64>().map_err(|_| bad("score"))?);
            offset += line.len() as u64 + 1;
        }
        if ids.len() != meta.k {
            return Err(Error::Format {
                offset,
                message: format!(
                    "{}: {} rows but sidecar k = {}",
                    csv_path.display(),
                    ids.len(),
                    meta.k
                ),
            });
        }
        Ok(Self {
            ids,
            scores,
            strategy: meta.strategy,
            scorer: meta.scorer,
            k: meta.k,
            seed: meta.seed,
            table_fingerprint: meta.table_fingerprint,
        })
    }
}
