//! Datasets, batching, the synthetic benchmark generator, binary image
//! loading, and the label-annotation oracle.

mod idx;
mod synth;
mod textio;

pub use idx::{load_idx_dataset, load_idx_images, load_idx_labels};
pub use synth::{gen_two_domain_gaussians, DomainShift};
pub use textio::{read_dataset, read_oracle, write_dataset, write_oracle};

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Logical layout of one sample's feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureShape {
    Vector { dim: usize },
    Grid { h: usize, w: usize, ch: usize },
}

impl FeatureShape {
    pub fn len(&self) -> usize {
        match *self {
            FeatureShape::Vector { dim } => dim,
            FeatureShape::Grid { h, w, ch } => h * w * ch,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Which split of which domain a dataset plays in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainRole {
    Source,
    TargetTrain,
    TargetTest,
}

/// A dataset: unique ascending sample ids, one flat feature vector per
/// sample, and (optionally) one label per sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub ids: Vec<u64>,
    pub features: Vec<Vec<f64>>,
    pub labels: Option<Vec<usize>>,
    pub shape: FeatureShape,
    pub class_count: usize,
    pub role: DomainRole,
}

impl Dataset {
    /// Validates the container invariants: non-empty, ids strictly
    /// ascending, feature lengths matching the shape, finite features, and
    /// labels (when present) aligned and within the class range.
    pub fn validate(&self) -> Result<()> {
        if self.ids.is_empty() {
            return Err(Error::Contract("dataset must hold at least one sample".into()));
        }
        if self.ids.len() != self.features.len() {
            return Err(Error::Contract(format!(
                "id count {} does not match feature count {}",
                self.ids.len(),
                self.features.len()
            )));
        }
        if self.ids.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Contract("sample ids must be unique and ascending".into()));
        }
        if self.class_count < 2 {
            return Err(Error::Contract(format!(
                "class_count {} must be >= 2",
                self.class_count
            )));
        }
        let flen = self.shape.len();
        for (i, f) in self.features.iter().enumerate() {
            if f.len() != flen {
                return Err(Error::Contract(format!(
                    "sample {i} has {} features, shape implies {flen}",
                    f.len()
                )));
            }
            if let Some(&bad) = f.iter().find(|x| !x.is_finite()) {
                return Err(Error::Data(format!(
                    "non-finite feature {bad} in sample id {}",
                    self.ids[i]
                )));
            }
        }
        if let Some(ls) = &self.labels {
            if ls.len() != self.ids.len() {
                return Err(Error::Contract(format!(
                    "label count {} does not match sample count {}",
                    ls.len(),
                    self.ids.len()
                )));
            }
            if let Some(&bad) = ls.iter().find(|&&l| l >= self.class_count) {
                return Err(Error::Contract(format!(
                    "label {bad} out of range for {} classes",
                    self.class_count
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    /// Position of `id` in this dataset, if present.
    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }
}

/// Simulated annotator: a hidden id-to-label map. Every query is logged and
/// costs one budget unit — asking for the same id twice costs two.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelOracle {
    labels: BTreeMap<u64, usize>,
    class_count: usize,
    #[serde(default)]
    query_log: Vec<u64>,
}

impl LabelOracle {
    pub fn new(labels: BTreeMap<u64, usize>, class_count: usize) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::Contract(format!("class_count {class_count} must be >= 2")));
        }
        if let Some((&id, &bad)) = labels.iter().find(|(_, &l)| l >= class_count) {
            return Err(Error::Contract(format!(
                "oracle label {bad} for id {id} out of range for {class_count} classes"
            )));
        }
        Ok(Self { labels, class_count, query_log: Vec::new() })
    }

    /// Returns the hidden label for `id`, logging the query. Unknown ids
    /// are a data error (the query is still logged — the budget is spent).
    pub fn query(&mut self, id: u64) -> Result<usize> {
        self.query_log.push(id);
        self.labels
            .get(&id)
            .copied()
            .ok_or_else(|| Error::Data(format!("oracle holds no label for id {id}")))
    }

    /// Total budget consumed so far (one unit per query, duplicates count).
    pub fn query_count(&self) -> usize {
        self.query_log.len()
    }

    pub fn query_log(&self) -> &[u64] {
        &self.query_log
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Ids the oracle can label (not secret; the *labels* are).
    pub fn known_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.labels.keys().copied()
    }
}

/// Splits `0..n` into shuffled batches for one epoch. The shuffle is a
/// pure function of `(seed, epoch)`; the final short batch is kept.
pub fn make_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::Contract("cannot batch an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Contract("batch_size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut idx: Vec<usize> = (0..n).collect();
    // Fisher-Yates, written out so the draw sequence is pinned.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Builds the labeled fine-tuning pool: queries the oracle once per
/// selected id and returns those samples, labeled, in ascending-id order.
pub fn query_labels(
    oracle: &mut LabelOracle,
    target_train: &Dataset,
    selected_ids: &[u64],
) -> Result<Dataset> {
    if selected_ids.is_empty() {
        return Err(Error::Contract("selection must contain at least one id".into()));
    }
    let mut rows: Vec<(u64, Vec<f64>, usize)> = Vec::with_capacity(selected_ids.len());
    for &id in selected_ids {
        let pos = target_train.index_of(id).ok_or_else(|| {
            Error::Data(format!("selected id {id} is not in the target training set"))
        })?;
        let label = oracle.query(id)?;
        rows.push((id, target_train.features[pos].clone(), label));
    }
    rows.sort_by_key(|r| r.0);
    let ds = Dataset {
        ids: rows.iter().map(|r| r.0).collect(),
        features: rows.iter().map(|r| r.1.clone()).collect(),
        labels: Some(rows.iter().map(|r| r.2).collect()),
        shape: target_train.shape,
        class_count: target_train.class_count,
        role: DomainRole::TargetTrain,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset() -> Dataset {
        Dataset {
            ids: vec![10, 11, 12],
            features: vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0]],
            labels: None,
            shape: FeatureShape::Vector { dim: 2 },
            class_count: 2,
            role: DomainRole::TargetTrain,
        }
    }

    #[test]
    fn dataset_validation_catches_each_contract() {
        let ok = tiny_dataset();
        assert!(ok.validate().is_ok());

        let mut dup = tiny_dataset();
        dup.ids = vec![10, 10, 12];
        assert!(dup.validate().is_err(), "duplicate ids rejected");

        let mut ragged = tiny_dataset();
        ragged.features[1] = vec![1.0];
        assert!(ragged.validate().is_err(), "shape mismatch rejected");

        let mut bad_label = tiny_dataset();
        bad_label.labels = Some(vec![0, 1, 2]);
        assert!(bad_label.validate().is_err(), "label out of class range rejected");
    }

    #[test]
    fn make_batches_is_deterministic_and_partitions_everything() {
        let a = make_batches(10, 3, 7, 0).unwrap();
        let b = make_batches(10, 3, 7, 0).unwrap();
        assert_eq!(a, b, "same (seed, epoch) must give the same batches");
        let c = make_batches(10, 3, 7, 1).unwrap();
        assert_ne!(a, c, "different epochs must reshuffle");
        let sizes: Vec<usize> = a.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 3, 1], "final short batch is kept");
        let mut all: Vec<usize> = a.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>(), "batches partition the index set");
    }

    #[test]
    fn oracle_counts_every_query_including_duplicates() {
        let mut map = BTreeMap::new();
        map.insert(10u64, 0usize);
        map.insert(11u64, 1usize);
        let mut oracle = LabelOracle::new(map, 2).unwrap();
        assert_eq!(oracle.query(10).unwrap(), 0);
        assert_eq!(oracle.query(10).unwrap(), 0);
        assert_eq!(oracle.query(11).unwrap(), 1);
        assert_eq!(oracle.query_count(), 3, "duplicate queries cost duplicate budget");
        assert_eq!(oracle.query_log(), &[10, 10, 11]);
        assert!(oracle.query(99).is_err(), "unknown id is a data error");
        assert_eq!(oracle.query_count(), 4, "failed queries still spend budget");
    }

    #[test]
    fn query_labels_builds_a_labeled_pool_in_id_order() {
        let ds = tiny_dataset();
        let mut map = BTreeMap::new();
        for (i, &id) in ds.ids.iter().enumerate() {
            map.insert(id, i % 2);
        }
        let mut oracle = LabelOracle::new(map, 2).unwrap();
        let pool = query_labels(&mut oracle, &ds, &[12, 10]).unwrap();
        assert_eq!(pool.ids, vec![10, 12], "pool is ascending by id");
        assert_eq!(pool.labels.as_deref(), Some(&[0, 0][..]));
        assert_eq!(oracle.query_count(), 2);
        assert!(
            query_labels(&mut oracle, &ds, &[999]).is_err(),
            "ids outside the target training set are a data error"
        );
    }
}
