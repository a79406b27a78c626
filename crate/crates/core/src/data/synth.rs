//! Synthetic two-domain Gaussian benchmark.
//!
//! The source domain draws labeled samples from `C` Gaussian clusters whose
//! means sit on a circle in the first two feature dimensions. The target
//! domain draws fresh samples from the same clusters and then applies the
//! configured shift: a rotation of the first two dimensions, a translation,
//! and additional isotropic noise. Target labels are withheld into a
//! [`LabelOracle`]; the target test split keeps its labels so accuracy can
//! be measured.

use crate::data::{Dataset, DomainRole, FeatureShape, LabelOracle};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// The source-to-target transformation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainShift {
    /// Rotation of the first two feature dimensions, in degrees.
    pub rotation_deg: f64,
    /// Per-dimension translation; empty means zero.
    pub translation: Vec<f64>,
    /// Standard deviation of extra isotropic Gaussian noise on the target.
    pub noise_scale: f64,
}

impl DomainShift {
    pub fn none() -> Self {
        Self { rotation_deg: 0.0, translation: Vec::new(), noise_scale: 0.0 }
    }
}

/// Radius of the circle the cluster means sit on.
const MEAN_RADIUS: f64 = 2.0;
/// Standard deviation of each cluster around its mean (both domains).
const CLUSTER_STD: f64 = 0.55;

/// Generates the benchmark: a labeled source set, an unlabeled target
/// training set, a labeled target test set (disjoint 80/20 split of the
/// target by id), and the oracle holding the withheld target-train labels.
///
/// Sample ids are globally unique: source ids come first, then target ids
/// interleaved round-robin over classes so the 80/20 split stays balanced.
/// With a zero shift the two domains are identically distributed.
pub fn gen_two_domain_gaussians(
    classes: usize,
    dim: usize,
    n_per_class: usize,
    shift: &DomainShift,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset, LabelOracle)> {
    if classes < 2 {
        return Err(Error::Contract(format!("classes {classes} must be >= 2")));
    }
    if dim < 2 {
        return Err(Error::Contract(format!(
            "dim {dim} must be >= 2 (the shift rotates the first two dimensions)"
        )));
    }
    if n_per_class == 0 {
        return Err(Error::Contract("n_per_class must be >= 1".into()));
    }
    if !shift.rotation_deg.is_finite() || !shift.noise_scale.is_finite() || shift.noise_scale < 0.0 {
        return Err(Error::Contract("shift parameters must be finite, noise_scale >= 0".into()));
    }
    if !shift.translation.is_empty() && shift.translation.len() != dim {
        return Err(Error::Contract(format!(
            "translation length {} must be 0 or dim {dim}",
            shift.translation.len()
        )));
    }

    let means: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            let angle = std::f64::consts::TAU * c as f64 / classes as f64;
            let mut m = vec![0.0; dim];
            m[0] = MEAN_RADIUS * angle.cos();
            m[1] = MEAN_RADIUS * angle.sin();
            m
        })
        .collect();

    let theta = shift.rotation_deg.to_radians();
    let (cos_t, sin_t) = (theta.cos(), theta.sin());
    let translation = if shift.translation.is_empty() {
        vec![0.0; dim]
    } else {
        shift.translation.clone()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw_cluster = |rng: &mut ChaCha8Rng, class: usize| -> Vec<f64> {
        let mut x = means[class].clone();
        for xi in x.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *xi += CLUSTER_STD * n;
        }
        x
    };

    let n_total = classes * n_per_class;

    // Source: ids 0..n_total, round-robin over classes.
    let mut src_features = Vec::with_capacity(n_total);
    let mut src_labels = Vec::with_capacity(n_total);
    for i in 0..n_total {
        let class = i % classes;
        src_features.push(draw_cluster(&mut rng, class));
        src_labels.push(class);
    }
    let source = Dataset {
        ids: (0..n_total as u64).collect(),
        features: src_features,
        labels: Some(src_labels),
        shape: FeatureShape::Vector { dim },
        class_count: classes,
        role: DomainRole::Source,
    };

    // Target: fresh cluster draws, then rotate/translate/noise.
    let mut tgt_features = Vec::with_capacity(n_total);
    let mut tgt_labels = Vec::with_capacity(n_total);
    for i in 0..n_total {
        let class = i % classes;
        let mut x = draw_cluster(&mut rng, class);
        let (x0, x1) = (x[0], x[1]);
        x[0] = cos_t * x0 - sin_t * x1;
        x[1] = sin_t * x0 + cos_t * x1;
        for (xi, ti) in x.iter_mut().zip(&translation) {
            *xi += ti;
        }
        if shift.noise_scale > 0.0 {
            for xi in x.iter_mut() {
                let n: f64 = rng.sample(StandardNormal);
                *xi += shift.noise_scale * n;
            }
        }
        tgt_features.push(x);
        tgt_labels.push(class);
    }

    // Disjoint 80/20 split by id position; round-robin classes keep it balanced.
    let n_train = (n_total * 4) / 5;
    if n_train == 0 || n_train == n_total {
        return Err(Error::Contract(format!(
            "target set of {n_total} samples cannot be split 80/20"
        )));
    }
    let base = n_total as u64;
    let mut oracle_map = BTreeMap::new();
    let mut train_ids = Vec::with_capacity(n_train);
    let mut train_features = Vec::with_capacity(n_train);
    let mut test_ids = Vec::with_capacity(n_total - n_train);
    let mut test_features = Vec::with_capacity(n_total - n_train);
    let mut test_labels = Vec::with_capacity(n_total - n_train);
    for i in 0..n_total {
        let id = base + i as u64;
        if i < n_train {
            train_ids.push(id);
            train_features.push(tgt_features[i].clone());
            oracle_map.insert(id, tgt_labels[i]);
        } else {
            test_ids.push(id);
            test_features.push(tgt_features[i].clone());
            test_labels.push(tgt_labels[i]);
        }
    }

    let target_train = Dataset {
        ids: train_ids,
        features: train_features,
        labels: None,
        shape: FeatureShape::Vector { dim },
        class_count: classes,
        role: DomainRole::TargetTrain,
    };
    let target_test = Dataset {
        ids: test_ids,
        features: test_features,
        labels: Some(test_labels),
        shape: FeatureShape::Vector { dim },
        class_count: classes,
        role: DomainRole::TargetTest,
    };
    let oracle = LabelOracle::new(oracle_map, classes)?;

    source.validate()?;
    target_train.validate()?;
    target_test.validate()?;
    Ok((source, target_train, target_test, oracle))
}
