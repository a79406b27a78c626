//! Desk-scale toolkit for closing a domain gap on a labeling budget.
//!
//! The pipeline has three phases:
//!
//! 1. **Adapt** — train a classifier on labeled source data plus unlabeled
//!    target data, using domain-separated batch normalization and an
//!    unsupervised objective that couples prediction entropy with
//!    consistency under input perturbations.
//! 2. **Select** — score every unlabeled target sample (prediction entropy
//!    or perturbation consistency) and spend a fixed label budget on a
//!    subset chosen by a budgeted sampler; the reference sampler spreads the
//!    budget uniformly over the score range instead of taking only the most
//!    uncertain samples.
//! 3. **Fine-tune** — query an annotation oracle for the selected ids and
//!    fine-tune the adapted model on the newly labeled pool.
//!
//! Everything is deterministic given a configuration and a root seed: RNG
//! streams are split per phase, and a full pipeline run writes byte-identical
//! artifacts when repeated.

pub mod analysis;
pub mod autodiff;
pub mod budget;
pub mod data;
pub mod error;
pub mod losses;
pub mod network;
pub mod perturb;
pub mod pipeline;
pub mod scoring;

pub use error::{Error, Result};
