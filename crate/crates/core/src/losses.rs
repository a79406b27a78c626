//! Loss functions over predicted class distributions.
//!
//! All losses come in two routes that share formulas, clamping, and
//! summation order: a plain-value route over probability matrices (used for
//! scoring, logging, and tests) and a tape route over [`Var`]s (used for
//! training, differentiable through every argument — the consistency and
//! cross-prediction losses propagate gradients through *both* the pristine
//! and the perturbed branch).
//!
//! Probabilities are clamped from below at [`PROB_FLOOR`] before any
//! logarithm, and `0·log 0` evaluates to `0` because the zero factor
//! multiplies a finite clamped log.
//!
//! The cross-prediction loss decomposes exactly: for any two distributions,
//! `entropy(p) + kl(p, q) == cross(p, q)` term by term, so the three batch
//! losses satisfy the same identity up to floating-point rounding. That
//! identity is asserted live during training.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Probabilities below this floor are clamped before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// A batch of predicted class distributions, one row per sample, with
/// optional integer labels.
#[derive(Debug, Clone)]
pub struct ProbBatch {
    probs: Tensor,
    labels: Option<Vec<usize>>,
}

impl ProbBatch {
    /// Validates that `probs` is rank-2, rows approximately sum to 1
    /// (within 1e-6), entries are non-negative, and labels (when present)
    /// match the row count and class count.
    pub fn new(probs: Tensor, labels: Option<Vec<usize>>) -> Result<Self> {
        validate_probs(&probs)?;
        let (n, c) = probs.dims2()?;
        if let Some(ls) = &labels {
            if ls.len() != n {
                return Err(Error::Contract(format!(
                    "labels length {} does not match batch size {n}",
                    ls.len()
                )));
            }
            if let Some(&bad) = ls.iter().find(|&&l| l >= c) {
                return Err(Error::Contract(format!(
                    "label {bad} out of range for {c} classes"
                )));
            }
        }
        Ok(Self { probs, labels })
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn batch_size(&self) -> usize {
        self.probs.shape()[0]
    }

    pub fn class_count(&self) -> usize {
        self.probs.shape()[1]
    }
}

fn validate_probs(probs: &Tensor) -> Result<()> {
    let (n, c) = probs.dims2()?;
    let d = probs.data();
    for i in 0..n {
        let row = &d[i * c..(i + 1) * c];
        if let Some(&bad) = row.iter().find(|&&p| p < 0.0) {
            return Err(Error::Contract(format!(
                "row {i} holds a negative probability {bad}"
            )));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!(
                "row {i} sums to {s}, expected 1 within 1e-6"
            )));
        }
    }
    Ok(())
}

fn validate_pair(p: &ProbBatch, q: &ProbBatch) -> Result<()> {
    if p.probs.shape() != q.probs.shape() {
        return Err(Error::Contract(format!(
            "distribution shapes differ: {:?} vs {:?}",
            p.probs.shape(),
            q.probs.shape()
        )));
    }
    Ok(())
}

// ── Row-level helpers (shared by losses and scoring) ──

/// `ln(max(x, PROB_FLOOR))`.
#[inline]
fn ln_c(x: f64) -> f64 {
    x.max(PROB_FLOOR).ln()
}

/// Entropy `−Σ p ln p` of one distribution; `0·log 0 := 0`.
pub fn row_entropy(p: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &pi in p {
        acc += pi * ln_c(pi);
    }
    -acc
}

/// KL divergence `Σ p (ln p − ln q)` with clamped logs.
pub fn row_kl(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        acc += pi * (ln_c(pi) - ln_c(qi));
    }
    acc
}

// ── Value route ──

/// Mean negative log-likelihood of the labeled rows:
/// `−(1/n) Σ ln p_i[y_i]`. Requires labels.
pub fn supervised_loss(batch: &ProbBatch) -> Result<f64> {
    let labels = batch
        .labels()
        .ok_or_else(|| Error::Contract("supervised_loss requires labels".into()))?;
    let (n, c) = batch.probs.dims2()?;
    let d = batch.probs.data();
    let mut acc = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        acc += ln_c(d[i * c + y]);
    }
    Ok(acc * (-1.0 / n as f64))
}

/// Mean prediction entropy `−(1/m) ΣΣ p ln p`, in `[0, ln C]`.
pub fn entropy_loss(batch: &ProbBatch) -> Result<f64> {
    let (n, c) = batch.probs.dims2()?;
    let d = batch.probs.data();
    let mut acc = 0.0;
    for i in 0..n * c {
        acc += d[i] * ln_c(d[i]);
    }
    Ok(acc * (-1.0 / n as f64))
}

/// Mean KL divergence `(1/m) Σ KL(p_i ‖ q_i)` between paired rows.
pub fn consistency_loss(p: &ProbBatch, q: &ProbBatch) -> Result<f64> {
    validate_pair(p, q)?;
    let (n, c) = p.probs.dims2()?;
    let (dp, dq) = (p.probs.data(), q.probs.data());
    let mut acc = 0.0;
    for i in 0..n * c {
        acc += dp[i] * (ln_c(dp[i]) - ln_c(dq[i]));
    }
    Ok(acc * (1.0 / n as f64))
}

/// Mean cross-prediction loss `−(1/m) ΣΣ p_i[y] ln q_i[y]`: the entropy of
/// `p` plus the divergence of `q` from `p`.
pub fn unsupervised_loss(p: &ProbBatch, q: &ProbBatch) -> Result<f64> {
    validate_pair(p, q)?;
    let (n, c) = p.probs.dims2()?;
    let (dp, dq) = (p.probs.data(), q.probs.data());
    let mut acc = 0.0;
    for i in 0..n * c {
        acc += dp[i] * ln_c(dq[i]);
    }
    Ok(acc * (-1.0 / n as f64))
}

/// Weighted total `L_s + λ·L_u`; `λ` must be finite and non-negative.
pub fn total_loss(supervised: f64, unsupervised: f64, lambda: f64) -> Result<f64> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Contract(format!(
            "lambda {lambda} must be finite and >= 0"
        )));
    }
    Ok(supervised + lambda * unsupervised)
}

// ── Tape route (differentiable) ──

fn tape_dims(tape: &Tape, probs: Var) -> Result<(usize, usize)> {
    validate_probs(tape.value(probs))?;
    tape.value(probs).dims2()
}

/// One-hot mask constant matching `labels` over `[n, c]`.
fn one_hot(tape: &mut Tape, labels: &[usize], n: usize, c: usize) -> Result<Var> {
    if labels.len() != n {
        return Err(Error::Contract(format!(
            "labels length {} does not match batch size {n}",
            labels.len()
        )));
    }
    let mut mask = vec![0.0; n * c];
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::Contract(format!(
                "label {y} out of range for {c} classes"
            )));
        }
        mask[i * c + y] = 1.0;
    }
    Ok(tape.constant(Tensor::new(vec![n, c], mask)?))
}

/// Differentiable mean negative log-likelihood.
pub fn supervised_loss_t(tape: &mut Tape, probs: Var, labels: &[usize]) -> Result<Var> {
    let (n, c) = tape_dims(tape, probs)?;
    let mask = one_hot(tape, labels, n, c)?;
    let lp = tape.ln_clamped(probs, PROB_FLOOR)?;
    let picked = tape.mul(lp, mask)?;
    let s = tape.sum(picked)?;
    tape.scale(s, -1.0 / n as f64)
}

/// Differentiable mean prediction entropy.
pub fn entropy_loss_t(tape: &mut Tape, probs: Var) -> Result<Var> {
    let (n, _) = tape_dims(tape, probs)?;
    let lp = tape.ln_clamped(probs, PROB_FLOOR)?;
    let plp = tape.mul(probs, lp)?;
    let s = tape.sum(plp)?;
    tape.scale(s, -1.0 / n as f64)
}

/// Differentiable mean KL divergence; gradients flow through `p` and `q`.
pub fn consistency_loss_t(tape: &mut Tape, p: Var, q: Var) -> Result<Var> {
    let (n, _) = tape_dims(tape, p)?;
    let (nq, _) = tape_dims(tape, q)?;
    if tape.value(p).shape() != tape.value(q).shape() {
        return Err(Error::Contract(format!(
            "distribution shapes differ: {:?} vs {:?} ({n} vs {nq} rows)",
            tape.value(p).shape(),
            tape.value(q).shape()
        )));
    }
    let lp = tape.ln_clamped(p, PROB_FLOOR)?;
    let lq = tape.ln_clamped(q, PROB_FLOOR)?;
    let diff = tape.sub(lp, lq)?;
    let terms = tape.mul(p, diff)?;
    let s = tape.sum(terms)?;
    tape.scale(s, 1.0 / n as f64)
}

/// Differentiable mean cross-prediction loss; gradients flow through both.
pub fn unsupervised_loss_t(tape: &mut Tape, p: Var, q: Var) -> Result<Var> {
    let (n, _) = tape_dims(tape, p)?;
    if tape.value(p).shape() != tape.value(q).shape() {
        return Err(Error::Contract(format!(
            "distribution shapes differ: {:?} vs {:?}",
            tape.value(p).shape(),
            tape.value(q).shape()
        )));
    }
    let lq = tape.ln_clamped(q, PROB_FLOOR)?;
    let terms = tape.mul(p, lq)?;
    let s = tape.sum(terms)?;
    tape.scale(s, -1.0 / n as f64)
}

/// Differentiable weighted total `L_s + λ·L_u`.
pub fn total_loss_t(tape: &mut Tape, supervised: Var, unsupervised: Var, lambda: f64) -> Result<Var> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Contract(format!(
            "lambda {lambda} must be finite and >= 0"
        )));
    }
    let scaled = tape.scale(unsupervised, lambda)?;
    tape.add(supervised, scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn batch(rows: &[Vec<f64>], labels: Option<Vec<usize>>) -> ProbBatch {
        ProbBatch::new(Tensor::from_rows(rows).unwrap(), labels).unwrap()
    }

    fn random_simplex_batch(rng: &mut ChaCha8Rng, n: usize, c: usize) -> ProbBatch {
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let raw: Vec<f64> = (0..c).map(|_| rng.gen::<f64>() + 1e-9).collect();
            let s: f64 = raw.iter().sum();
            rows.push(raw.into_iter().map(|x| x / s).collect());
        }
        batch(&rows, None)
    }

    #[test]
    fn supervised_loss_matches_hand_computed_values() {
        // Both rows put probability 0.5 / 0.25 on their label:
        // (−ln 0.5 − ln 0.25)/2 = 1.0397207708399179.
        let b = batch(
            &[vec![0.5, 0.5], vec![0.25, 0.75]],
            Some(vec![0, 0]),
        );
        let l = supervised_loss(&b).unwrap();
        assert!((l - 1.0397207708399179).abs() < 1e-12, "got {l}");
    }

    #[test]
    fn supervised_loss_clamps_zero_probability_on_the_label() {
        // p[y] = 0 clamps to 1e-12: loss = −ln(1e-12) = 12 ln 10.
        let b = batch(&[vec![0.0, 1.0]], Some(vec![0]));
        let l = supervised_loss(&b).unwrap();
        let expect = -(1e-12f64.ln());
        assert!((l - expect).abs() < 1e-9, "got {l}, want {expect}");
    }

    #[test]
    fn entropy_loss_matches_hand_computed_value() {
        // H([0.7, 0.2, 0.1]) = 0.8018185525433372.
        let b = batch(&[vec![0.7, 0.2, 0.1]], None);
        let l = entropy_loss(&b).unwrap();
        assert!((l - 0.8018185525433372).abs() < 1e-12, "got {l}");
    }

    #[test]
    fn entropy_of_uniform_is_ln_c_and_of_onehot_is_zero() {
        let c = 4;
        let uni = batch(&[vec![0.25; 4]], None);
        let lu = entropy_loss(&uni).unwrap();
        assert!((lu - (c as f64).ln()).abs() < 1e-12, "uniform entropy {lu}");
        let hot = batch(&[vec![1.0, 0.0, 0.0, 0.0]], None);
        let lh = entropy_loss(&hot).unwrap();
        assert!(lh.abs() < 1e-12, "one-hot entropy {lh} (0·log 0 := 0)");
    }

    #[test]
    fn consistency_loss_matches_hand_computed_kl() {
        // KL([1,0] ‖ [0.5,0.5]) = ln 2.
        let p = batch(&[vec![1.0, 0.0]], None);
        let q = batch(&[vec![0.5, 0.5]], None);
        let l = consistency_loss(&p, &q).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12, "got {l}");
    }

    #[test]
    fn consistency_loss_is_zero_when_p_equals_q() {
        let p = batch(&[vec![0.3, 0.3, 0.4], vec![0.6, 0.2, 0.2]], None);
        let l = consistency_loss(&p, &p).unwrap();
        assert!(l.abs() < 1e-12, "KL(p‖p) must vanish, got {l}");
    }

    #[test]
    fn unsupervised_equals_entropy_plus_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let n = 1 + rng.gen_range(0..8);
            let c = 2 + rng.gen_range(0..6);
            let p = random_simplex_batch(&mut rng, n, c);
            let q = random_simplex_batch(&mut rng, n, c);
            let le = entropy_loss(&p).unwrap();
            let lc = consistency_loss(&p, &q).unwrap();
            let lu = unsupervised_loss(&p, &q).unwrap();
            assert!(
                (le + lc - lu).abs() < 1e-12,
                "identity violated: {le} + {lc} != {lu}"
            );
        }
    }

    #[test]
    fn total_loss_weights_the_unsupervised_term() {
        let t = total_loss(1.5, 2.0, 0.5).unwrap();
        assert!((t - 2.5).abs() < 1e-15);
        assert!(total_loss(1.0, 1.0, -0.1).is_err(), "negative lambda rejected");
        assert!(total_loss(1.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn lambda_zero_total_ignores_the_unsupervised_term_exactly() {
        let t = total_loss(0.75, 123.456, 0.0).unwrap();
        assert_eq!(t, 0.75);
    }

    #[test]
    fn tape_route_agrees_with_value_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = 1 + rng.gen_range(0..6);
            let c = 2 + rng.gen_range(0..5);
            let p = random_simplex_batch(&mut rng, n, c);
            let q = random_simplex_batch(&mut rng, n, c);
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();

            let mut tape = Tape::new();
            let pv = tape.constant(p.probs().clone());
            let qv = tape.constant(q.probs().clone());
            let ls = supervised_loss_t(&mut tape, pv, &labels).unwrap();
            let le = entropy_loss_t(&mut tape, pv).unwrap();
            let lc = consistency_loss_t(&mut tape, pv, qv).unwrap();
            let lu = unsupervised_loss_t(&mut tape, pv, qv).unwrap();

            let pl = ProbBatch::new(p.probs().clone(), Some(labels)).unwrap();
            assert!((tape.value(ls).data()[0] - supervised_loss(&pl).unwrap()).abs() < 1e-12);
            assert!((tape.value(le).data()[0] - entropy_loss(&p).unwrap()).abs() < 1e-12);
            assert!((tape.value(lc).data()[0] - consistency_loss(&p, &q).unwrap()).abs() < 1e-12);
            assert!((tape.value(lu).data()[0] - unsupervised_loss(&p, &q).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn tape_losses_differentiate_through_both_arguments() {
        // Check d(consistency)/dq and d(unsupervised)/dq are non-zero and
        // match finite differences through a softmax parameterization.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, c) = (3, 4);
        let logits_p: Vec<f64> = (0..n * c).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let logits_q: Vec<f64> = (0..n * c).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();

        enum Kind { Consistency, Unsupervised }
        for kind in [Kind::Consistency, Kind::Unsupervised] {
            let eval = |lq: &[f64]| -> f64 {
                let mut t = Tape::new();
                let xp = t.constant(Tensor::new(vec![n, c], logits_p.clone()).unwrap());
                let xq = t.param(Tensor::new(vec![n, c], lq.to_vec()).unwrap());
                let p = t.softmax(xp).unwrap();
                let q = t.softmax(xq).unwrap();
                let l = match kind {
                    Kind::Consistency => consistency_loss_t(&mut t, p, q).unwrap(),
                    Kind::Unsupervised => unsupervised_loss_t(&mut t, p, q).unwrap(),
                };
                t.value(l).data()[0]
            };
            // Analytic gradient w.r.t. the q logits.
            let mut t = Tape::new();
            let xp = t.constant(Tensor::new(vec![n, c], logits_p.clone()).unwrap());
            let xq = t.param(Tensor::new(vec![n, c], logits_q.clone()).unwrap());
            let p = t.softmax(xp).unwrap();
            let q = t.softmax(xq).unwrap();
            let l = match kind {
                Kind::Consistency => consistency_loss_t(&mut t, p, q).unwrap(),
                Kind::Unsupervised => unsupervised_loss_t(&mut t, p, q).unwrap(),
            };
            t.backward(l).unwrap();
            let analytic = t.grad(xq).unwrap().to_vec();
            assert!(
                analytic.iter().any(|g| g.abs() > 1e-8),
                "gradient through q must not vanish"
            );
            let mut probe = logits_q.clone();
            for i in 0..analytic.len() {
                let orig = probe[i];
                probe[i] = orig + 1e-5;
                let up = eval(&probe);
                probe[i] = orig - 1e-5;
                let down = eval(&probe);
                probe[i] = orig;
                let numeric = (up - down) / 2e-5;
                let denom = analytic[i].abs().max(numeric.abs()).max(1.0);
                assert!(
                    (analytic[i] - numeric).abs() / denom < 1e-4,
                    "grad[{i}]: analytic {} vs numeric {numeric}",
                    analytic[i]
                );
            }
        }
    }

    #[test]
    fn prob_batch_rejects_non_simplex_rows() {
        assert!(ProbBatch::new(Tensor::from_rows(&[vec![0.5, 0.6]]).unwrap(), None).is_err());
        assert!(ProbBatch::new(Tensor::from_rows(&[vec![-0.1, 1.1]]).unwrap(), None).is_err());
        assert!(ProbBatch::new(Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap(), Some(vec![2])).is_err());
    }
}
