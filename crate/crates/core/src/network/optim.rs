//! First-order optimizers with stepped learning-rate schedules.

use crate::error::{Error, Result};
use crate::network::Param;
use serde::{Deserialize, Serialize};

/// One learning-rate decay event: at `epoch` and later, the base rate is
/// multiplied by `factor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleStep {
    pub epoch: usize,
    pub factor: f64,
}

enum Kind {
    Adam { beta1: f64, beta2: f64, eps: f64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>, t: u64 },
    Momentum { momentum: f64, buf: Vec<Vec<f64>> },
}

/// Optimizer over a model's parameter list. Weight decay enters as an L2
/// gradient term (`g + wd·w`), not as a decoupled update.
pub struct Optimizer {
    kind: Kind,
    initial_lr: f64,
    lr: f64,
    weight_decay: f64,
    schedule: Vec<ScheduleStep>,
}

impl Optimizer {
    /// Standard Adam (β₁ = 0.9, β₂ = 0.999, ε = 1e-8) with bias-corrected
    /// moment estimates.
    pub fn adam(lr: f64, weight_decay: f64, schedule: Vec<ScheduleStep>) -> Result<Self> {
        Self::validate(lr, weight_decay, &schedule)?;
        Ok(Self {
            kind: Kind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: Vec::new(), v: Vec::new(), t: 0 },
            initial_lr: lr,
            lr,
            weight_decay,
            schedule,
        })
    }

    /// SGD with a classical momentum buffer.
    pub fn sgd_momentum(lr: f64, momentum: f64, weight_decay: f64, schedule: Vec<ScheduleStep>) -> Result<Self> {
        Self::validate(lr, weight_decay, &schedule)?;
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Contract(format!("momentum {momentum} must be in [0, 1)")));
        }
        Ok(Self {
            kind: Kind::Momentum { momentum, buf: Vec::new() },
            initial_lr: lr,
            lr,
            weight_decay,
            schedule,
        })
    }

    fn validate(lr: f64, weight_decay: f64, schedule: &[ScheduleStep]) -> Result<()> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Contract(format!("learning rate {lr} must be > 0")));
        }
        if !(weight_decay.is_finite() && weight_decay >= 0.0) {
            return Err(Error::Contract(format!("weight decay {weight_decay} must be >= 0")));
        }
        for w in schedule.windows(2) {
            if w[1].epoch <= w[0].epoch {
                return Err(Error::Contract("schedule epochs must strictly increase".into()));
            }
        }
        if let Some(bad) = schedule.iter().find(|s| !(s.factor.is_finite() && s.factor > 0.0)) {
            return Err(Error::Contract(format!(
                "schedule factor {} at epoch {} must be > 0",
                bad.factor, bad.epoch
            )));
        }
        Ok(())
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Sets the effective rate for `epoch`: the initial rate times the
    /// product of all factors whose trigger epoch is `<= epoch`.
    pub fn apply_schedule(&mut self, epoch: usize) {
        let mut lr = self.initial_lr;
        for s in &self.schedule {
            if s.epoch <= epoch {
                lr *= s.factor;
            }
        }
        self.lr = lr;
    }

    /// One update over all parameters. `grads` is index-aligned with
    /// `params`; `None` entries are treated as zero gradients (weight decay
    /// still applies). Errors if any updated value leaves the finite range.
    pub fn step(&mut self, params: &mut [Param], grads: &[Option<Vec<f64>>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "gradient list length {} does not match parameter count {}",
                grads.len(),
                params.len()
            )));
        }
        match &mut self.kind {
            Kind::Adam { beta1, beta2, eps, m, v, t } => {
                if m.is_empty() {
                    *m = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
                    *v = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
                }
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t as i32);
                let bc2 = 1.0 - beta2.powi(*t as i32);
                for (pi, p) in params.iter_mut().enumerate() {
                    let zero;
                    let g: &[f64] = match &grads[pi] {
                        Some(g) => g,
                        None => {
                            zero = vec![0.0; p.data.len()];
                            &zero
                        }
                    };
                    if g.len() != p.data.len() {
                        return Err(Error::Contract(format!(
                            "gradient length {} does not match parameter '{}' ({})",
                            g.len(),
                            p.name,
                            p.data.len()
                        )));
                    }
                    for i in 0..p.data.len() {
                        let gi = g[i] + self.weight_decay * p.data[i];
                        m[pi][i] = *beta1 * m[pi][i] + (1.0 - *beta1) * gi;
                        v[pi][i] = *beta2 * v[pi][i] + (1.0 - *beta2) * gi * gi;
                        let mhat = m[pi][i] / bc1;
                        let vhat = v[pi][i] / bc2;
                        p.data[i] -= self.lr * mhat / (vhat.sqrt() + *eps);
                    }
                }
            }
            Kind::Momentum { momentum, buf } => {
                if buf.is_empty() {
                    *buf = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
                }
                for (pi, p) in params.iter_mut().enumerate() {
                    let zero;
                    let g: &[f64] = match &grads[pi] {
                        Some(g) => g,
                        None => {
                            zero = vec![0.0; p.data.len()];
                            &zero
                        }
                    };
                    if g.len() != p.data.len() {
                        return Err(Error::Contract(format!(
                            "gradient length {} does not match parameter '{}' ({})",
                            g.len(),
                            p.name,
                            p.data.len()
                        )));
                    }
                    for i in 0..p.data.len() {
                        let gi = g[i] + self.weight_decay * p.data[i];
                        buf[pi][i] = *momentum * buf[pi][i] + gi;
                        p.data[i] -= self.lr * buf[pi][i];
                    }
                }
            }
        }
        for p in params.iter() {
            if let Some(&bad) = p.data.iter().find(|x| !x.is_finite()) {
                return Err(Error::Domain(format!(
                    "non-finite value {bad} in parameter '{}' after update",
                    p.name
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(data: Vec<f64>) -> Vec<Param> {
        vec![Param { name: "w".into(), shape: vec![data.len()], data }]
    }

    /// Straight-line reference of the Adam recurrence for a single scalar.
    fn adam_reference(w0: f64, grads: &[f64], lr: f64, wd: f64) -> f64 {
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
        for (step, &g0) in grads.iter().enumerate() {
            let t = (step + 1) as i32;
            let g = g0 + wd * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(t));
            let vhat = v / (1.0 - b2.powi(t));
            w -= lr * mhat / (vhat.sqrt() + eps);
        }
        w
    }

    #[test]
    fn adam_matches_the_textbook_recurrence() {
        let grads = [0.5, -0.3, 0.8, 0.1, -0.9, 0.2];
        let mut params = one_param(vec![1.0]);
        let mut opt = Optimizer::adam(0.01, 0.0, vec![]).unwrap();
        for &g in &grads {
            opt.step(&mut params, &[Some(vec![g])]).unwrap();
        }
        let expect = adam_reference(1.0, &grads, 0.01, 0.0);
        assert!(
            (params[0].data[0] - expect).abs() < 1e-15,
            "adam trajectory {} vs reference {expect}",
            params[0].data[0]
        );
    }

    #[test]
    fn weight_decay_enters_as_an_l2_gradient_term() {
        let grads = [0.2, 0.1, -0.4];
        let mut params = one_param(vec![2.0]);
        let mut opt = Optimizer::adam(0.05, 0.01, vec![]).unwrap();
        for &g in &grads {
            opt.step(&mut params, &[Some(vec![g])]).unwrap();
        }
        let expect = adam_reference(2.0, &grads, 0.05, 0.01);
        assert!((params[0].data[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn momentum_sgd_matches_a_hand_rolled_trajectory() {
        let grads = [1.0, -0.5, 0.25];
        let mut params = one_param(vec![0.0]);
        let mut opt = Optimizer::sgd_momentum(0.1, 0.9, 0.0, vec![]).unwrap();
        let (mut w, mut buf) = (0.0f64, 0.0f64);
        for &g in &grads {
            opt.step(&mut params, &[Some(vec![g])]).unwrap();
            buf = 0.9 * buf + g;
            w -= 0.1 * buf;
        }
        assert!((params[0].data[0] - w).abs() < 1e-15);
    }

    #[test]
    fn schedule_compounds_factors_at_or_before_the_epoch() {
        let schedule = vec![
            ScheduleStep { epoch: 50, factor: 0.1 },
            ScheduleStep { epoch: 90, factor: 0.1 },
        ];
        let mut opt = Optimizer::adam(1e-3, 0.0, schedule).unwrap();
        opt.apply_schedule(10);
        assert!((opt.lr() - 1e-3).abs() < 1e-18, "epoch 10 keeps the base rate");
        opt.apply_schedule(50);
        assert!((opt.lr() - 1e-4).abs() < 1e-18, "epoch 50 applies the first decay");
        opt.apply_schedule(95);
        assert!((opt.lr() - 1e-5).abs() < 1e-18, "epoch 95 compounds both decays");
        opt.apply_schedule(0);
        assert!((opt.lr() - 1e-3).abs() < 1e-18, "the schedule is a pure function of the epoch");
    }

    #[test]
    fn missing_gradients_are_zero_but_decay_still_applies() {
        let mut params = one_param(vec![1.0]);
        let mut opt = Optimizer::sgd_momentum(0.1, 0.0, 0.5, vec![]).unwrap();
        opt.step(&mut params, &[None]).unwrap();
        // g = 0 + 0.5·1.0 = 0.5; w = 1 − 0.1·0.5 = 0.95.
        assert!((params[0].data[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn invalid_hyperparameters_are_rejected() {
        assert!(Optimizer::adam(0.0, 0.0, vec![]).is_err());
        assert!(Optimizer::adam(1e-3, -0.1, vec![]).is_err());
        assert!(Optimizer::sgd_momentum(1e-3, 1.0, 0.0, vec![]).is_err());
        let bad = vec![ScheduleStep { epoch: 5, factor: 0.1 }, ScheduleStep { epoch: 5, factor: 0.1 }];
        assert!(Optimizer::adam(1e-3, 0.0, bad).is_err());
    }
}
