//! Classifier networks with domain-separated batch normalization.
//!
//! A [`Model`] is an ordered layer list over a flat parameter store. Batch
//! normalization layers keep three disjoint sets of running statistics —
//! one per [`DomainTag`] — while sharing a single learnable `gamma`/`beta`
//! pair across domains. Training-mode forwards normalize with the batch's
//! own statistics and fold them into the tagged domain's running statistics
//! by exponential moving average; eval-mode forwards are pure and normalize
//! against the tagged domain's stored statistics.

mod optim;

pub use optim::{Optimizer, ScheduleStep};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Which statistics branch a forward pass feeds and reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    Source,
    Target,
    TargetPerturbed,
}

impl DomainTag {
    pub const ALL: [DomainTag; 3] = [DomainTag::Source, DomainTag::Target, DomainTag::TargetPerturbed];

    /// Position of this domain's branch in [`DomainBnState`]'s arrays.
    pub fn index(self) -> usize {
        match self {
            DomainTag::Source => 0,
            DomainTag::Target => 1,
            DomainTag::TargetPerturbed => 2,
        }
    }
}

/// One named parameter tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Per-domain running statistics of one batch-norm layer. Running means
/// start at 0 and running variances at 1; they are plain data (never
/// differentiated) and only training-mode forwards move them.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DomainBnState {
    pub running_mean: [Vec<f64>; 3],
    pub running_var: [Vec<f64>; 3],
}

impl DomainBnState {
    fn new(features: usize) -> Self {
        Self {
            running_mean: std::array::from_fn(|_| vec![0.0; features]),
            running_var: std::array::from_fn(|_| vec![1.0; features]),
        }
    }

    /// Folds one batch's statistics into the tagged domain:
    /// `running = (1 − momentum)·running + momentum·batch`.
    fn update(&mut self, domain: DomainTag, mean: &[f64], var: &[f64], momentum: f64) {
        let d = domain.index();
        for (r, &b) in self.running_mean[d].iter_mut().zip(mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, &b) in self.running_var[d].iter_mut().zip(var) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    /// Affine map `x·W + b`; `w` and `b` index the parameter store.
    Dense { w: usize, b: usize, in_dim: usize, out_dim: usize },
    Relu,
    /// Batch normalization with one shared affine pair and three
    /// per-domain statistics branches.
    DomainBatchNorm {
        gamma: usize,
        beta: usize,
        features: usize,
        momentum: f64,
        eps: f64,
        state: DomainBnState,
    },
    /// Row-wise softmax producing class probabilities.
    SoftmaxHead,
}

/// An ordered layer sequence over a flat parameter store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    pub input_dim: usize,
    pub class_count: usize,
    pub layers: Vec<Layer>,
    pub params: Vec<Param>,
    /// Seeds that shaped this model, in order (`"init=42"`, `"uda=7"`, ...).
    pub seed_lineage: Vec<String>,
}

/// Tape handles for every parameter of one forward pass, index-aligned with
/// `Model::params`. Binding once per tape lets several forwards (source,
/// target, perturbed) share leaves so their gradients accumulate.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, param_index: usize) -> Var {
        self.vars[param_index]
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}

struct BnUpdate {
    layer: usize,
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl Model {
    /// Registers every parameter as a differentiable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Result<BoundParams> {
        let mut vars = Vec::with_capacity(self.params.len());
        for p in &self.params {
            vars.push(tape.param(Tensor::new(p.shape.clone(), p.data.clone())?));
        }
        Ok(BoundParams { vars })
    }

    /// Training-mode forward: batch-norm layers normalize with the batch's
    /// own statistics and fold them into `domain`'s running statistics.
    /// Returns class probabilities of shape `[n, class_count]`.
    pub fn forward_train(
        &mut self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: &Tensor,
        domain: DomainTag,
    ) -> Result<Var> {
        let mut updates = Vec::new();
        let out = self.forward_inner(tape, bound, x, domain, true, &mut updates)?;
        for u in updates {
            if let Layer::DomainBatchNorm { state, momentum, .. } = &mut self.layers[u.layer] {
                state.update(domain, &u.mean, &u.var, *momentum);
            }
        }
        Ok(out)
    }

    /// Eval-mode forward: pure, normalizes against `domain`'s running
    /// statistics, mutates nothing.
    pub fn forward_eval(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: &Tensor,
        domain: DomainTag,
    ) -> Result<Var> {
        let mut updates = Vec::new();
        let out = self.forward_inner(tape, bound, x, domain, false, &mut updates)?;
        debug_assert!(updates.is_empty());
        Ok(out)
    }

    fn forward_inner(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: &Tensor,
        domain: DomainTag,
        training: bool,
        updates: &mut Vec<BnUpdate>,
    ) -> Result<Var> {
        let (_, d) = x.dims2()?;
        if d != self.input_dim {
            return Err(Error::Contract(format!(
                "input feature count {d} does not match model input_dim {}",
                self.input_dim
            )));
        }
        if bound.vars.len() != self.params.len() {
            return Err(Error::Contract(
                "bound parameters do not match this model".into(),
            ));
        }
        let mut h = tape.constant(x.clone());
        for (li, layer) in self.layers.iter().enumerate() {
            h = match layer {
                Layer::Dense { w, b, .. } => {
                    let mm = tape.matmul(h, bound.var(*w))?;
                    tape.add_bias(mm, bound.var(*b))?
                }
                Layer::Relu => tape.relu(h)?,
                Layer::DomainBatchNorm { gamma, beta, eps, state, .. } => {
                    if training {
                        let (y, mean, var) =
                            tape.batch_norm_train(h, bound.var(*gamma), bound.var(*beta), *eps)?;
                        updates.push(BnUpdate { layer: li, mean, var });
                        y
                    } else {
                        let di = domain.index();
                        tape.batch_norm_eval(
                            h,
                            bound.var(*gamma),
                            bound.var(*beta),
                            &state.running_mean[di],
                            &state.running_var[di],
                            *eps,
                        )?
                    }
                }
                Layer::SoftmaxHead => tape.softmax(h)?,
            };
        }
        Ok(h)
    }

    /// Re-estimates `domain`'s running statistics from a reference set:
    /// one training-style forward over all of `x` as a single batch, whose
    /// per-layer batch statistics *replace* that branch's running values.
    /// Parameters are untouched and nothing else changes. Training-mode
    /// forwards never read the running statistics, so recalibration leaves
    /// any optimization trajectory exactly as it was; only eval-mode
    /// behavior moves. Useful after fine-tuning on a small pool, whose
    /// batch statistics would otherwise crowd out the branch.
    pub fn recalibrate(&mut self, x: &Tensor, domain: DomainTag) -> Result<()> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let mut updates = Vec::new();
        self.forward_inner(&mut tape, &bound, x, domain, true, &mut updates)?;
        let d = domain.index();
        for u in updates {
            if let Layer::DomainBatchNorm { state, .. } = &mut self.layers[u.layer] {
                state.running_mean[d] = u.mean;
                state.running_var[d] = u.var;
            }
        }
        Ok(())
    }

    /// Eval-mode class probabilities as plain data.
    pub fn predict(&self, x: &Tensor, domain: DomainTag) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let out = self.forward_eval(&mut tape, &bound, x, domain)?;
        Ok(tape.value(out).clone())
    }

    /// Appends a seed event (`label=value`) to the lineage.
    pub fn record_seed(&mut self, label: &str, seed: u64) {
        self.seed_lineage.push(format!("{label}={seed}"));
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }
}

/// Builds a multilayer perceptron: per hidden width a dense layer, a
/// domain batch-norm layer, and a ReLU; then a dense head into a softmax.
/// Weights are seeded Gaussian with standard deviation `1/√fan_in`; biases
/// start at zero. Batch norm uses momentum 0.1 and epsilon 1e-5.
pub fn build_mlp(
    input_dim: usize,
    hidden_dims: &[usize],
    class_count: usize,
    seed: u64,
) -> Result<Model> {
    if input_dim == 0 || class_count < 2 {
        return Err(Error::Contract(format!(
            "build_mlp: input_dim {input_dim} must be > 0 and class_count {class_count} >= 2"
        )));
    }
    if hidden_dims.iter().any(|&h| h == 0) {
        return Err(Error::Contract("build_mlp: hidden widths must be > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params: Vec<Param> = Vec::new();
    let mut layers: Vec<Layer> = Vec::new();

    let mut push_dense = |params: &mut Vec<Param>, idx: usize, fan_in: usize, fan_out: usize| {
        let std = 1.0 / (fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| {
                let n: f64 = rng.sample(rand_distr::StandardNormal);
                n * std
            })
            .collect();
        params.push(Param { name: format!("dense{idx}.w"), shape: vec![fan_in, fan_out], data: w });
        params.push(Param { name: format!("dense{idx}.b"), shape: vec![fan_out], data: vec![0.0; fan_out] });
        (params.len() - 2, params.len() - 1)
    };

    let mut prev = input_dim;
    for (i, &h) in hidden_dims.iter().enumerate() {
        let (w, b) = push_dense(&mut params, i, prev, h);
        layers.push(Layer::Dense { w, b, in_dim: prev, out_dim: h });
        params.push(Param { name: format!("bn{i}.gamma"), shape: vec![h], data: vec![1.0; h] });
        params.push(Param { name: format!("bn{i}.beta"), shape: vec![h], data: vec![0.0; h] });
        layers.push(Layer::DomainBatchNorm {
            gamma: params.len() - 2,
            beta: params.len() - 1,
            features: h,
            momentum: 0.1,
            eps: 1e-5,
            state: DomainBnState::new(h),
        });
        layers.push(Layer::Relu);
        prev = h;
    }
    let (w, b) = push_dense(&mut params, hidden_dims.len(), prev, class_count);
    layers.push(Layer::Dense { w, b, in_dim: prev, out_dim: class_count });
    layers.push(Layer::SoftmaxHead);

    Ok(Model {
        input_dim,
        class_count,
        layers,
        params,
        seed_lineage: vec![format!("init={seed}")],
    })
}

// ── Checkpoints ──

/// Versioned on-disk snapshot of a model: layer specs, every parameter,
/// all per-domain running statistics, and the seed lineage. JSON keeps
/// `f64` values exactly (shortest round-trip printing), so load is
/// bit-exact.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: Model,
}

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let ck = Checkpoint { version: CHECKPOINT_VERSION, model: model.clone() };
    let bytes = serde_json::to_vec_pretty(&ck)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    if !path.exists() {
        return Err(Error::MissingInput(path.display().to_string()));
    }
    let bytes = std::fs::read(path)?;
    let ck: Checkpoint = serde_json::from_slice(&bytes)?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: 0,
            message: format!("unsupported checkpoint version {}", ck.version),
        });
    }
    Ok(ck.model)
}

/// Content hash of a model: SHA-256 over its canonical checkpoint bytes.
pub fn model_fingerprint(model: &Model) -> Result<String> {
    let ck = Checkpoint { version: CHECKPOINT_VERSION, model: model.clone() };
    let bytes = serde_json::to_vec(&ck)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn build_mlp_has_the_expected_parameter_count() {
        // input 2, hidden [16, 16], 3 classes:
        // dense: (2·16+16) + (16·16+16) + (16·3+3); bn affine: 2·16·2.
        let m = build_mlp(2, &[16, 16], 3, 0).unwrap();
        let expect = (2 * 16 + 16) + (16 * 16 + 16) + (16 * 3 + 3) + 2 * 16 * 2;
        assert_eq!(m.param_count(), expect);
        assert_eq!(m.seed_lineage, vec!["init=0".to_string()]);
    }

    #[test]
    fn build_mlp_is_deterministic_per_seed() {
        let a = build_mlp(4, &[8], 3, 7).unwrap();
        let b = build_mlp(4, &[8], 3, 7).unwrap();
        let c = build_mlp(4, &[8], 3, 8).unwrap();
        for (pa, pb) in a.params.iter().zip(&b.params) {
            assert_eq!(pa.data, pb.data, "same seed must give identical weights");
        }
        assert!(
            a.params[0].data != c.params[0].data,
            "different seeds must give different weights"
        );
    }

    #[test]
    fn forward_produces_probability_rows() {
        let mut m = build_mlp(3, &[5], 4, 1).unwrap();
        let x = input(&[vec![0.1, -0.2, 0.3], vec![1.0, 0.5, -1.0]]);
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape).unwrap();
        let y = m.forward_train(&mut tape, &bound, &x, DomainTag::Source).unwrap();
        let v = tape.value(y);
        assert_eq!(v.shape(), &[2, 4]);
        for i in 0..2 {
            let s: f64 = v.row(i).unwrap().iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "row {i} sums to {s}");
            assert!(v.row(i).unwrap().iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn training_updates_only_the_tagged_domain_branch() {
        let mut m = build_mlp(2, &[4], 2, 3).unwrap();
        let x = input(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![-1.0, 0.5]]);
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape).unwrap();
        m.forward_train(&mut tape, &bound, &x, DomainTag::Target).unwrap();
        let Layer::DomainBatchNorm { state, .. } = &m.layers[1] else {
            panic!("layer 1 must be the batch norm");
        };
        let s = DomainTag::Source.index();
        let t = DomainTag::Target.index();
        let p = DomainTag::TargetPerturbed.index();
        assert!(state.running_mean[t].iter().any(|&v| v != 0.0), "target branch moved");
        assert!(state.running_mean[s].iter().all(|&v| v == 0.0), "source branch untouched");
        assert!(state.running_mean[p].iter().all(|&v| v == 0.0), "perturbed branch untouched");
        assert!(state.running_var[s].iter().all(|&v| v == 1.0));
        assert!(state.running_var[p].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn eval_forward_mutates_no_statistics() {
        let mut m = build_mlp(2, &[4], 2, 3).unwrap();
        let x = input(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        // Move the target branch first so eval has something nontrivial to read.
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape).unwrap();
        m.forward_train(&mut tape, &bound, &x, DomainTag::Target).unwrap();
        let before = serde_json::to_string(&m).unwrap();
        for domain in DomainTag::ALL {
            let mut tape = Tape::new();
            let bound = m.bind(&mut tape).unwrap();
            m.forward_eval(&mut tape, &bound, &x, domain).unwrap();
        }
        let after = serde_json::to_string(&m).unwrap();
        assert_eq!(before, after, "eval-mode forwards must be pure");
    }

    #[test]
    fn eval_outputs_differ_across_domains_once_branches_diverge() {
        let mut m = build_mlp(2, &[4], 2, 9).unwrap();
        let xs = input(&[vec![5.0, -3.0], vec![2.0, 8.0], vec![0.0, 1.0]]);
        let xt = input(&[vec![-5.0, 3.0], vec![-2.0, -8.0], vec![0.5, -1.0]]);
        for _ in 0..5 {
            let mut tape = Tape::new();
            let bound = m.bind(&mut tape).unwrap();
            m.forward_train(&mut tape, &bound, &xs, DomainTag::Source).unwrap();
            let mut tape = Tape::new();
            let bound = m.bind(&mut tape).unwrap();
            m.forward_train(&mut tape, &bound, &xt, DomainTag::Target).unwrap();
        }
        let probe = input(&[vec![1.0, 1.0]]);
        let ps = m.predict(&probe, DomainTag::Source).unwrap();
        let pt = m.predict(&probe, DomainTag::Target).unwrap();
        assert!(
            ps.data() != pt.data(),
            "per-domain statistics must give domain-dependent eval outputs"
        );
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = build_mlp(3, &[6, 5], 4, 11).unwrap();
        // Touch every branch so running statistics are non-trivial.
        let x = input(&[vec![0.3, -1.0, 2.0], vec![1.5, 0.0, -0.5]]);
        for domain in DomainTag::ALL {
            let mut tape = Tape::new();
            let bound = m.bind(&mut tape).unwrap();
            m.forward_train(&mut tape, &bound, &x, domain).unwrap();
        }
        m.record_seed("uda", 99);
        let path = dir.path().join("model.ckpt.json");
        save_checkpoint(&m, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(serde_json::to_string(&m).unwrap(), serde_json::to_string(&loaded).unwrap());
        for (a, b) in m.params.iter().zip(&loaded.params) {
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(model_fingerprint(&m).unwrap(), model_fingerprint(&loaded).unwrap());
        assert_eq!(loaded.seed_lineage, vec!["init=11".to_string(), "uda=99".to_string()]);
    }

    #[test]
    fn loading_a_missing_checkpoint_reports_missing_input() {
        let err = load_checkpoint(Path::new("/nonexistent/model.json")).unwrap_err();
        assert!(matches!(err, Error::MissingInput(_)));
    }
}
