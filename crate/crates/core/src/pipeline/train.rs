//! The two training phases — adaptation on unlabeled target data and
//! supervised fine-tuning on the purchased labels — plus accuracy
//! evaluation. Both loops are pure functions of (model, data, config), with
//! every random draw pinned to a derived seed, so a rerun walks the same
//! trajectory to the last bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{make_batches, Dataset, DomainRole};
use crate::error::{Error, Result};
use crate::losses::{
    consistency_loss, entropy_loss, entropy_loss_t, supervised_loss_t, total_loss_t,
    unsupervised_loss_t, ProbBatch,
};
use crate::network::{BoundParams, DomainTag, Model, Optimizer};
use crate::perturb::perturb_features;

use super::config::{OptimizerKind, RunConfig, UdaMode};
use super::record::{derive_seed, EpochLosses, PhaseRecord};

/// Rows per forward pass when evaluating; evaluation statistics are
/// per-row, so the chunk size cannot change any result.
const EVAL_CHUNK: usize = 256;

/// Fraction of `labels` that `probs` (shape `[n, class_count]`) assigns the
/// highest probability, ties resolved toward the lower class index.
pub fn accuracy_from_predictions(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let (n, c) = probs.dims2()?;
    if labels.len() != n {
        return Err(Error::Contract(format!(
            "labels length {} does not match prediction rows {n}",
            labels.len()
        )));
    }
    let d = probs.data();
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| crate::analysis::argmax_row(&d[i * c..(i + 1) * c]) == y)
        .count();
    Ok(correct as f64 / n as f64)
}

/// The statistics branch for evaluating `model` on data of `role`. Source
/// data always reads the source branch. Target data reads the target branch
/// once any phase has trained it (adaptation with an unsupervised objective,
/// or fine-tuning); a model that only ever saw source batches keeps its
/// source statistics for target data too, because its target branch still
/// holds the initialization values. The decision reads the model's own seed
/// lineage, so it works on reloaded checkpoints.
pub fn eval_domain_for(model: &Model, role: DomainRole) -> DomainTag {
    match role {
        DomainRole::Source => DomainTag::Source,
        DomainRole::TargetTrain | DomainRole::TargetTest => {
            let target_trained = model
                .seed_lineage
                .iter()
                .any(|s| s.starts_with("uda-tgt=") || s.starts_with("finetune="));
            if target_trained {
                DomainTag::Target
            } else {
                DomainTag::Source
            }
        }
    }
}

/// Top-1 accuracy of `model` on `data` through `domain`'s statistics
/// branch. Evaluation is chunked but mutates nothing.
pub fn evaluate(model: &Model, data: &Dataset, domain: DomainTag) -> Result<f64> {
    data.validate()?;
    let labels = data
        .labels
        .as_deref()
        .ok_or_else(|| Error::Contract("accuracy evaluation needs labels".into()))?;
    check_compat(model, data)?;
    let mut correct = 0usize;
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let x = Tensor::from_rows(&data.features[start..end])?;
        let probs = model.predict(&x, domain)?;
        let c = model.class_count;
        let d = probs.data();
        for (i, &y) in labels[start..end].iter().enumerate() {
            if crate::analysis::argmax_row(&d[i * c..(i + 1) * c]) == y {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

fn check_compat(model: &Model, data: &Dataset) -> Result<()> {
    if data.class_count != model.class_count {
        return Err(Error::Contract(format!(
            "dataset class count {} does not match model class count {}",
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

fn gather_rows(ds: &Dataset, batch: &[usize]) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = batch.iter().map(|&i| ds.features[i].clone()).collect();
    Tensor::from_rows(&rows)
}

fn scalar(tape: &Tape, v: Var) -> f64 {
    tape.value(v).data()[0]
}

fn build_optimizer(cfg: &RunConfig, lr: f64, schedule: &[crate::network::ScheduleStep]) -> Result<Optimizer> {
    match cfg.optimizer {
        OptimizerKind::Adam => Optimizer::adam(lr, cfg.weight_decay, schedule.to_vec()),
        OptimizerKind::Sgd => {
            Optimizer::sgd_momentum(lr, cfg.momentum, cfg.weight_decay, schedule.to_vec())
        }
    }
}

/// Runs backward from `objective` and applies one optimizer step.
fn step_optimizer(
    tape: &mut Tape,
    bound: &BoundParams,
    objective: Var,
    model: &mut Model,
    opt: &mut Optimizer,
) -> Result<()> {
    let total = scalar(tape, objective);
    if !total.is_finite() {
        return Err(Error::Domain(format!("objective became {total}")));
    }
    tape.backward(objective)?;
    let grads: Vec<Option<Vec<f64>>> = (0..bound.len())
        .map(|i| tape.grad(bound.var(i)).map(<[f64]>::to_vec))
        .collect();
    opt.step(&mut model.params, &grads)
}

/// Numeric blowups inside a training step — an overflowing forward pass, a
/// non-finite loss, or an update that leaves the finite range — all surface
/// as domain errors; at the step boundary they mean training diverged.
fn diverged_at(e: Error, step: usize) -> Error {
    match e {
        Error::Domain(message) => Error::Divergence { step, message },
        other => other,
    }
}

/// Adapts `model` to the target domain: every step trains the supervised
/// loss on a labeled source batch and (unless the mode is source-only or
/// `lambda` is zero) the weighted unsupervised objective on an unlabeled
/// target batch. Target labels, if present, are never read. With the
/// unsupervised branch inactive the loop touches neither the target batches
/// nor their seeds, so a `lambda = 0` run reproduces the source-only
/// trajectory exactly.
///
/// When `eval_set` is given, its accuracy is recorded after every epoch.
pub fn train_uda(
    model: &mut Model,
    source: &Dataset,
    target: &Dataset,
    eval_set: Option<&Dataset>,
    cfg: &RunConfig,
) -> Result<PhaseRecord> {
    cfg.validate()?;
    source.validate()?;
    target.validate()?;
    check_compat(model, source)?;
    check_compat(model, target)?;
    let src_labels = source
        .labels
        .as_deref()
        .ok_or_else(|| Error::Contract("adaptation needs a labeled source set".into()))?;

    let active = cfg.uda_mode != UdaMode::SourceOnly && cfg.lambda > 0.0;
    let consistency = active && cfg.uda_mode == UdaMode::Consistency;
    let perturbation = cfg.perturbation()?;

    let src_seed = derive_seed(cfg.seed, "uda-src");
    model.record_seed("uda-src", src_seed);
    let tgt_seed = derive_seed(cfg.seed, "uda-tgt");
    let perturb_seed = derive_seed(cfg.seed, "uda-perturb");
    if active {
        model.record_seed("uda-tgt", tgt_seed);
        if consistency {
            model.record_seed("uda-perturb", perturb_seed);
        }
    }

    let mut opt = build_optimizer(cfg, cfg.lr_uda, &cfg.uda_schedule)?;
    let mut epochs = Vec::with_capacity(cfg.epochs_uda);
    let mut per_epoch_eval = Vec::new();
    let mut global_step = 0usize;

    for epoch in 0..cfg.epochs_uda {
        opt.apply_schedule(epoch);
        let src_batches = make_batches(source.len(), cfg.batch_size, src_seed, epoch)?;
        let tgt_batches = if active {
            make_batches(target.len(), cfg.batch_size, tgt_seed, epoch)?
        } else {
            Vec::new()
        };
        let steps = if active { src_batches.len().max(tgt_batches.len()) } else { src_batches.len() };
        // One perturbation stream per epoch, consumed in batch-sample order.
        let mut perturb_rng = ChaCha8Rng::seed_from_u64(perturb_seed);
        perturb_rng.set_stream(epoch as u64 + 1);

        let mut sums = EpochLosses { epoch, l_s: 0.0, l_e: 0.0, l_c: 0.0, l_u: 0.0, total: 0.0 };
        for step in 0..steps {
            let step_losses = (|| -> Result<(f64, f64, f64, f64, f64)> {
                let mut tape = Tape::new();
                let bound = model.bind(&mut tape)?;

                let sb = &src_batches[step % src_batches.len()];
                let xs = gather_rows(source, sb)?;
                let ys: Vec<usize> = sb.iter().map(|&i| src_labels[i]).collect();
                let ps = model.forward_train(&mut tape, &bound, &xs, DomainTag::Source)?;
                let ls = supervised_loss_t(&mut tape, ps, &ys)?;

                let (objective, le_val, lc_val, lu_val) = if active {
                    let tb = &tgt_batches[step % tgt_batches.len()];
                    let xt = gather_rows(target, tb)?;
                    let pt = model.forward_train(&mut tape, &bound, &xt, DomainTag::Target)?;
                    let (lu, le_val, lc_val) = if consistency {
                        let perturbed: Vec<Vec<f64>> = tb
                            .iter()
                            .map(|&i| {
                                perturb_features(
                                    &target.features[i],
                                    &target.shape,
                                    &perturbation,
                                    &mut perturb_rng,
                                )
                            })
                            .collect::<Result<_>>()?;
                        let xp = Tensor::from_rows(&perturbed)?;
                        let pp =
                            model.forward_train(&mut tape, &bound, &xp, DomainTag::TargetPerturbed)?;
                        let lu = unsupervised_loss_t(&mut tape, pt, pp)?;
                        let bt = ProbBatch::new(tape.value(pt).clone(), None)?;
                        let bp = ProbBatch::new(tape.value(pp).clone(), None)?;
                        let le = entropy_loss(&bt)?;
                        let lc = consistency_loss(&bt, &bp)?;
                        let lu_val = scalar(&tape, lu);
                        if (le + lc - lu_val).abs() > 1e-9 {
                            return Err(Error::Contract(format!(
                                "loss decomposition broke at step {global_step}: \
                                 entropy {le} + consistency {lc} != combined {lu_val}"
                            )));
                        }
                        (lu, le, lc)
                    } else {
                        let lu = entropy_loss_t(&mut tape, pt)?;
                        let le = scalar(&tape, lu);
                        (lu, le, 0.0)
                    };
                    let lu_val = scalar(&tape, lu);
                    let total = total_loss_t(&mut tape, ls, lu, cfg.lambda)?;
                    (total, le_val, lc_val, lu_val)
                } else {
                    (ls, 0.0, 0.0, 0.0)
                };

                let ls_val = scalar(&tape, ls);
                let total_val = scalar(&tape, objective);
                step_optimizer(&mut tape, &bound, objective, model, &mut opt)?;
                Ok((ls_val, le_val, lc_val, lu_val, total_val))
            })()
            .map_err(|e| diverged_at(e, global_step))?;

            let (ls_val, le_val, lc_val, lu_val, total_val) = step_losses;
            sums.l_s += ls_val;
            sums.l_e += le_val;
            sums.l_c += lc_val;
            sums.l_u += lu_val;
            sums.total += total_val;
            global_step += 1;
        }

        let n = steps as f64;
        epochs.push(EpochLosses {
            epoch,
            l_s: sums.l_s / n,
            l_e: sums.l_e / n,
            l_c: sums.l_c / n,
            l_u: sums.l_u / n,
            total: sums.total / n,
        });
        if let Some(es) = eval_set {
            per_epoch_eval.push(evaluate(model, es, eval_domain_for(model, es.role))?);
        }
    }

    Ok(PhaseRecord { phase: "uda".into(), epochs, per_epoch_eval, steps: global_step })
}

/// Fine-tunes `model` on the labeled pool with the supervised loss alone,
/// feeding the target statistics branch. Zero epochs leaves the model
/// untouched. When `eval_set` is given, its accuracy is recorded after
/// every epoch.
///
/// The labeled pool is a small, selection-biased slice of the target
/// domain, so its batch statistics would crowd the target branch's running
/// values out of shape. When `stats_pool` is given (normally the full
/// unlabeled target training set), the branch is recalibrated against it
/// after every epoch — a statistics repair that uses no labels and leaves
/// the parameter trajectory bit-for-bit unchanged.
pub fn finetune(
    model: &mut Model,
    labeled: &Dataset,
    stats_pool: Option<&Dataset>,
    eval_set: Option<&Dataset>,
    cfg: &RunConfig,
    seed: u64,
) -> Result<PhaseRecord> {
    cfg.validate()?;
    labeled.validate()?;
    check_compat(model, labeled)?;
    let labels = labeled
        .labels
        .as_deref()
        .ok_or_else(|| Error::Contract("fine-tuning needs a labeled pool".into()))?;
    let pool_x = match stats_pool {
        Some(pool) => {
            pool.validate()?;
            check_compat(model, pool)?;
            Some(Tensor::from_rows(&pool.features)?)
        }
        None => None,
    };
    model.record_seed("finetune", seed);

    let mut opt = build_optimizer(cfg, cfg.lr_finetune, &cfg.finetune_schedule)?;
    let mut epochs = Vec::with_capacity(cfg.epochs_finetune);
    let mut per_epoch_eval = Vec::new();
    let mut global_step = 0usize;

    for epoch in 0..cfg.epochs_finetune {
        opt.apply_schedule(epoch);
        let batches = make_batches(labeled.len(), cfg.batch_size, seed, epoch)?;
        let steps = batches.len();
        let mut sum_ls = 0.0;
        for batch in &batches {
            let ls_val = (|| -> Result<f64> {
                let mut tape = Tape::new();
                let bound = model.bind(&mut tape)?;
                let x = gather_rows(labeled, batch)?;
                let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                let probs = model.forward_train(&mut tape, &bound, &x, DomainTag::Target)?;
                let ls = supervised_loss_t(&mut tape, probs, &y)?;
                let ls_val = scalar(&tape, ls);
                step_optimizer(&mut tape, &bound, ls, model, &mut opt)?;
                Ok(ls_val)
            })()
            .map_err(|e| diverged_at(e, global_step))?;
            sum_ls += ls_val;
            global_step += 1;
        }
        let mean = sum_ls / steps as f64;
        epochs.push(EpochLosses { epoch, l_s: mean, l_e: 0.0, l_c: 0.0, l_u: 0.0, total: mean });
        if let Some(x) = &pool_x {
            model.recalibrate(x, DomainTag::Target)?;
        }
        if let Some(es) = eval_set {
            per_epoch_eval.push(evaluate(model, es, eval_domain_for(model, es.role))?);
        }
    }

    Ok(PhaseRecord { phase: "finetune".into(), epochs, per_epoch_eval, steps: global_step })
}
