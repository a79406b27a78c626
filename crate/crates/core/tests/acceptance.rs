//! The acceptance suite: one test per shipped guarantee, each ending in a
//! single `criterion NN: PASS` line (visible with `--nocapture`). The first
//! six criteria are exact algebraic or bitwise checks; the later ones drive
//! the pipeline end to end on the built-in synthetic benchmark.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lbq::analysis::{curve_from_predictions, selection_histogram};
use lbq::autodiff::{Tape, Tensor, Var};
use lbq::network::BoundParams;
use lbq::budget::{reference_uniform_oracle, select_minrank, select_toprank, select_uniform};
use lbq::losses::{
    consistency_loss, consistency_loss_t, entropy_loss, entropy_loss_t, supervised_loss_t,
    total_loss_t, unsupervised_loss, unsupervised_loss_t, ProbBatch,
};
use lbq::network::{build_mlp, model_fingerprint, DomainTag, Layer, Model};
use lbq::pipeline::{
    eval_domain_for, evaluate, phase_adapt, phase_finetune, phase_gen_data, phase_select, run_all,
    RunConfig, ORACLE_JSON,
};
use lbq::scoring::{entropy_from_probs, stable_softmax, ScoreTable, ScorerKind};

// ── Shared helpers ──

/// One random probability row with entries kept well above the clamp floor.
fn simplex_row(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..c).map(|_| rng.gen_range(1e-6..1.0)).collect();
    let sum: f64 = row.iter().sum();
    for v in row.iter_mut() {
        *v /= sum;
    }
    row
}

fn simplex_tensor(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Tensor {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| simplex_row(rng, c)).collect();
    Tensor::from_rows(&rows).unwrap()
}

fn random_table(rng: &mut ChaCha8Rng, scores: Vec<f64>) -> ScoreTable {
    // Non-contiguous ids in shuffled insertion order exercise the sorting.
    let mut pairs: Vec<(u64, f64)> = scores
        .into_iter()
        .enumerate()
        .map(|(i, s)| (10 + 3 * i as u64, s))
        .collect();
    for i in (1..pairs.len()).rev() {
        pairs.swap(i, rng.gen_range(0..=i));
    }
    ScoreTable::from_pairs(pairs, ScorerKind::Entropy, "test".into(), None).unwrap()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

// ── 1: the unsupervised loss decomposes exactly ──

#[test]
fn c01_entropy_plus_consistency_equals_unsupervised() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut max_dev = 0.0f64;
    for _ in 0..10_000 {
        let c = rng.gen_range(2..=20);
        let n = rng.gen_range(1..=64);
        let p = ProbBatch::new(simplex_tensor(&mut rng, n, c), None).unwrap();
        let q = ProbBatch::new(simplex_tensor(&mut rng, n, c), None).unwrap();
        let e = entropy_loss(&p).unwrap();
        let kl = consistency_loss(&p, &q).unwrap();
        let u = unsupervised_loss(&p, &q).unwrap();
        let dev = (e + kl - u).abs();
        assert!(dev <= 1e-12, "identity broke: |{e} + {kl} - {u}| = {dev}");
        max_dev = max_dev.max(dev);
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 5.0, "identity sweep took {secs:.2}s, budget is 5s");
    println!(
        "criterion 01: PASS — entropy + consistency == unsupervised on 10000 random batches \
         (max deviation {max_dev:.2e}, {secs:.2}s)"
    );
}

// ── 2: analytic gradients match finite differences ──

/// The five loss compositions under test, cycled across instances.
#[derive(Clone, Copy)]
enum LossKind {
    Supervised,
    Entropy,
    Consistency,
    Unsupervised,
    Total,
}

struct GradCase {
    model: Model,
    x_src: Tensor,
    y_src: Vec<usize>,
    x_tgt: Tensor,
    x_tgt_perturbed: Tensor,
    kind: LossKind,
}

fn loss_on_tape(case: &GradCase, model: &mut Model, tape: &mut Tape) -> (Var, BoundParams) {
    let bound = model.bind(tape).unwrap();
    let loss = match case.kind {
        LossKind::Supervised => {
            let p = model.forward_train(tape, &bound, &case.x_src, DomainTag::Source).unwrap();
            supervised_loss_t(tape, p, &case.y_src).unwrap()
        }
        LossKind::Entropy => {
            let p = model.forward_train(tape, &bound, &case.x_tgt, DomainTag::Target).unwrap();
            entropy_loss_t(tape, p).unwrap()
        }
        LossKind::Consistency => {
            let p = model.forward_train(tape, &bound, &case.x_tgt, DomainTag::Target).unwrap();
            let q = model
                .forward_train(tape, &bound, &case.x_tgt_perturbed, DomainTag::TargetPerturbed)
                .unwrap();
            consistency_loss_t(tape, p, q).unwrap()
        }
        LossKind::Unsupervised => {
            let p = model.forward_train(tape, &bound, &case.x_tgt, DomainTag::Target).unwrap();
            let q = model
                .forward_train(tape, &bound, &case.x_tgt_perturbed, DomainTag::TargetPerturbed)
                .unwrap();
            unsupervised_loss_t(tape, p, q).unwrap()
        }
        LossKind::Total => {
            let ps = model.forward_train(tape, &bound, &case.x_src, DomainTag::Source).unwrap();
            let ls = supervised_loss_t(tape, ps, &case.y_src).unwrap();
            let p = model.forward_train(tape, &bound, &case.x_tgt, DomainTag::Target).unwrap();
            let q = model
                .forward_train(tape, &bound, &case.x_tgt_perturbed, DomainTag::TargetPerturbed)
                .unwrap();
            let lu = unsupervised_loss_t(tape, p, q).unwrap();
            total_loss_t(tape, ls, lu, 0.7).unwrap()
        }
    };
    (loss, bound)
}

fn loss_value(case: &GradCase, nudge: Option<(usize, usize, f64)>) -> f64 {
    let mut model = case.model.clone();
    if let Some((p, j, delta)) = nudge {
        model.params[p].data[j] += delta;
    }
    let mut tape = Tape::new();
    let (loss, _) = loss_on_tape(case, &mut model, &mut tape);
    tape.value(loss).data()[0]
}

#[test]
fn c02_gradients_match_central_finite_differences() {
    let start = Instant::now();
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut max_rel = 0.0f64;
    let kinds = [
        LossKind::Supervised,
        LossKind::Entropy,
        LossKind::Consistency,
        LossKind::Unsupervised,
        LossKind::Total,
    ];

    for instance in 0..100u64 {
        let model = build_mlp(4, &[5, 4], 3, 7_000 + instance).unwrap();
        // Every layer kind must be present: dense, batch norm, relu, softmax.
        for probe in [
            |l: &Layer| matches!(l, Layer::Dense { .. }),
            |l: &Layer| matches!(l, Layer::DomainBatchNorm { .. }),
            |l: &Layer| matches!(l, Layer::Relu),
            |l: &Layer| matches!(l, Layer::SoftmaxHead),
        ] {
            assert!(model.layers.iter().any(probe), "a layer kind is missing from the model");
        }
        let n = 6;
        let draw = |rng: &mut ChaCha8Rng| -> Tensor {
            let rows: Vec<Vec<f64>> =
                (0..n).map(|_| (0..4).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect();
            Tensor::from_rows(&rows).unwrap()
        };
        let case = GradCase {
            x_src: draw(&mut rng),
            y_src: (0..n).map(|_| rng.gen_range(0..3)).collect(),
            x_tgt: draw(&mut rng),
            x_tgt_perturbed: draw(&mut rng),
            kind: kinds[(instance % 5) as usize],
            model,
        };

        // Analytic pass.
        let mut m = case.model.clone();
        let mut tape = Tape::new();
        let (loss, bound) = loss_on_tape(&case, &mut m, &mut tape);
        tape.backward(loss).unwrap();
        let grads: Vec<Option<Vec<f64>>> = (0..bound.len())
            .map(|i| tape.grad(bound.var(i)).map(<[f64]>::to_vec))
            .collect();

        for (pi, param) in case.model.params.iter().enumerate() {
            let g = grads[pi].as_deref();
            for j in 0..param.data.len() {
                let a = g.map_or(0.0, |v| v[j]);
                let plus = loss_value(&case, Some((pi, j, h)));
                let minus = loss_value(&case, Some((pi, j, -h)));
                let fd = (plus - minus) / (2.0 * h);
                let denom = a.abs().max(fd.abs()).max(1e-6);
                let rel = (a - fd).abs() / denom;
                assert!(
                    rel < 1e-4,
                    "instance {instance}, {}[{j}]: analytic {a} vs finite difference {fd} \
                     (rel {rel:.2e})",
                    param.name
                );
                max_rel = max_rel.max(rel);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 60.0, "gradient sweep took {secs:.2}s, budget is 60s");
    println!(
        "criterion 02: PASS — analytic gradients match central differences on 100 instances, \
         all layer kinds and all five losses (max rel {max_rel:.2e}, {secs:.2}s)"
    );
}

// ── 3: the uniform selection equals its naive reference ──

#[test]
fn c03_uniform_selection_matches_the_reference_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for case in 0..500usize {
        let m = rng.gen_range(1..=200);
        let k = match case % 4 {
            0 => 1,                              // smallest budget
            1 => m,                              // full budget
            _ => rng.gen_range(1..=m.min(50)),   // the common range
        };
        let scores: Vec<f64> = match case % 5 {
            // Continuous, heavy ties, coarse grid, degenerate, mixed.
            0 => (0..m).map(|_| rng.gen_range(0.0..3.0)).collect(),
            1 => (0..m).map(|_| (rng.gen_range(0..4) as f64) * 0.5).collect(),
            2 => (0..m).map(|_| (rng.gen_range(0..20) as f64) / 8.0).collect(),
            3 => vec![1.25; m],
            _ => (0..m)
                .map(|_| if rng.gen_bool(0.3) { 0.75 } else { rng.gen_range(0.0..2.0) })
                .collect(),
        };
        let table = random_table(&mut rng, scores);
        let fast = select_uniform(&table, k, false).unwrap();
        let slow = reference_uniform_oracle(&table, k, false).unwrap();
        assert_eq!(fast.ids, slow.ids, "case {case}: m={m} k={k}");
        assert_eq!(fast.scores, slow.scores, "case {case}: m={m} k={k}");
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 10.0, "differential sweep took {secs:.2}s, budget is 10s");
    println!(
        "criterion 03: PASS — select_uniform equals the naive reference on 500 random tables \
         including ties, flat tables, k=1 and k=m ({secs:.2}s)"
    );
}

// ── 4: samplers are bit-stable; the uniform sampler is affine-invariant ──

#[test]
fn c04_sampler_determinism_and_score_affine_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for case in 0..200usize {
        let m = rng.gen_range(2..=150);
        let k = rng.gen_range(1..=m);
        // Dyadic scores in [8, 24]: translations and power-of-two scalings
        // below are all exact in binary floating point, so the invariance
        // is tested without rounding noise.
        let scores: Vec<f64> = (0..m).map(|_| 8.0 + (rng.gen_range(0..=4096) as f64) / 256.0).collect();
        let table = random_table(&mut rng, scores);

        let uniform = select_uniform(&table, k, false).unwrap();
        assert_eq!(uniform, select_uniform(&table, k, false).unwrap(), "uniform not bit-stable");
        let top = select_toprank(&table, k).unwrap();
        assert_eq!(top, select_toprank(&table, k).unwrap(), "toprank not bit-stable");
        let min = select_minrank(&table, k).unwrap();
        assert_eq!(min, select_minrank(&table, k).unwrap(), "minrank not bit-stable");

        for (a, c) in [(1.0, 3.5), (1.0, -6.5), (2.0, 0.0), (0.5, 1.25), (1024.0, -2.0)] {
            let moved: Vec<(u64, f64)> =
                table.entries().iter().map(|&(id, s)| (id, s * a + c)).collect();
            let moved =
                ScoreTable::from_pairs(moved, ScorerKind::Entropy, "test".into(), None).unwrap();
            let sel = select_uniform(&moved, k, false).unwrap();
            assert_eq!(
                sel.ids, uniform.ids,
                "case {case}: selection changed under score -> score * {a} + {c}"
            );
        }
    }
    println!(
        "criterion 04: PASS — uniform/toprank/minrank are bit-stable across calls and the \
         uniform selection is invariant to score translation and positive scaling on 200 tables"
    );
}

// ── 5: per-domain statistics never bleed across branches ──

fn bn_stats(model: &Model) -> Vec<(&[Vec<f64>; 3], &[Vec<f64>; 3])> {
    model
        .layers
        .iter()
        .filter_map(|l| match l {
            Layer::DomainBatchNorm { state, .. } => {
                Some((&state.running_mean, &state.running_var))
            }
            _ => None,
        })
        .collect()
}

#[test]
fn c05_domain_statistics_isolation_and_pure_eval() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let fresh = || build_mlp(5, &[8, 6], 3, 99).unwrap();

    // 1000 training forwards under random domain tags.
    let mut live = fresh();
    let mut history: Vec<(Tensor, DomainTag)> = Vec::with_capacity(1000);
    for _ in 0..1000 {
        let n = rng.gen_range(2..=16);
        let rows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let x = Tensor::from_rows(&rows).unwrap();
        let tag = DomainTag::ALL[rng.gen_range(0..3)];
        let mut tape = Tape::new();
        let bound = live.bind(&mut tape).unwrap();
        live.forward_train(&mut tape, &bound, &x, tag).unwrap();
        history.push((x, tag));
    }

    // Replaying only one domain's forwards reproduces that branch bitwise.
    for &tag in &DomainTag::ALL {
        let mut replay = fresh();
        for (x, t) in history.iter().filter(|(_, t)| *t == tag) {
            let mut tape = Tape::new();
            let bound = replay.bind(&mut tape).unwrap();
            replay.forward_train(&mut tape, &bound, x, *t).unwrap();
        }
        let d = tag.index();
        for (li, ((lm, lv), (rm, rv))) in
            bn_stats(&live).into_iter().zip(bn_stats(&replay)).enumerate()
        {
            assert_eq!(lm[d], rm[d], "layer {li} {tag:?}: running mean differs from replay");
            assert_eq!(lv[d], rv[d], "layer {li} {tag:?}: running variance differs from replay");
        }
    }

    // Eval-mode forwards leave the whole model untouched.
    let before = model_fingerprint(&live).unwrap();
    for _ in 0..50 {
        let rows: Vec<Vec<f64>> =
            (0..8).map(|_| (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let x = Tensor::from_rows(&rows).unwrap();
        for &tag in &DomainTag::ALL {
            live.predict(&x, tag).unwrap();
        }
    }
    assert_eq!(before, model_fingerprint(&live).unwrap(), "eval forwards mutated the model");

    println!(
        "criterion 05: PASS — after 1000 randomly tagged training forwards every domain's \
         running statistics equal a per-domain replay bitwise, and eval mutates nothing"
    );
}

// ── 6: entropy scores stay inside [0, ln C] at any logit magnitude ──

#[test]
fn c06_entropy_bounds_hold_for_extreme_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for case in 0..100_000usize {
        let c = rng.gen_range(2..=20);
        let logits: Vec<f64> = match case % 5 {
            0 => (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            1 => (0..c).map(|_| rng.gen_range(-10.0..10.0)).collect(),
            2 => (0..c).map(|_| rng.gen_range(-1e3..1e3)).collect(),
            3 => vec![rng.gen_range(-1e3..1e3); c], // all equal: maximum entropy
            _ => (0..c)
                .map(|i| if i == 0 { 1e3 } else { -1e3 }) // saturated: zero entropy
                .collect(),
        };
        let probs = stable_softmax(&logits);
        let e = entropy_from_probs(&probs, c);
        let cap = (c as f64).ln();
        assert!(
            e.is_finite() && (0.0..=cap).contains(&e),
            "case {case}: entropy {e} outside [0, {cap}] for C={c} logits {logits:?}"
        );
    }
    println!(
        "criterion 06: PASS — entropy of 100000 softmaxed logit vectors (magnitudes up to 1e3) \
         always lands in [0, ln C]"
    );
}

// ── 7: consistency training beats source-only on the shifted benchmark ──

#[test]
fn c07_adaptation_beats_source_only_by_five_points() {
    let start = Instant::now();
    let mut adapted = Vec::new();
    let mut source_only = Vec::new();
    for seed in 0..5u64 {
        for (lambda, out) in [(1.0, &mut adapted), (0.0, &mut source_only)] {
            let cfg = RunConfig { seed, lambda, ..RunConfig::default() };
            let dir = tempfile::tempdir().unwrap();
            let (_, _, target_test, _) = phase_gen_data(&cfg, dir.path()).unwrap();
            let (model, _) = phase_adapt(&cfg, dir.path()).unwrap();
            let acc =
                evaluate(&model, &target_test, eval_domain_for(&model, target_test.role)).unwrap();
            out.push(acc);
        }
    }
    let (ma, ms) = (mean(&adapted), mean(&source_only));
    let gap = ma - ms;
    assert!(
        gap >= 0.05,
        "adapted mean {ma:.4} vs source-only mean {ms:.4}: gap {:.2} points < 5",
        gap * 100.0
    );
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 600.0, "benchmark took {secs:.0}s, budget is 600s");
    println!(
        "criterion 07: PASS — over 5 paired seeds, consistency training reaches {:.2}% vs \
         {:.2}% source-only on the target test split (gap {:.2} points, {secs:.0}s)",
        ma * 100.0,
        ms * 100.0,
        gap * 100.0
    );
}

// ── 8: uniform-over-entropy budgets beat random ones after fine-tuning ──

#[test]
fn c08_uniform_entropy_budget_beats_random_and_finetuning_never_hurts() {
    let start = Instant::now();
    let mut uniform_accs = Vec::new();
    let mut random_accs = Vec::new();
    for seed in 0..10u64 {
        let base = RunConfig { seed, ..RunConfig::default() };
        let dir = tempfile::tempdir().unwrap();
        let (_, _, target_test, _) = phase_gen_data(&base, dir.path()).unwrap();
        let (uda, _) = phase_adapt(&base, dir.path()).unwrap();
        let uda_acc =
            evaluate(&uda, &target_test, eval_domain_for(&uda, target_test.role)).unwrap();

        for sampler in [lbq::budget::Strategy::Uniform, lbq::budget::Strategy::Random] {
            let cfg = RunConfig { sampler, ..base.clone() };
            phase_select(&cfg, dir.path()).unwrap();
            let (ft, _) = phase_finetune(&cfg, dir.path()).unwrap();
            let acc = evaluate(&ft, &target_test, eval_domain_for(&ft, target_test.role)).unwrap();
            assert!(
                acc >= uda_acc - 0.005,
                "seed {seed} {sampler}: fine-tuned {acc:.4} fell more than 0.5 points below \
                 the adapted model's {uda_acc:.4}"
            );
            match sampler {
                lbq::budget::Strategy::Uniform => uniform_accs.push(acc),
                _ => random_accs.push(acc),
            }
        }
    }
    let (mu, mr) = (mean(&uniform_accs), mean(&random_accs));
    assert!(
        mu >= mr,
        "uniform-over-entropy mean {mu:.4} fell below the random baseline {mr:.4}"
    );
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 1800.0, "benchmark took {secs:.0}s, budget is 1800s");
    println!(
        "criterion 08: PASS — 10%-budget fine-tuning: uniform-over-entropy {:.2}% >= random \
         {:.2}% in the mean over 10 paired seeds, and no run lost more than 0.5 points to \
         fine-tuning ({secs:.0}s)",
        mu * 100.0,
        mr * 100.0
    );
}

// ── 9: the oracle bill equals the configured budget exactly ──

#[test]
fn c09_run_all_spends_exactly_the_budgeted_queries() {
    for (fraction, expect) in [(0.13, 15usize), (1.0, 120usize)] {
        let cfg = RunConfig {
            synth_n_per_class: 50, // 120-sample target training split
            hidden_dims: vec![16],
            epochs_uda: 6,
            epochs_finetune: 4,
            uda_schedule: vec![],
            finetune_schedule: vec![],
            consistency_copies: 2,
            budget_fraction: fraction,
            ..RunConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let record = run_all(&cfg, dir.path()).unwrap();
        assert_eq!(cfg.budget_k(120), expect);
        assert_eq!(record.oracle_queries, expect, "fraction {fraction}");
        let oracle = lbq::data::read_oracle(&dir.path().join(ORACLE_JSON)).unwrap();
        assert_eq!(oracle.query_count(), expect, "fraction {fraction}: persisted log");
        let mut logged: Vec<u64> = oracle.query_log().to_vec();
        logged.sort_unstable();
        logged.dedup();
        assert_eq!(logged.len(), expect, "fraction {fraction}: every query was distinct");
    }
    println!(
        "criterion 09: PASS — full runs at fractions 0.13 and 1.0 of a 120-sample pool bill \
         exactly 15 and 120 oracle queries"
    );
}

// ── 10: the diagnostic curve and histogram follow their definitions ──

#[test]
fn c10_curve_matches_brute_force_and_toprank_mass_sits_at_the_top() {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);

    // The prefix curve equals an O(n²) recomputation, exactly.
    for case in 0..50usize {
        let c = rng.gen_range(2..=6);
        let n = rng.gen_range(1..=120);
        let mut rows: Vec<Vec<f64>> = (0..n).map(|_| simplex_row(&mut rng, c)).collect();
        // Duplicated rows force entropy ties; the id must break them.
        if n >= 2 && case % 3 == 0 {
            let dup = rows[0].clone();
            rows[n - 1] = dup;
        }
        let ids: Vec<u64> = (0..n as u64).map(|i| 1000 - 2 * i).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let probs = Tensor::from_rows(&rows).unwrap();
        let curve = curve_from_predictions(&ids, &probs, &labels, "fp".into()).unwrap();

        // Brute force: sort (entropy, id) ascending, then recount every
        // prefix from scratch.
        let mut order: Vec<usize> = (0..n).collect();
        let ent: Vec<f64> = rows.iter().map(|r| entropy_from_probs(r, c)).collect();
        order.sort_by(|&i, &j| ent[i].total_cmp(&ent[j]).then_with(|| ids[i].cmp(&ids[j])));
        let hit: Vec<bool> = (0..n)
            .map(|i| {
                let row = &rows[i];
                let mut best = 0;
                for (ci, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = ci;
                    }
                }
                best == labels[i]
            })
            .collect();
        assert_eq!(curve.points.len(), n);
        for (prefix, point) in curve.points.iter().enumerate() {
            let size = prefix + 1;
            let correct = order[..size].iter().filter(|&&i| hit[i]).count();
            assert_eq!(point.prefix_size, size);
            assert_eq!(point.entropy, ent[order[prefix]], "case {case} prefix {size}");
            assert_eq!(
                point.accuracy,
                correct as f64 / size as f64,
                "case {case} prefix {size}: accuracy differs from brute force"
            );
        }
    }

    // Histogram: counts sum to k; a toprank selection leaves every bin
    // below its k-th largest score empty.
    for _ in 0..20 {
        let m = rng.gen_range(60..=300);
        let k = rng.gen_range(1..=m / 3);
        let bins = rng.gen_range(1..=25);
        let scores: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..5.0)).collect();
        let table = random_table(&mut rng, scores);

        for sel in [
            select_uniform(&table, k, false).unwrap(),
            select_toprank(&table, k).unwrap(),
            select_minrank(&table, k).unwrap(),
        ] {
            let hist = selection_histogram(&table, &sel, bins).unwrap();
            assert_eq!(hist.counts.iter().sum::<usize>(), k, "histogram mass must be k");
        }

        let top = select_toprank(&table, k).unwrap();
        let hist = selection_histogram(&table, &top, bins).unwrap();
        let kth = top.scores.iter().copied().fold(f64::INFINITY, f64::min);
        let all: Vec<f64> = table.entries().iter().map(|&(_, s)| s).collect();
        let (lo, hi) = (
            all.iter().copied().fold(f64::INFINITY, f64::min),
            all.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        );
        let kth_bin = (((kth - lo) / (hi - lo) * bins as f64).floor() as usize).min(bins - 1);
        assert!(
            hist.counts[..kth_bin].iter().all(|&c| c == 0),
            "toprank selection put mass below its k-th largest score"
        );
    }

    println!(
        "criterion 10: PASS — the prefix curve equals brute-force recomputation on 50 random \
         prediction sets, histogram mass always sums to k, and toprank mass never falls below \
         the k-th largest score"
    );
}

// ── 11: identical runs produce identical bytes ──

#[test]
fn c11_two_full_runs_are_byte_identical() {
    let cfg = RunConfig {
        synth_n_per_class: 60,
        hidden_dims: vec![16, 16],
        epochs_uda: 10,
        epochs_finetune: 6,
        uda_schedule: vec![],
        finetune_schedule: vec![],
        consistency_copies: 2,
        ..RunConfig::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_all(&cfg, a.path()).unwrap();
    run_all(&cfg, b.path()).unwrap();

    let mut names: Vec<String> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.len() >= 17, "expected the full artifact set, found {names:?}");
    let mut compared = 0;
    for name in &names {
        if name == "timings.json" {
            continue; // wall-clock durations are the one legitimate difference
        }
        let left = std::fs::read(a.path().join(name)).unwrap();
        let right = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(left, right, "{name} differs between identical runs");
        compared += 1;
    }
    println!(
        "criterion 11: PASS — two identically configured full runs agree byte-for-byte on all \
         {compared} result artifacts (timings excluded)"
    );
}
