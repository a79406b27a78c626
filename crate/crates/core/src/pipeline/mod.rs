//! End-to-end orchestration: the benchmark data store, the four pipeline
//! phases (adapt, select, fine-tune, analyze), the single-command run, and
//! the strategy-comparison matrix.
//!
//! Every phase reads its inputs from — and writes its outputs to — one
//! output directory, under fixed file names, so a run can be driven as one
//! call or split across separate invocations with identical results. All
//! artifacts are deterministic functions of the configuration; wall-clock
//! timings are quarantined in their own file so the rest of a rerun
//! compares byte-for-byte.

pub mod config;
pub mod record;
pub mod train;

pub use config::{OptimizerKind, RunConfig, UdaMode};
pub use record::{
    derive_seed, mean_std, EpochLosses, MatrixCell, MatrixRecord, PhaseRecord, RunRecord,
};
pub use train::{accuracy_from_predictions, eval_domain_for, evaluate, finetune, train_uda};

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::Serialize;

use crate::analysis::{
    compare_regions, entropy_accuracy_curve, selection_histogram, write_regions_csv,
    EntropyAccuracyCurve,
};
use crate::budget::{select, BudgetSelection, Strategy};
use crate::data::{
    gen_two_domain_gaussians, query_labels, read_dataset, read_oracle, write_dataset,
    write_oracle, Dataset, DomainShift, LabelOracle,
};
use crate::error::{Error, Result};
use crate::network::{build_mlp, load_checkpoint, model_fingerprint, save_checkpoint, Model};
use crate::scoring::{score_dataset, ScoreTable, ScorerKind};

// ── Artifact file names (all inside the output directory) ──

pub const RESOLVED_CONFIG_JSON: &str = "resolved_config.json";
pub const SOURCE_CSV: &str = "source.csv";
pub const TARGET_TRAIN_CSV: &str = "target_train.csv";
pub const TARGET_TEST_CSV: &str = "target_test.csv";
pub const ORACLE_JSON: &str = "oracle.json";
pub const MODEL_UDA_JSON: &str = "model_uda.json";
pub const UDA_RECORD_JSON: &str = "uda_record.json";
pub const SCORES_CSV: &str = "scores.csv";
pub const SELECTION_CSV: &str = "selection.csv";
pub const LABELED_POOL_CSV: &str = "labeled_pool.csv";
pub const MODEL_FINETUNED_JSON: &str = "model_finetuned.json";
pub const FINETUNE_RECORD_JSON: &str = "finetune_record.json";
pub const RUN_RECORD_JSON: &str = "run_record.json";
pub const RESULTS_CSV: &str = "results.csv";
pub const CURVE_CSV: &str = "curve.csv";
pub const HISTOGRAM_CSV: &str = "histogram.csv";
pub const REGIONS_CSV: &str = "regions.csv";
pub const TIMINGS_JSON: &str = "timings.json";
pub const MATRIX_CSV: &str = "matrix.csv";
pub const MATRIX_RECORD_JSON: &str = "matrix_record.json";

/// Histogram bins the analyze phase uses unless told otherwise.
pub const DEFAULT_HIST_BINS: usize = 20;
/// Confidence-region quantiles the analyze phase uses unless told otherwise.
pub const DEFAULT_LOW_QUANTILE: f64 = 0.25;
pub const DEFAULT_HIGH_QUANTILE: f64 = 0.75;

/// Which benchmark split an evaluation reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Source,
    TargetTest,
}

impl fmt::Display for EvalSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalSplit::Source => "source",
            EvalSplit::TargetTest => "target-test",
        })
    }
}

impl FromStr for EvalSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(EvalSplit::Source),
            "target-test" => Ok(EvalSplit::TargetTest),
            other => Err(Error::Contract(format!(
                "unknown split '{other}' (expected source or target-test)"
            ))),
        }
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Validates the config, creates the output directory, and snapshots the
/// fully resolved configuration before anything else runs.
fn prepare(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    write_json(cfg, &out.join(RESOLVED_CONFIG_JSON))
}

fn require(path: PathBuf, hint: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingInput(format!("{} — {hint}", path.display())))
    }
}

fn stem(name: &str) -> String {
    Path::new(name)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| name.to_string())
}

/// Loads the benchmark from the output directory, generating and persisting
/// it first if any piece is missing. Generation is a pure function of the
/// config, so a rerun in a fresh directory writes identical files.
pub fn ensure_data(cfg: &RunConfig, out: &Path) -> Result<(Dataset, Dataset, Dataset, LabelOracle)> {
    let source_p = out.join(SOURCE_CSV);
    let train_p = out.join(TARGET_TRAIN_CSV);
    let test_p = out.join(TARGET_TEST_CSV);
    let oracle_p = out.join(ORACLE_JSON);
    if source_p.exists() && train_p.exists() && test_p.exists() && oracle_p.exists() {
        return Ok((
            read_dataset(&source_p)?,
            read_dataset(&train_p)?,
            read_dataset(&test_p)?,
            read_oracle(&oracle_p)?,
        ));
    }
    let shift = DomainShift {
        rotation_deg: cfg.synth_rotation_deg,
        translation: Vec::new(),
        noise_scale: cfg.synth_noise,
    };
    let (source, train, test, oracle) = gen_two_domain_gaussians(
        cfg.synth_classes,
        cfg.synth_dim,
        cfg.synth_n_per_class,
        &shift,
        derive_seed(cfg.seed, "data"),
    )?;
    write_dataset(&source, &source_p)?;
    write_dataset(&train, &train_p)?;
    write_dataset(&test, &test_p)?;
    write_oracle(&oracle, &oracle_p)?;
    Ok((source, train, test, oracle))
}

/// Materializes the benchmark files (no training).
pub fn phase_gen_data(cfg: &RunConfig, out: &Path) -> Result<(Dataset, Dataset, Dataset, LabelOracle)> {
    prepare(cfg, out)?;
    ensure_data(cfg, out)
}

/// Builds a fresh classifier and adapts it on the benchmark, leaving
/// `model_uda.json` and its per-epoch record behind.
pub fn phase_adapt(cfg: &RunConfig, out: &Path) -> Result<(Model, PhaseRecord)> {
    prepare(cfg, out)?;
    let (source, target_train, target_test, _) = ensure_data(cfg, out)?;
    let mut model = build_mlp(
        source.shape.len(),
        &cfg.hidden_dims,
        source.class_count,
        derive_seed(cfg.seed, "init"),
    )?;
    let rec = train_uda(&mut model, &source, &target_train, Some(&target_test), cfg)?;
    save_checkpoint(&model, &out.join(MODEL_UDA_JSON))?;
    write_json(&rec, &out.join(UDA_RECORD_JSON))?;
    Ok((model, rec))
}

/// Scores the target training set with the adapted model and draws the
/// label budget, leaving `scores.csv` and `selection.csv` behind.
pub fn phase_select(cfg: &RunConfig, out: &Path) -> Result<(ScoreTable, BudgetSelection)> {
    prepare(cfg, out)?;
    let model = load_checkpoint(&require(out.join(MODEL_UDA_JSON), "run the adapt phase first")?)?;
    let target_train =
        read_dataset(&require(out.join(TARGET_TRAIN_CSV), "run the gen-data phase first")?)?;
    let table = score_dataset(
        &model,
        &target_train,
        cfg.scorer,
        &cfg.perturbation()?,
        cfg.consistency_copies,
        derive_seed(cfg.seed, "score"),
    )?;
    table.write_csv(&out.join(SCORES_CSV))?;
    let k = cfg.budget_k(target_train.len());
    let selection = select(
        &table,
        cfg.sampler,
        k,
        Some(derive_seed(cfg.seed, "sampler")),
        cfg.literal_bins,
    )?;
    selection.write_csv(&out.join(SELECTION_CSV))?;
    Ok((table, selection))
}

/// Buys the selected labels from the oracle and fine-tunes the adapted
/// model on them, leaving the labeled pool, the updated oracle (its query
/// log now reflects the spend), `model_finetuned.json`, and the fine-tuning
/// record behind.
pub fn phase_finetune(cfg: &RunConfig, out: &Path) -> Result<(Model, PhaseRecord)> {
    prepare(cfg, out)?;
    let mut model =
        load_checkpoint(&require(out.join(MODEL_UDA_JSON), "run the adapt phase first")?)?;
    let target_train =
        read_dataset(&require(out.join(TARGET_TRAIN_CSV), "run the gen-data phase first")?)?;
    let target_test =
        read_dataset(&require(out.join(TARGET_TEST_CSV), "run the gen-data phase first")?)?;
    let selection =
        BudgetSelection::read_csv(&require(out.join(SELECTION_CSV), "run the select phase first")?)?;
    let mut oracle = read_oracle(&require(out.join(ORACLE_JSON), "run the gen-data phase first")?)?;

    let pool = query_labels(&mut oracle, &target_train, &selection.ids)?;
    write_dataset(&pool, &out.join(LABELED_POOL_CSV))?;
    write_oracle(&oracle, &out.join(ORACLE_JSON))?;

    let rec = finetune(
        &mut model,
        &pool,
        Some(&target_train),
        Some(&target_test),
        cfg,
        derive_seed(cfg.seed, "finetune"),
    )?;
    save_checkpoint(&model, &out.join(MODEL_FINETUNED_JSON))?;
    write_json(&rec, &out.join(FINETUNE_RECORD_JSON))?;
    Ok((model, rec))
}

/// Accuracy of a stored checkpoint on one benchmark split, evaluated
/// through the statistics branch its training history calls for.
pub fn phase_evaluate(cfg: &RunConfig, out: &Path, checkpoint: &str, split: EvalSplit) -> Result<f64> {
    cfg.validate()?;
    let model = load_checkpoint(&require(out.join(checkpoint), "train a model first")?)?;
    let file = match split {
        EvalSplit::Source => SOURCE_CSV,
        EvalSplit::TargetTest => TARGET_TEST_CSV,
    };
    let data = read_dataset(&require(out.join(file), "run the gen-data phase first")?)?;
    evaluate(&model, &data, eval_domain_for(&model, data.role))
}

/// Post-hoc analysis over stored artifacts: an entropy-ordered accuracy
/// curve per checkpoint (the first one lands in `curve.csv`, the rest in
/// `curve_<stem>.csv`), a score histogram of the selection against the full
/// table, and a confidence-region comparison across all listed checkpoints.
pub fn phase_analyze(
    cfg: &RunConfig,
    out: &Path,
    checkpoints: &[String],
    hist_bins: usize,
    low_quantile: f64,
    high_quantile: f64,
) -> Result<()> {
    prepare(cfg, out)?;
    if checkpoints.is_empty() {
        return Err(Error::Contract("analyze needs at least one checkpoint".into()));
    }
    let target_test =
        read_dataset(&require(out.join(TARGET_TEST_CSV), "run the gen-data phase first")?)?;
    let table = ScoreTable::read_csv(&require(out.join(SCORES_CSV), "run the select phase first")?)?;
    let selection =
        BudgetSelection::read_csv(&require(out.join(SELECTION_CSV), "run the select phase first")?)?;

    selection_histogram(&table, &selection, hist_bins)?.write_csv(&out.join(HISTOGRAM_CSV))?;

    let mut curves: Vec<(String, EntropyAccuracyCurve)> = Vec::with_capacity(checkpoints.len());
    for (i, name) in checkpoints.iter().enumerate() {
        let model = load_checkpoint(&require(out.join(name), "train it first")?)?;
        let curve = entropy_accuracy_curve(&model, &target_test)?;
        let file = if i == 0 { CURVE_CSV.to_string() } else { format!("curve_{}.csv", stem(name)) };
        curve.write_csv(&out.join(file))?;
        curves.push((stem(name), curve));
    }
    let refs: Vec<(String, &EntropyAccuracyCurve)> =
        curves.iter().map(|(l, c)| (l.clone(), c)).collect();
    let rows = compare_regions(&refs, low_quantile, high_quantile)?;
    write_regions_csv(&rows, &out.join(REGIONS_CSV))
}

/// The whole pipeline as one call: data, adaptation, selection, label
/// purchase, fine-tuning, analysis, and a summary. Identical to running
/// the individual phases in order on the same directory.
pub fn run_all(cfg: &RunConfig, out: &Path) -> Result<RunRecord> {
    prepare(cfg, out)?;
    let t_total = Instant::now();
    let mut timings: BTreeMap<String, f64> = BTreeMap::new();
    let mut timed = |name: &str, t: Instant| {
        timings.insert(name.to_string(), t.elapsed().as_secs_f64());
    };

    let t = Instant::now();
    let (source, _, target_test, _) = ensure_data(cfg, out)?;
    timed("gen_data", t);

    let t = Instant::now();
    let (uda_model, uda_rec) = phase_adapt(cfg, out)?;
    timed("adapt", t);

    let t = Instant::now();
    let (_, selection) = phase_select(cfg, out)?;
    timed("select", t);

    let t = Instant::now();
    let (ft_model, ft_rec) = phase_finetune(cfg, out)?;
    timed("finetune", t);

    let t = Instant::now();
    phase_analyze(
        cfg,
        out,
        &[MODEL_UDA_JSON.to_string(), MODEL_FINETUNED_JSON.to_string()],
        DEFAULT_HIST_BINS,
        DEFAULT_LOW_QUANTILE,
        DEFAULT_HIGH_QUANTILE,
    )?;
    timed("analyze", t);

    let source_accuracy = evaluate(&uda_model, &source, eval_domain_for(&uda_model, source.role))?;
    let uda_accuracy =
        evaluate(&uda_model, &target_test, eval_domain_for(&uda_model, target_test.role))?;
    let finetuned_accuracy =
        evaluate(&ft_model, &target_test, eval_domain_for(&ft_model, target_test.role))?;
    // The oracle file now carries the query log phase_finetune left in it.
    let oracle_queries = read_oracle(&out.join(ORACLE_JSON))?.query_count();

    let results = format!(
        "metric,value\nbudget_k,{}\noracle_queries,{}\nsource_accuracy,{}\nuda_target_test,{}\nfinetuned_target_test,{}\n",
        selection.k, oracle_queries, source_accuracy, uda_accuracy, finetuned_accuracy
    );
    std::fs::write(out.join(RESULTS_CSV), results)?;

    let mut seed_lineage = vec![format!("data={}", derive_seed(cfg.seed, "data"))];
    seed_lineage.extend(uda_model.seed_lineage.iter().cloned());
    seed_lineage.push(format!("score={}", derive_seed(cfg.seed, "score")));
    seed_lineage.push(format!("sampler={}", derive_seed(cfg.seed, "sampler")));
    seed_lineage.push(format!("finetune={}", derive_seed(cfg.seed, "finetune")));

    let artifacts: BTreeMap<String, String> = [
        ("resolved_config", RESOLVED_CONFIG_JSON),
        ("source", SOURCE_CSV),
        ("target_train", TARGET_TRAIN_CSV),
        ("target_test", TARGET_TEST_CSV),
        ("oracle", ORACLE_JSON),
        ("model_uda", MODEL_UDA_JSON),
        ("uda_record", UDA_RECORD_JSON),
        ("scores", SCORES_CSV),
        ("selection", SELECTION_CSV),
        ("labeled_pool", LABELED_POOL_CSV),
        ("model_finetuned", MODEL_FINETUNED_JSON),
        ("finetune_record", FINETUNE_RECORD_JSON),
        ("results", RESULTS_CSV),
        ("curve", CURVE_CSV),
        ("curve_finetuned", "curve_model_finetuned.csv"),
        ("histogram", HISTOGRAM_CSV),
        ("regions", REGIONS_CSV),
        ("run_record", RUN_RECORD_JSON),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();

    let record = RunRecord {
        config: cfg.clone(),
        phases: vec![uda_rec, ft_rec],
        accuracies: BTreeMap::from([
            ("source".to_string(), source_accuracy),
            ("uda_target_test".to_string(), uda_accuracy),
            ("finetuned_target_test".to_string(), finetuned_accuracy),
        ]),
        artifacts,
        checkpoint_hashes: BTreeMap::from([
            ("model_uda".to_string(), model_fingerprint(&uda_model)?),
            ("model_finetuned".to_string(), model_fingerprint(&ft_model)?),
        ]),
        seed_lineage,
        oracle_queries,
        timings_ref: TIMINGS_JSON.to_string(),
    };
    write_json(&record, &out.join(RUN_RECORD_JSON))?;

    timed("total", t_total);
    write_json(&timings, &out.join(TIMINGS_JSON))?;
    Ok(record)
}

// ── Comparison matrix ──

/// Adaptation modes compared by the matrix, in row order.
pub const MATRIX_MODES: [UdaMode; 3] = [UdaMode::SourceOnly, UdaMode::Entropy, UdaMode::Consistency];

/// (sampler, scorer) pairs compared by the matrix, in column order.
pub const MATRIX_PAIRS: [(Strategy, ScorerKind); 5] = [
    (Strategy::Random, ScorerKind::Entropy),
    (Strategy::Toprank, ScorerKind::Entropy),
    (Strategy::Toprank, ScorerKind::Consistency),
    (Strategy::Uniform, ScorerKind::Consistency),
    (Strategy::Uniform, ScorerKind::Entropy),
];

fn write_matrix_csv(record: &MatrixRecord, path: &Path) -> Result<()> {
    let mut text =
        String::from("mode,sampler,scorer,repeats,uda_accuracy,finetuned_mean,finetuned_std\n");
    for c in &record.cells {
        let std = c.finetuned_std.map(|s| s.to_string()).unwrap_or_default();
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.mode,
            c.sampler,
            c.scorer,
            c.finetuned.len(),
            c.uda_accuracy,
            c.finetuned_mean,
            std
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Crosses every adaptation mode with every (sampler, scorer) pair on one
/// shared benchmark. Each mode's adapted model is trained once and reused
/// across its row. Cells whose selection is stochastic (a random sampler or
/// a perturbation-based scorer) repeat `n_repeats` times under per-repeat
/// seeds; deterministic cells run once. The fine-tuning batch seed is
/// shared by all cells so observed spread comes from the selection alone.
/// Cells are computed on `cfg.workers` threads; results are merged in a
/// fixed order, so the worker count never changes any artifact.
pub fn run_matrix(cfg: &RunConfig, out: &Path) -> Result<MatrixRecord> {
    prepare(cfg, out)?;
    let (source, target_train, target_test, oracle) = ensure_data(cfg, out)?;
    let perturbation = cfg.perturbation()?;
    let k = cfg.budget_k(target_train.len());
    let finetune_seed = derive_seed(cfg.seed, "finetune");

    let mut uda_models = Vec::with_capacity(MATRIX_MODES.len());
    for mode in MATRIX_MODES {
        let mode_cfg = RunConfig { uda_mode: mode, ..cfg.clone() };
        let mut model = build_mlp(
            source.shape.len(),
            &cfg.hidden_dims,
            source.class_count,
            derive_seed(cfg.seed, "init"),
        )?;
        train_uda(&mut model, &source, &target_train, None, &mode_cfg)?;
        uda_models.push(model);
    }

    let run_cell = |mode_idx: usize, pair_idx: usize| -> Result<MatrixCell> {
        let mode = MATRIX_MODES[mode_idx];
        let (sampler, scorer) = MATRIX_PAIRS[pair_idx];
        let model = &uda_models[mode_idx];
        let uda_accuracy =
            evaluate(model, &target_test, eval_domain_for(model, target_test.role))?;
        let stochastic = sampler == Strategy::Random || scorer == ScorerKind::Consistency;
        let repeats = if stochastic { cfg.n_repeats } else { 1 };
        let mut finetuned = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let tag = format!("{mode}:{sampler}:{scorer}:r{r}");
            let table = score_dataset(
                model,
                &target_train,
                scorer,
                &perturbation,
                cfg.consistency_copies,
                derive_seed(cfg.seed, &format!("score:{tag}")),
            )?;
            let sel = select(
                &table,
                sampler,
                k,
                Some(derive_seed(cfg.seed, &format!("sampler:{tag}"))),
                cfg.literal_bins,
            )?;
            let mut cell_oracle = oracle.clone();
            let pool = query_labels(&mut cell_oracle, &target_train, &sel.ids)?;
            let mut ft = model.clone();
            finetune(&mut ft, &pool, Some(&target_train), None, cfg, finetune_seed)?;
            finetuned.push(evaluate(&ft, &target_test, eval_domain_for(&ft, target_test.role))?);
        }
        let (finetuned_mean, finetuned_std) = mean_std(&finetuned);
        Ok(MatrixCell {
            mode: mode.to_string(),
            sampler: sampler.to_string(),
            scorer: scorer.to_string(),
            uda_accuracy,
            finetuned,
            finetuned_mean,
            finetuned_std,
        })
    };

    let jobs: Vec<(usize, usize)> = (0..MATRIX_MODES.len())
        .flat_map(|m| (0..MATRIX_PAIRS.len()).map(move |p| (m, p)))
        .collect();
    let slots: Vec<Mutex<Option<Result<MatrixCell>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..cfg.workers.min(jobs.len()) {
            s.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                if j >= jobs.len() {
                    break;
                }
                let (mode_idx, pair_idx) = jobs[j];
                let cell = run_cell(mode_idx, pair_idx);
                *slots[j].lock().expect("cell workers do not panic") = Some(cell);
            });
        }
    });

    let mut cells = Vec::with_capacity(jobs.len());
    for slot in slots {
        let cell = slot
            .into_inner()
            .expect("cell workers do not panic")
            .expect("every job index was claimed");
        cells.push(cell?);
    }

    let record = MatrixRecord { config: cfg.clone(), cells };
    write_matrix_csv(&record, &out.join(MATRIX_CSV))?;
    write_json(&record, &out.join(MATRIX_RECORD_JSON))?;
    Ok(record)
}
