//! Command-line driver for the low-budget label-query pipeline.
//!
//! Every subcommand resolves its configuration the same way: built-in
//! defaults, overlaid by an optional TOML file (`--config`), overlaid by
//! individual flags. The resolved snapshot is written into the output
//! directory before any work starts, so an artifact directory always says
//! exactly what produced it.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 missing input
//! file, 4 training divergence, 5 any other failure.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use lbq::error::{ConfigIssue, Error};
use lbq::pipeline::{
    self, EvalSplit, RunConfig, DEFAULT_HIGH_QUANTILE, DEFAULT_HIST_BINS, DEFAULT_LOW_QUANTILE,
    MODEL_UDA_JSON,
};

#[derive(Parser)]
#[command(
    name = "lbq",
    version,
    about = "Low-budget label-query pipeline: adapt on unlabeled data, spend a small label budget well, fine-tune",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate (or load) the two-domain benchmark files
    GenData(Common),
    /// Train the domain-adapted classifier on source + unlabeled target data
    Adapt(Common),
    /// Score the target pool and draw the label budget from it
    Select(Common),
    /// Buy the selected labels from the oracle and fine-tune on them
    Finetune(Common),
    /// Accuracy of a stored checkpoint on one benchmark split
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file name inside the output directory
        #[arg(long, default_value = MODEL_UDA_JSON)]
        checkpoint: String,
        /// Benchmark split: source or target-test
        #[arg(long, default_value = "target-test")]
        split: String,
    },
    /// Entropy-accuracy curves, selection histogram, and region comparison
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to draw a curve for; repeat the flag to compare several
        #[arg(long = "checkpoint")]
        checkpoints: Vec<String>,
        /// Equal-width score bins of the selection histogram
        #[arg(long, default_value_t = DEFAULT_HIST_BINS)]
        hist_bins: usize,
        /// Low-confidence cut as a fraction of the test set
        #[arg(long, default_value_t = DEFAULT_LOW_QUANTILE)]
        low_quantile: f64,
        /// High-uncertainty cut as a fraction of the test set
        #[arg(long, default_value_t = DEFAULT_HIGH_QUANTILE)]
        high_quantile: f64,
    },
    /// The whole pipeline — data, adapt, select, fine-tune, analyze — in one run
    RunAll(Common),
    /// Cross every adaptation mode with every sampler/scorer pair
    RunMatrix(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config file; its keys override the defaults, flags override both
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory (default: $LBQ_OUT_DIR, then ./out)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

/// One optional flag per scalar config key. Learning-rate schedules are
/// structured values; set those in the TOML file.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    synth_classes: Option<usize>,
    #[arg(long)]
    synth_dim: Option<usize>,
    #[arg(long)]
    synth_n_per_class: Option<usize>,
    #[arg(long)]
    synth_rotation_deg: Option<f64>,
    #[arg(long)]
    synth_noise: Option<f64>,
    /// Comma-separated hidden layer widths, e.g. 64,64
    #[arg(long, value_delimiter = ',')]
    hidden_dims: Option<Vec<usize>>,
    /// source_only, entropy, or consistency
    #[arg(long)]
    uda_mode: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs_uda: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_uda: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// adam or sgd
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    momentum: Option<f64>,
    /// images_flip, images_noflip, vectors, or identity
    #[arg(long)]
    perturb_profile: Option<String>,
    #[arg(long)]
    consistency_copies: Option<usize>,
    /// entropy or consistency
    #[arg(long)]
    scorer: Option<String>,
    /// uniform, toprank, minrank, or random
    #[arg(long)]
    sampler: Option<String>,
    #[arg(long)]
    budget_fraction: Option<f64>,
    /// true keeps the literal bin formula (maximum scores fall outside the
    /// visited bins); false clamps them into the last bin
    #[arg(long, value_name = "BOOL")]
    literal_bins: Option<bool>,
    #[arg(long)]
    epochs_finetune: Option<usize>,
    #[arg(long)]
    lr_finetune: Option<f64>,
    #[arg(long)]
    n_repeats: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
}

/// Wraps a value error as a configuration issue on `field`, so bad flag
/// values exit with the configuration code and name the key.
fn config_issue(field: &str, e: Error) -> Error {
    Error::Config(vec![ConfigIssue { field: field.into(), message: e.to_string() }])
}

fn resolve(common: &Common) -> Result<(RunConfig, PathBuf), Error> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_toml_file(path)?,
        None => RunConfig::default(),
    };
    let o = &common.overrides;
    macro_rules! take {
        ($field:ident) => {
            if let Some(v) = o.$field.clone() {
                cfg.$field = v;
            }
        };
    }
    take!(seed);
    take!(synth_classes);
    take!(synth_dim);
    take!(synth_n_per_class);
    take!(synth_rotation_deg);
    take!(synth_noise);
    take!(hidden_dims);
    take!(lambda);
    take!(epochs_uda);
    take!(batch_size);
    take!(lr_uda);
    take!(weight_decay);
    take!(momentum);
    take!(perturb_profile);
    take!(consistency_copies);
    take!(budget_fraction);
    take!(literal_bins);
    take!(epochs_finetune);
    take!(lr_finetune);
    take!(n_repeats);
    take!(workers);
    if let Some(s) = &o.uda_mode {
        cfg.uda_mode = s.parse().map_err(|e| config_issue("uda_mode", e))?;
    }
    if let Some(s) = &o.optimizer {
        cfg.optimizer = s.parse().map_err(|e| config_issue("optimizer", e))?;
    }
    if let Some(s) = &o.scorer {
        cfg.scorer = s.parse().map_err(|e| config_issue("scorer", e))?;
    }
    if let Some(s) = &o.sampler {
        cfg.sampler = s.parse().map_err(|e| config_issue("sampler", e))?;
    }

    let out = common
        .out
        .clone()
        .or_else(|| std::env::var_os("LBQ_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.cmd {
        Cmd::GenData(common) => {
            let (cfg, out) = resolve(&common)?;
            let (source, train, test, _) = pipeline::phase_gen_data(&cfg, &out)?;
            println!(
                "benchmark ready in {}: {} source, {} target-train (unlabeled), {} target-test",
                out.display(),
                source.len(),
                train.len(),
                test.len()
            );
        }
        Cmd::Adapt(common) => {
            let (cfg, out) = resolve(&common)?;
            let (_, rec) = pipeline::phase_adapt(&cfg, &out)?;
            let last = rec.epochs.last();
            println!(
                "adapted for {} epochs ({} steps); final losses: supervised {}, unsupervised {}",
                rec.epochs.len(),
                rec.steps,
                last.map_or(f64::NAN, |e| e.l_s),
                last.map_or(f64::NAN, |e| e.l_u),
            );
            if let Some(acc) = rec.per_epoch_eval.last() {
                println!("target-test accuracy {acc}");
            }
        }
        Cmd::Select(common) => {
            let (cfg, out) = resolve(&common)?;
            let (table, selection) = pipeline::phase_select(&cfg, &out)?;
            println!(
                "scored {} samples with the {} scorer; {} sampler selected k = {}",
                table.len(),
                cfg.scorer,
                selection.strategy,
                selection.k
            );
        }
        Cmd::Finetune(common) => {
            let (cfg, out) = resolve(&common)?;
            let (_, rec) = pipeline::phase_finetune(&cfg, &out)?;
            println!("fine-tuned for {} epochs ({} steps)", rec.epochs.len(), rec.steps);
            if let Some(acc) = rec.per_epoch_eval.last() {
                println!("target-test accuracy {acc}");
            }
        }
        Cmd::Evaluate { common, checkpoint, split } => {
            let (cfg, out) = resolve(&common)?;
            let split: EvalSplit = split.parse().map_err(|e| config_issue("split", e))?;
            let acc = pipeline::phase_evaluate(&cfg, &out, &checkpoint, split)?;
            println!("accuracy {acc}");
        }
        Cmd::Analyze { common, checkpoints, hist_bins, low_quantile, high_quantile } => {
            let (cfg, out) = resolve(&common)?;
            let checkpoints = if checkpoints.is_empty() {
                vec![MODEL_UDA_JSON.to_string()]
            } else {
                checkpoints
            };
            pipeline::phase_analyze(&cfg, &out, &checkpoints, hist_bins, low_quantile, high_quantile)?;
            println!(
                "wrote {}, {}, {} for {} checkpoint(s)",
                pipeline::CURVE_CSV,
                pipeline::HISTOGRAM_CSV,
                pipeline::REGIONS_CSV,
                checkpoints.len()
            );
        }
        Cmd::RunAll(common) => {
            let (cfg, out) = resolve(&common)?;
            let record = pipeline::run_all(&cfg, &out)?;
            println!("run complete; artifacts in {}", out.display());
            for (name, value) in &record.accuracies {
                println!("{name} {value}");
            }
            println!("oracle_queries {}", record.oracle_queries);
        }
        Cmd::RunMatrix(common) => {
            let (cfg, out) = resolve(&common)?;
            let record = pipeline::run_matrix(&cfg, &out)?;
            println!("matrix complete; artifacts in {}", out.display());
            println!("mode,sampler,scorer,repeats,uda_accuracy,finetuned_mean,finetuned_std");
            for c in &record.cells {
                println!(
                    "{},{},{},{},{},{},{}",
                    c.mode,
                    c.sampler,
                    c.scorer,
                    c.finetuned.len(),
                    c.uda_accuracy,
                    c.finetuned_mean,
                    c.finetuned_std.map(|s| s.to_string()).unwrap_or_default()
                );
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::MissingInput(_) | Error::Io(_) => 3,
        Error::Divergence { .. } => 4,
        _ => 5,
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
