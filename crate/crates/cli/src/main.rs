//! `eoscan` command-line interface.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data or schema
//! error, 4 numeric failure during training.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use eoscan::Error;

use config::ConfigArgs;

#[derive(Debug, Parser)]
#[command(name = "eoscan", version, about = "Whole-slide eosinophil and basal-zone biomarkers")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Lda,
    Svm,
    Mlp,
}

/// How to build a model spec from flags.
#[derive(Debug, Clone, clap::Args)]
pub struct ModelArgs {
    /// JSON model spec; overrides the other model flags.
    #[arg(long)]
    pub model_spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "lda")]
    pub kind: Kind,
    /// Route by PEC between two models of `--kind` using the configured delta.
    #[arg(long)]
    pub windowed: bool,
    /// MLP hidden layer sizes, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write full-slide `.eos.pgm` / `.bz.pgm` masks for an annotation.
    Rasterize {
        #[arg(long)]
        annotation: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Flip each mask pixel with this probability (simulated model error).
        #[arg(long)]
        flip_rate: Option<f64>,
        #[arg(long, default_value_t = 0)]
        flip_seed: u64,
    },
    /// Scan a slide and write score maps and its biomarker row.
    Scan {
        #[arg(long, conflicts_with_all = ["eos_mask", "bz_mask"])]
        annotation: Option<PathBuf>,
        #[arg(long, requires = "bz_mask")]
        eos_mask: Option<PathBuf>,
        #[arg(long, requires = "eos_mask")]
        bz_mask: Option<PathBuf>,
        /// Tissue mask PGM; otherwise annotated tissue polygons, else all tissue.
        #[arg(long)]
        tissue_mask: Option<PathBuf>,
        /// Slide id for mask inputs (annotations carry their own).
        #[arg(long)]
        slide_id: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Append the biomarker row to this cohort CSV.
        #[arg(long)]
        append_cohort: Option<PathBuf>,
    },
    /// Compare predicted masks with ground-truth masks.
    EvalSeg {
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate synthetic slides or cohorts.
    Synth {
        #[command(subcommand)]
        what: SynthCommand,
    },
    /// Train a classifier on a labeled cohort.
    Train {
        #[arg(long)]
        cohort: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict severity for every record of a cohort.
    Classify {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated-split evaluation plus ROC and KS summaries.
    Report {
        #[arg(long)]
        cohort: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// PEC-threshold baseline: accuracy per threshold and ROC.
    SweepBaseline {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate every MLP architecture of the size menu (slow, opt-in).
    GridMlp {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Only the first N architectures.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Separated,
    NoSignal,
    Windowed,
}

#[derive(Debug, Subcommand)]
enum SynthCommand {
    /// Synthetic slide annotation plus its oracle biomarkers.
    Slide {
        /// JSON slide spec; otherwise a random spec from `--seed`.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Upper bound on the random slide side.
        #[arg(long, default_value_t = 6000)]
        max_side: usize,
        /// Exact size of the random slide instead of a random one.
        #[arg(long, value_names = ["WIDTH", "HEIGHT"], num_args = 2)]
        size: Option<Vec<usize>>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Synthetic biomarker cohort CSV.
    Cohort {
        #[arg(long, value_enum)]
        preset: Preset,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parameter(_) => 2,
        Error::Training(_) => 4,
        Error::Scan { source, .. } => exit_code(source),
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = match cli.config.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Rasterize { annotation, out_dir, flip_rate, flip_seed } => {
            commands::rasterize(&annotation, &out_dir, flip_rate, flip_seed)
        }
        Command::Scan { annotation, eos_mask, bz_mask, tissue_mask, slide_id, out_dir, append_cohort } => {
            let input = match (annotation, eos_mask, bz_mask) {
                (Some(a), _, _) => commands::ScanInput::Annotation(a),
                (None, Some(e), Some(b)) => commands::ScanInput::Masks { eos: e, bz: b, slide_id },
                _ => {
                    eprintln!("error: scan needs --annotation or --eos-mask with --bz-mask");
                    return ExitCode::from(2);
                }
            };
            commands::scan(&cfg, input, tissue_mask.as_deref(), &out_dir, append_cohort.as_deref())
        }
        Command::EvalSeg { gt_dir, pred_dir, out_dir } => commands::eval_seg(&cfg, &gt_dir, &pred_dir, &out_dir),
        Command::Synth { what: SynthCommand::Slide { spec, seed, max_side, size, out_dir } } => {
            commands::synth_slide(&cfg, spec.as_deref(), seed, max_side, size, &out_dir)
        }
        Command::Synth { what: SynthCommand::Cohort { preset, n, seed, out } } => {
            commands::synth_cohort(&cfg, preset, n, seed, &out)
        }
        Command::Train { cohort, model, seed, out } => commands::train(&cfg, &cohort, &model, seed, &out),
        Command::Classify { cohort, model, out } => commands::classify(&cohort, &model, &out),
        Command::Report { cohort, model, out_dir } => commands::report(&cfg, &cohort, &model, &out_dir),
        Command::SweepBaseline { cohort, out_dir } => commands::sweep_baseline(&cfg, &cohort, &out_dir),
        Command::GridMlp { cohort, epochs, limit, out } => commands::grid_mlp(&cfg, &cohort, epochs, limit, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
