//! `fusionseg`: phantom generation, fold planning, training, evaluation, inference and
//! reporting for multi-modal 3D segmentation.
//!
//! Exit codes: 0 success, 2 usage, 3 i/o, 4 malformed input, 5 integrity, 6 configuration,
//! 7 training failure.

mod commands;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "fusionseg", version, about = "Multi-modal 3D segmentation experiments")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dual-modality phantom dataset and its manifest.
    PhantomGen {
        /// Output directory; must be absent or empty.
        #[arg(long)]
        out: PathBuf,
        /// Number of studies.
        #[arg(long)]
        count: usize,
        /// Random seed; a fresh one is drawn and printed when omitted.
        #[arg(long)]
        seed: Option<u64>,
        /// Cubic grid edge in voxels.
        #[arg(long, default_value_t = 64)]
        grid: usize,
    },
    /// Partition a manifest into five patient-grouped train/val/test folds.
    Split {
        /// Dataset manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// Random seed; a fresh one is drawn and printed when omitted.
        #[arg(long)]
        seed: Option<u64>,
        /// Output `folds.tsv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one fold and write a run directory.
    Train {
        /// Dataset manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// `folds.tsv` written by `split`.
        #[arg(long)]
        folds: PathBuf,
        /// Fold index, 0 to 4.
        #[arg(long)]
        fold: usize,
        #[arg(long, value_parser = ["unet", "unetpp"])]
        backbone: String,
        #[arg(long, value_parser = ["single:bmode", "single:doppler", "early", "intermediate", "late"])]
        fusion: String,
        /// TOML run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run directory; must be absent or empty.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed of the configuration file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a run's best checkpoint on one split of its fold.
    Evaluate {
        /// Run directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
        split: String,
    },
    /// Predict the mask of one study directory with a run's best checkpoint.
    Infer {
        /// Run directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        /// Directory holding `bmode.nii[.gz]` and `doppler.nii[.gz]`.
        #[arg(long)]
        study: PathBuf,
        /// Output mask file (`.nii` or `.nii.gz`).
        #[arg(long)]
        out: PathBuf,
        /// Also write the probability map here.
        #[arg(long)]
        prob: Option<PathBuf>,
    },
    /// Compare runs and write tables and convergence curves.
    Report {
        /// Run directories or parents searched recursively for runs.
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Report output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::PhantomGen { out, count, seed, grid } => commands::phantom_gen(&out, count, seed, grid),
        Command::Split { manifest, seed, out } => commands::split(&manifest, seed, &out),
        Command::Train {
            manifest,
            folds,
            fold,
            backbone,
            fusion,
            config,
            out,
            seed,
        } => commands::train(&commands::TrainArgs {
            manifest,
            folds,
            fold,
            backbone,
            fusion,
            config,
            out,
            seed,
        }),
        Command::Evaluate { run, split } => commands::evaluate(&run, &split),
        Command::Infer { run, study, out, prob } => commands::infer(&run, &study, &out, prob.as_deref()),
        Command::Report { runs, out } => commands::report(&runs, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
