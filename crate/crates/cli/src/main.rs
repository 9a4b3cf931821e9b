//! Pipeline driver for synthetic organ-shape cohorts: generate shapes,
//! extract spectral or point-cloud features, train and evaluate the two
//! classifiers, embed feature spaces, and export eigenfunction tables.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod commands;
mod manifest;
mod record;

use clap::{Parser, Subcommand};

use abdoshape::mspnet::MspnetError;
use abdoshape::neural::NeuralError;
use abdoshape::spectra::SpectraError;

#[derive(Debug, Parser)]
#[command(
    name = "abdoshape",
    about = "Organ shape analysis pipelines: spectral descriptors and point-cloud networks",
    version
)]
struct Cli {
    /// Worker threads for per-subject fan-out (1 = fully sequential).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Training float precision.
    #[arg(long, global = true, default_value = "f64", value_parser = ["f32", "f64"])]
    precision: String,
    /// Default seed for any per-command seed left unset.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Default output directory for commands that do not set --out-dir.
    #[arg(long, global = true)]
    out_dir: Option<std::path::PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic two-organ cohort with voxel files and a manifest.
    GenCohort(commands::gen_cohort::Args),
    /// Compute per-subject features: spectral descriptors or surface clouds.
    Featurize(commands::featurize::Args),
    /// Split, train a classifier, and report train/test ROC/AUC.
    Train(commands::train::Args),
    /// Evaluate a saved model on a manifest.
    Eval(commands::eval::Args),
    /// Embed learned or spectral feature spaces into 2-D with t-SNE.
    Embed(commands::embed::Args),
    /// Export a surface mesh and its first non-constant eigenfunctions.
    Eigenfunctions(commands::eigenfunctions::Args),
    /// Summarize metrics and run records under a directory.
    Report(commands::report::Args),
}

/// Float precision selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// Global flags merged into each command's arguments: per-command values
/// win; the global value fills anything left unset.
#[derive(Debug, Clone)]
pub struct Globals {
    pub precision: Precision,
    pub seed: Option<u64>,
    pub out_dir: Option<std::path::PathBuf>,
}

impl Globals {
    pub fn seed_or(&self, explicit: Option<u64>, default: u64) -> u64 {
        explicit.or(self.seed).unwrap_or(default)
    }

    pub fn out_dir_or(
        &self,
        explicit: Option<std::path::PathBuf>,
    ) -> anyhow::Result<std::path::PathBuf> {
        explicit
            .or_else(|| self.out_dir.clone())
            .ok_or_else(|| anyhow::Error::new(UsageError("--out-dir is required".into())))
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not usage errors.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let precision = if cli.precision == "f32" {
        Precision::F32
    } else {
        Precision::F64
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        std::process::exit(1);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
    {
        eprintln!("error: failed to configure thread pool: {e}");
        std::process::exit(2);
    }

    let globals = Globals {
        precision,
        seed: cli.seed,
        out_dir: cli.out_dir.clone(),
    };
    let result = match cli.command {
        Command::GenCohort(args) => commands::gen_cohort::run(args, &globals),
        Command::Featurize(args) => commands::featurize::run(args, &globals),
        Command::Train(args) => commands::train::run(args, &globals),
        Command::Eval(args) => commands::eval::run(args, &globals),
        Command::Embed(args) => commands::embed::run(args, &globals),
        Command::Eigenfunctions(args) => commands::eigenfunctions::run(args, &globals),
        Command::Report(args) => commands::report::run(args),
    };
    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(classify_exit(&e));
        }
    }
}

/// Marker for argument combinations clap cannot express; exits with code 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn classify_exit(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<SpectraError>()
            && matches!(
                e,
                SpectraError::NoConvergence { .. } | SpectraError::NotPositiveDefinite
            )
        {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<NeuralError>()
            && matches!(e, NeuralError::NonFinite { .. })
        {
            return 3;
        }
        if let Some(MspnetError::Neural(NeuralError::NonFinite { .. })) =
            cause.downcast_ref::<MspnetError>()
        {
            return 3;
        }
    }
    2
}
