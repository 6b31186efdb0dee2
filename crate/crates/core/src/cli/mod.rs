//! Config-driven experiment runner: one subcommand per phase, a TOML run
//! configuration and a manifest of every file each command produced.
//!
//! Output layout under `out`:
//!
//! ```text
//! data/                          gen-data (manifest.json + images/)
//! seed-<s>/signs-F.ckpt          pretrain --branch F
//! seed-<s>/signs-O.ckpt          pretrain --branch O
//! seed-<s>/diagnosis.ckpt        train
//! seed-<s>/ablate/               ablate (two checkpoints, per-arm reports, comparison)
//! seed-<s>/eval/<ckpt>-<split>/  evaluate (report.json, report.txt)
//! seed-<s>/explain/<ckpt>/       explain (overlays, localization.json)
//! seed-<s>/logs/*.jsonl          per-epoch training logs
//! manifests/<command>.json       run manifests
//! ```

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{Modality, Split};
use crate::error::{Error, Result};

mod commands;
mod config;

pub use commands::{
    cmd_ablate, cmd_evaluate, cmd_explain, cmd_gen_data, cmd_pretrain, cmd_report, cmd_train, compare_reports,
    diagnosis_checkpoint_path, load_dataset, signs_checkpoint_path, Comparison, ExplainMetrics, InputArtifact,
    RunManifest, ARMS, COMPARISON_JSON, COMPARISON_TXT, DATA_DIR, LOCALIZATION_JSON, MANIFESTS_DIR, REPORT_JSON,
    REPORT_TXT,
};
pub use config::{DataSection, RunConfig};

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Parser)]
#[command(name = "signfuse", version, about = "Lesion-sign pre-training and fundus/OCT fusion diagnosis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Run with this single seed instead of the configured list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, overriding `out` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BranchArg {
    #[value(name = "F")]
    F,
    #[value(name = "O")]
    O,
}

impl From<BranchArg> for Modality {
    fn from(b: BranchArg) -> Modality {
        match b {
            BranchArg::F => Modality::Fundus,
            BranchArg::O => Modality::Oct,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic dataset to `<out>/data`.
    GenData(Common),
    /// Stage one: sign pre-training of one branch.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        branch: BranchArg,
    },
    /// Stage two from the stage-one checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Fundus stage-one checkpoint (default: this run's).
        #[arg(long)]
        fundus: Option<PathBuf>,
        /// OCT stage-one checkpoint (default: this run's).
        #[arg(long)]
        oct: Option<PathBuf>,
    },
    /// Knowledge arm against the scratch arm with equal budgets.
    Ablate(Common),
    /// Metric report of a checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate (default: this run's diagnosis checkpoints).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Grad-CAM overlays and localization scores.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated group ids (default: lesion-bearing test groups).
        #[arg(long, value_delimiter = ',')]
        ids: Vec<String>,
    },
    /// Merge report.json files into one comparison table.
    Report {
        /// report.json files or directories containing one.
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn config_of(c: &Common) -> Result<RunConfig> {
    RunConfig::load(&c.config)?.with_overrides(c.seed, c.out.clone())
}

pub fn run(cli: Cli) -> Result<RunManifest> {
    match cli.command {
        Command::GenData(c) => cmd_gen_data(&config_of(&c)?),
        Command::Pretrain { common, branch } => cmd_pretrain(&config_of(&common)?, branch.into()),
        Command::Train { common, fundus, oct } => cmd_train(&config_of(&common)?, fundus.as_deref(), oct.as_deref()),
        Command::Ablate(c) => cmd_ablate(&config_of(&c)?),
        Command::Evaluate { common, checkpoint, split } => {
            cmd_evaluate(&config_of(&common)?, checkpoint.as_deref(), split.into())
        }
        Command::Explain { common, checkpoint, ids } => cmd_explain(&config_of(&common)?, checkpoint.as_deref(), &ids),
        Command::Report { runs, out } => cmd_report(&runs, &out),
    }
}

/// Parses arguments, runs the command and maps the outcome to an exit code:
/// 0 ok, 2 configuration error, 3 missing artifact, 4 numeric failure.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
