//! Command-line front end. Every subcommand reads a config (file plus flag
//! overrides), writes its artifacts under `--out`, and records the effective
//! config and input fingerprints in `run.toml`.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{AnalysisSettings, ExperimentConfig, LemmaSettings, Paths};

use crate::alignment::Metric;
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "sslmem", version, about = "Memorization scores for self-supervised encoders")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub metric: Option<MetricArg>,
    /// Views per sample, for scoring and measurement alike.
    #[arg(long, global = true)]
    pub views: Option<usize>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Worker threads; 0 picks the number of CPUs.
    #[arg(long, global = true, env = "SSLMEM_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    L2,
    Cosine,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::L2 => Metric::L2,
            MetricArg::Cosine => Metric::Cosine,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    F,
    G,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Score representation files against a split manifest.
    Score {
        /// Representations from encoders trained on S_S and S_C (.bin or .csv).
        #[arg(long = "f-reprs", num_args = 1..)]
        f_reprs: Vec<PathBuf>,
        /// Representations from encoders trained on S_S and S_I.
        #[arg(long = "g-reprs", num_args = 1..)]
        g_reprs: Vec<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// One-sided Welch tests between partitions, plus score histograms.
    Stats {
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Rank agreement between two reports.
    RankCompare {
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        other: Option<PathBuf>,
        /// Partition to compare over, or "all".
        #[arg(long, default_value = "S_C")]
        subset: String,
    },
    /// Fraction of candidates above each score threshold.
    SweepThreshold {
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train both encoder families on synthetic data and score them.
    ToyRun,
    /// Remove memorized or random candidates, retrain, and evaluate downstream.
    Ablate {
        /// Reuse the dataset, manifest and report of an earlier toy-run.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Retrain on the most memorized training points only.
    Coreset {
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Pipeline runs over a grid of alignment-penalty weights.
    LambdaSweep,
    /// Check the closeness and overlap bounds around one training sample.
    LemmaCheck {
        /// A toy-run directory; fills in checkpoint, dataset and manifest.
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        anchor: Option<u64>,
        #[arg(long, value_enum, default_value = "f")]
        role: RoleArg,
    },
    /// Nearest-centroid and linear-probe accuracy on labeled representations.
    Probe {
        /// CSV with header `label,dim0,...`.
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Score { .. } => "score",
            Command::Stats { .. } => "stats",
            Command::RankCompare { .. } => "rank-compare",
            Command::SweepThreshold { .. } => "sweep-threshold",
            Command::ToyRun => "toy-run",
            Command::Ablate { .. } => "ablate",
            Command::Coreset { .. } => "coreset",
            Command::LambdaSweep => "lambda-sweep",
            Command::LemmaCheck { .. } => "lemma-check",
            Command::Probe { .. } => "probe",
        }
    }

    fn source_dir(&self) -> Option<&PathBuf> {
        match self {
            Command::Ablate { from } | Command::Coreset { from } | Command::LemmaCheck { from, .. } => from.as_ref(),
            _ => None,
        }
    }
}

/// Effective config: the `--config` file, else the `run.toml` of a `--from`
/// directory, else defaults; then flag overrides.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let g = &cli.global;
    let mut cfg = match (&g.config, cli.command.source_dir()) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(dir)) if dir.join(commands::RUN_RECORD).exists() => commands::load_run_config(dir)?,
        _ => ExperimentConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &g.out {
        cfg.paths.out = Some(out.clone());
    }
    if let Some(m) = g.metric {
        cfg.score.metric = m.into();
    }
    if let Some(k) = g.views {
        cfg.score.n_views = k;
        cfg.measure_aug.k = k;
    }
    if let Some(l) = g.lambda {
        cfg.loss.lambda = l;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parse and execute; the return value is the process exit status.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| commands::dispatch(&cli.command, &cfg))
}
