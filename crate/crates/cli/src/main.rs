#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vinemix::mixture::InitMethod;
use vinemix::vine::VineKind;

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "vinemix", version, about = "Vine copula mixture clustering and deprivation ranking")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Number of components; a comma-separated list for `select-k`.
    #[arg(long, global = true, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long, global = true)]
    vine: Option<VineKind>,
    #[arg(long, global = true)]
    init: Option<InitMethod>,
    /// Input CSV table.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Column schema (TOML).
    #[arg(long, global = true)]
    schema: Option<PathBuf>,
    /// Fitted model document.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Screen indicators and drop incomplete rows.
    Preprocess,
    /// Fit a vine copula mixture.
    Fit,
    /// Search the number of components by BIC.
    SelectK {
        /// Test hook: fixed BIC values as `K=BIC,...` instead of fitting.
        #[arg(long, hide = true)]
        stub_bic: Option<String>,
    },
    /// Leave-one-variable-out importance.
    Lovo,
    /// Rank zones by their posterior probability of the most deprived cluster.
    Rank {
        /// CSV with `zone_id,rank` to compare against.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Posteriors closer than this share a rank.
        #[arg(long)]
        tie_tolerance: Option<f64>,
    },
    /// Draw a labelled sample from a model (or the built-in example).
    Simulate {
        /// Rows per component, comma separated.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
    },
    /// Domain scores and ranks from counts and indicator ranks.
    SimdScore {
        /// Domain definitions (TOML).
        #[arg(long)]
        domains: Option<PathBuf>,
    },
    /// Long-format tables for plotting.
    ExportPlotData {
        #[arg(long)]
        compare: Option<PathBuf>,
        /// `ksearch.json` written by `select-k`.
        #[arg(long)]
        ksearch: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Preprocess => "preprocess",
            Command::Fit => "fit",
            Command::SelectK { .. } => "select-k",
            Command::Lovo => "lovo",
            Command::Rank { .. } => "rank",
            Command::Simulate { .. } => "simulate",
            Command::SimdScore { .. } => "simd-score",
            Command::ExportPlotData { .. } => "export-plot-data",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(vinemix::Error),
}

impl From<vinemix::Error> for CliError {
    fn from(e: vinemix::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use vinemix::Error as E;
        match self {
            CliError::Usage(_) | CliError::Core(E::InvalidParameter(_)) => 1,
            CliError::Core(E::NonConvergence { .. } | E::FitFailed { .. } | E::Numeric(_)) => 3,
            CliError::Core(_) => 2,
        }
    }

    fn category(&self) -> &'static str {
        match self.exit_code() {
            1 => "usage",
            2 => "data",
            _ => "numeric",
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn resolve(common: &Common, command: &Command) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    if let Some(v) = common.threads {
        cfg.threads = v;
    }
    if let Some(v) = &common.out {
        cfg.out = v.clone();
    }
    if let Some(v) = &common.input {
        cfg.input = Some(v.clone());
    }
    if let Some(v) = &common.schema {
        cfg.schema = Some(v.clone());
    }
    if let Some(v) = &common.model {
        cfg.model = Some(v.clone());
    }
    if let Some(v) = common.vine {
        cfg.fit.vine_kind = v;
        cfg.vines = vec![v];
    }
    if let Some(v) = common.init {
        if v == InitMethod::Given {
            return Err(CliError::Usage("--init accepts kmeans or gmm".into()));
        }
        cfg.fit.init = v;
        cfg.inits = vec![v];
    }
    if let Some(ks) = &common.k {
        match command {
            Command::SelectK { .. } => cfg.candidates = ks.clone(),
            _ if ks.len() == 1 => cfg.fit.k = ks[0],
            _ => return Err(CliError::Usage("--k takes a single value for this command".into())),
        }
    }
    match command {
        Command::Rank { compare, tie_tolerance } => {
            if let Some(c) = compare {
                cfg.compare = Some(c.clone());
            }
            if let Some(t) = tie_tolerance {
                cfg.tie_tolerance = *t;
            }
        }
        Command::Simulate { counts: Some(c) } => cfg.counts = c.clone(),
        Command::SimdScore { domains: Some(d) } => cfg.domains = Some(d.clone()),
        Command::ExportPlotData { compare, ksearch } => {
            if let Some(c) = compare {
                cfg.compare = Some(c.clone());
            }
            if let Some(k) = ksearch {
                cfg.ksearch = Some(k.clone());
            }
        }
        _ => {}
    }
    // one top-level seed drives every subsystem
    cfg.fit.seed = cfg.seed;
    if cfg.fit.init == InitMethod::Given {
        return Err(CliError::Usage("initial labels cannot be supplied from the command line".into()));
    }
    if !(cfg.tie_tolerance >= 0.0) {
        return Err(CliError::Usage("tie tolerance must be nonnegative".into()));
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = resolve(&cli.common, &cli.command).and_then(|cfg| {
        if cfg.threads > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build_global()
                .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
        }
        commands::run(cli.command.name(), &cli.command, cfg)
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code())
        }
    }
}
