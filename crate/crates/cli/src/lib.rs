//! Command-line surface for `evonas`: run searches and inspect, export, plot
//! and analyze run directories.

pub mod plot;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use evonas_core::analysis::format_report;
use evonas_core::evaluation::{Evaluator, ExternalEvaluator, SyntheticEvaluator, DEFAULT_TIMEOUT};
use evonas_core::moea::{nondominated_sort, select_tradeoff_subset, Individual, Origin};
use evonas_core::rundir::{
    front_rows, read_nhv, read_run_archive, write_front_csv, write_run_dir, RunDirError, CHECKPOINT_FILE,
    CONFIG_FILE,
};
use evonas_core::search::{SearchConfig, SearchError, SearchMode, SearchState};

#[derive(Debug, Parser)]
#[command(name = "evonas", version, about = "Multi-objective evolutionary search over CNN cell genotypes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a search and write the run directory.
    Search(SearchArgs),
    /// Summarize a run directory.
    Report { dir: PathBuf },
    /// Print the non-dominated set of a run as CSV.
    Front {
        dir: PathBuf,
        /// Keep only this many trade-off picks, cheapest first.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Write scatter.svg and nhv.svg; several directories are overlaid.
    Plot {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Output directory; defaults to the first run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Op frequency and concatenation width tables for a run.
    AnalyzeOps { dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvaluatorSpec {
    Synthetic,
    External(String),
}

impl FromStr for EvaluatorSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            _ if s == "synthetic" => Ok(Self::Synthetic),
            Some(("external", cmd)) if !cmd.trim().is_empty() => Ok(Self::External(cmd.to_string())),
            _ => Err(format!("unknown evaluator `{s}` (expected synthetic or external:<command>)")),
        }
    }
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// TOML file with SearchConfig fields; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub pop_size: Option<usize>,
    #[arg(long)]
    pub generations: Option<usize>,
    /// Generation at which network sampling starts.
    #[arg(long)]
    pub tau: Option<usize>,
    /// Keep the genetic operators for the whole run.
    #[arg(long)]
    pub no_exploit: bool,
    /// Crossover probability (nsganetv1 only).
    #[arg(long)]
    pub pc: Option<f64>,
    /// Per-gene mutation probability (nsganetv1 only).
    #[arg(long)]
    pub pm: Option<f64>,
    #[arg(long)]
    pub eta_m: Option<f64>,
    #[arg(long)]
    pub mode: Option<SearchMode>,
    /// `synthetic` or `external:<command>`.
    #[arg(long)]
    pub evaluator: Option<EvaluatorSpec>,
    /// Evaluation width: threads for the synthetic evaluator, worker
    /// processes for an external one.
    #[arg(long, env = "EVONAS_WORKERS")]
    pub workers: Option<usize>,
    /// Per-reply timeout for external workers, in seconds.
    #[arg(long)]
    pub timeout: Option<u64>,
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// Continue from the checkpoint in `--out`.
    #[arg(long)]
    pub resume: bool,
    /// No per-generation progress on stderr.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Evaluator(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Evaluator(_) => 4,
        }
    }
}

impl From<RunDirError> for CliError {
    fn from(e: RunDirError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn search_err(e: SearchError) -> CliError {
    match e {
        SearchError::Config(m) => CliError::Usage(format!("invalid configuration: {m}")),
        SearchError::Evaluator(e) => CliError::Evaluator(e.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

/// Runs one command, writing normal output to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    match cli.command {
        Command::Search(args) => cmd_search(&args, out),
        Command::Report { dir } => cmd_report(&dir, out),
        Command::Front { dir, k } => cmd_front(&dir, k, out),
        Command::Plot { dirs, out: target } => {
            let target = target.unwrap_or_else(|| dirs[0].clone());
            let written = plot::plot_runs(&dirs, &target)?;
            for p in written {
                writeln!(out, "{}", p.display()).map_err(io)?;
            }
            Ok(())
        }
        Command::AnalyzeOps { dir } => {
            let members = read_run_archive(&dir)?;
            out.write_all(format_report(&members).as_bytes()).map_err(io)
        }
    }
}

fn io(e: std::io::Error) -> CliError {
    CliError::Data(e.to_string())
}

/// Flags layered over the config file, or the defaults.
pub fn resolve_config(args: &SearchArgs) -> Result<SearchConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            SearchConfig::from_toml(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => SearchConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.pop_size {
        cfg.pop_size = v;
    }
    if let Some(v) = args.generations {
        cfg.generations = v;
    }
    if let Some(v) = args.tau {
        cfg.tau = Some(v);
    }
    if args.no_exploit {
        cfg.exploit = false;
    }
    if let Some(v) = args.pc {
        cfg.pc = v;
    }
    if let Some(v) = args.pm {
        cfg.pm = v;
    }
    if let Some(v) = args.eta_m {
        cfg.eta_m = v;
    }
    if let Some(v) = args.mode {
        cfg.mode = v;
    }
    apply_runtime(args, &mut cfg)?;
    cfg.validate().map_err(search_err)?;
    Ok(cfg)
}

/// Settings that may change between a run and its resumption.
fn apply_runtime(args: &SearchArgs, cfg: &mut SearchConfig) -> Result<(), CliError> {
    if let Some(ev) = &args.evaluator {
        cfg.evaluator = match ev {
            EvaluatorSpec::Synthetic => "synthetic".to_string(),
            EvaluatorSpec::External(cmd) => format!("external:{cmd}"),
        };
    }
    if let Some(w) = args.workers {
        if w == 0 {
            return Err(CliError::Usage("workers must be positive".into()));
        }
        cfg.workers = w;
    }
    Ok(())
}

fn build_evaluator(cfg: &SearchConfig, timeout: Duration) -> Result<Box<dyn Evaluator>, CliError> {
    match cfg.evaluator.parse::<EvaluatorSpec>().map_err(CliError::Usage)? {
        EvaluatorSpec::Synthetic => Ok(Box::new(
            SyntheticEvaluator::new(cfg.surrogate.clone(), cfg.seed).with_width(cfg.workers),
        )),
        EvaluatorSpec::External(cmd) => {
            let ev = ExternalEvaluator::spawn(&cmd, cfg.workers, timeout).map_err(|e| CliError::Evaluator(e.to_string()))?;
            Ok(Box::new(ev))
        }
    }
}

fn cmd_search(args: &SearchArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let ckpt = args.out.join(CHECKPOINT_FILE);
    let mut state = if args.resume {
        let overrides = args.config.is_some()
            || args.seed.is_some()
            || args.pop_size.is_some()
            || args.generations.is_some()
            || args.tau.is_some()
            || args.no_exploit
            || args.pc.is_some()
            || args.pm.is_some()
            || args.eta_m.is_some()
            || args.mode.is_some();
        if overrides {
            return Err(CliError::Usage(
                "--resume takes the search settings from the checkpoint; only --evaluator, --workers and --timeout may change".into(),
            ));
        }
        let mut s = SearchState::load_checkpoint(&ckpt).map_err(|e| CliError::Data(format!("{}: {e}", ckpt.display())))?;
        apply_runtime(args, &mut s.config)?;
        s
    } else {
        SearchState::new(resolve_config(args)?).map_err(search_err)?
    };
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Data(format!("{}: {e}", args.out.display())))?;
    std::fs::write(
        args.out.join(CONFIG_FILE),
        state.config.to_toml().map_err(search_err)?,
    )
    .map_err(|e| CliError::Data(format!("{}: {e}", args.out.display())))?;

    let timeout = args.timeout.map_or(DEFAULT_TIMEOUT, Duration::from_secs);
    let mut evaluator = match build_evaluator(&state.config, timeout) {
        Ok(ev) => ev,
        Err(e) => {
            state.save_checkpoint(&ckpt).map_err(search_err)?;
            return Err(e);
        }
    };
    let quiet = args.quiet;
    let result = state.run(evaluator.as_mut(), |s| {
        s.save_checkpoint(&ckpt)?;
        if !quiet {
            if let Some(g) = s.stats.last() {
                eprintln!(
                    "gen {:>3}  nhv {:.4}  front {:>3}  evals {:>5}  rho {:.3}",
                    g.generation, g.nhv, g.front_size, s.evaluations, g.rho
                );
            }
        }
        Ok(())
    });
    match result {
        Ok(()) => {}
        Err(SearchError::Evaluator(e)) => {
            state.save_checkpoint(&ckpt).map_err(search_err)?;
            if state.initialized {
                write_run_dir(&args.out, &state)?;
            }
            return Err(CliError::Evaluator(format!(
                "evaluator failed after generation {}: {e}; checkpoint saved to {}, continue with --resume",
                state.generation,
                ckpt.display()
            )));
        }
        Err(e) => return Err(search_err(e)),
    }
    write_run_dir(&args.out, &state)?;
    out.write_all(summary(&args.out, &state.archive.members, state.archive.nhv.last().copied(), &state.config).as_bytes())
        .map_err(io)
}

fn summary(dir: &Path, members: &[Individual], nhv: Option<f64>, cfg: &SearchConfig) -> String {
    let mut s = String::new();
    let failed = members.iter().filter(|m| m.failed).count();
    let _ = writeln!(s, "run          {}", dir.display());
    let _ = writeln!(s, "mode         {} (seed {})", cfg.mode, cfg.seed);
    let _ = writeln!(s, "archive      {} genotypes, {} failed", members.len(), failed);
    if let Some(g) = members.iter().map(|m| m.generation_born).max() {
        let _ = writeln!(s, "generations  {g}");
    }
    if let Some(v) = nhv {
        let _ = writeln!(s, "nhv          {v:.4}");
    }
    let mut origins = String::new();
    for o in [Origin::Init, Origin::Genetic, Origin::BnSample, Origin::RandomSample] {
        let n = members.iter().filter(|m| m.origin == o).count();
        if n > 0 {
            let _ = write!(origins, " {} {n}", o.label());
        }
    }
    let _ = writeln!(s, "origins     {origins}");
    let rows = front_rows(members);
    let _ = writeln!(s, "front        {} members", rows.len());
    let _ = writeln!(s, "\n{:>9} {:>10} {:>4} {:<13} digest", "error_pct", "mflops", "gen", "origin");
    for r in &rows {
        let _ = writeln!(
            s,
            "{:>9.3} {:>10.2} {:>4} {:<13} {}",
            r.error_pct,
            r.flops_m,
            r.generation,
            r.origin.label(),
            r.digest
        );
    }
    s
}

fn cmd_report(dir: &Path, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let members = read_run_archive(dir)?;
    let nhv = read_nhv(dir).ok().and_then(|rows| rows.last().map(|r| r.nhv));
    let cfg = match std::fs::read_to_string(dir.join(CONFIG_FILE)) {
        Ok(text) => SearchConfig::from_toml(&text).map_err(|e| CliError::Data(format!("{}: {e}", dir.join(CONFIG_FILE).display())))?,
        Err(_) => SearchConfig::default(),
    };
    out.write_all(summary(dir, &members, nhv, &cfg).as_bytes()).map_err(io)
}

/// Front members in `front_rows` order, optionally thinned to `k` trade-off
/// picks.
pub fn front_selection(members: &[Individual], k: Option<usize>) -> Result<Vec<evonas_core::rundir::FrontRow>, CliError> {
    let rows = front_rows(members);
    let Some(k) = k else { return Ok(rows) };
    let by_digest: std::collections::HashMap<_, _> = members.iter().map(|m| (m.digest, m)).collect();
    let front: Vec<Individual> = rows.iter().map(|r| by_digest[&r.digest].clone()).collect();
    debug_assert_eq!(nondominated_sort(&front).len(), 1);
    let picks = select_tradeoff_subset(&front, k).map_err(|e| CliError::Data(e.to_string()))?;
    Ok(picks.into_iter().map(|i| rows[i].clone()).collect())
}

fn cmd_front(dir: &Path, k: Option<usize>, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let members = read_run_archive(dir)?;
    let rows = front_selection(&members, k)?;
    write_front_csv(&rows, out).map_err(|e| CliError::Data(e.to_string()))
}
