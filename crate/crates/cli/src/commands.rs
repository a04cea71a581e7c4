//! Subcommands. Each returns a process exit code; output goes to the given
//! writers so tests can capture it.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use cocreate_core::backend::BackendSpec;
use cocreate_core::catalog::{Catalog, CatalogError};
use cocreate_core::eval::{
    emit_report, replay_outcome, run_scenario, BenchmarkScenario, EvaluationReport, ReportFormat, ReportOptions,
    SessionOutcome,
};

use crate::config::ConfigLayer;

pub const OUTCOME_FILE: &str = "outcome.json";

#[derive(Debug, Parser)]
#[command(name = "cocreate", version, about = "Intent-to-order co-creation service and benchmark tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Catalog maintenance.
    #[command(subcommand)]
    Catalog(CatalogCmd),
    /// Benchmark runs and reports.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Stored session tools.
    #[command(subcommand)]
    Session(SessionCmd),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum CatalogCmd {
    /// Load a catalog document and check its integrity.
    Validate { path: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum BenchCmd {
    /// Run the scenario against one or more backends.
    Run(BenchRunArgs),
    /// Re-render reports from stored outcomes.
    Report {
        /// Outcome files, or directories holding them.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "text")]
        format: ReportFormat,
    },
}

#[derive(Debug, Args)]
pub struct BenchRunArgs {
    /// Scenario file; the bundled reference scenario when absent.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// `oracle`, `scripted:<profile>`, `scripted:all` or `remote:<url>,<model>`. Repeatable.
    #[arg(long = "backend", default_value = "oracle")]
    pub backends: Vec<String>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long, default_value = "bench-out")]
    pub out: PathBuf,
    /// Format printed to stdout; every format is written to `--out`.
    #[arg(long, default_value = "text")]
    pub format: ReportFormat,
}

#[derive(Debug, Subcommand)]
pub enum SessionCmd {
    /// Re-run a stored outcome from its recorded backend replies and compare.
    Replay {
        /// An outcome file or a directory containing one.
        path: PathBuf,
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub listen_address: Option<String>,
    #[arg(long)]
    pub catalog_path: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub default_backend: Option<String>,
    /// Seconds.
    #[arg(long)]
    pub per_turn_timeout: Option<u64>,
    /// Repeatable.
    #[arg(long = "cors-allow")]
    pub cors_allow_list: Vec<String>,
}

impl ServeArgs {
    pub fn flag_layer(&self) -> ConfigLayer {
        ConfigLayer {
            listen_address: self.listen_address.clone(),
            catalog_path: self.catalog_path.clone(),
            data_dir: self.data_dir.clone(),
            default_backend: self.default_backend.clone(),
            per_turn_timeout: self.per_turn_timeout,
            cors_allow_list: (!self.cors_allow_list.is_empty()).then(|| self.cors_allow_list.clone()),
        }
    }
}

fn load_catalog(path: Option<&Path>) -> Result<Arc<Catalog>> {
    Ok(Arc::new(match path {
        Some(p) => Catalog::from_path(p).with_context(|| format!("catalog {}", p.display()))?,
        None => Catalog::reference(),
    }))
}

pub fn catalog_validate(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match Catalog::from_path(path) {
        Ok(c) => {
            let _ = writeln!(out, "{}: {} offerings (version {})", path.display(), c.offerings().len(), c.version());
            0
        }
        Err(CatalogError::Io(e)) => {
            let _ = writeln!(err, "cannot read {}: {e}", path.display());
            2
        }
        Err(CatalogError::Integrity(e)) => {
            let _ = writeln!(err, "{}: {e} [id: {}]", path.display(), e.offending_id());
            1
        }
        Err(e) => {
            let _ = writeln!(err, "{}: {e}", path.display());
            1
        }
    }
}

fn expand_backends(names: &[String]) -> Result<Vec<BackendSpec>> {
    let mut specs = Vec::new();
    for n in names {
        if n == "scripted:all" {
            specs.extend(
                cocreate_core::backend::benchmark_profiles().into_iter().map(|p| BackendSpec::Scripted { profile: p.name }),
            );
        } else {
            specs.push(BackendSpec::parse(n).map_err(anyhow::Error::msg)?);
        }
    }
    Ok(specs)
}

fn dir_name(backend: &str) -> String {
    backend.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '.') { c } else { '_' }).collect()
}

fn write_reports(dir: &Path, reports: &[EvaluationReport]) -> Result<()> {
    for format in ReportFormat::ALL {
        let text = emit_report(reports, ReportOptions { format, grouped: true })?;
        let path = dir.join(format!("report.{}", format.extension()));
        std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

fn try_bench_run(args: &BenchRunArgs, out: &mut dyn Write) -> Result<()> {
    let scenario = match &args.scenario {
        Some(p) => BenchmarkScenario::from_path(p)?,
        None => BenchmarkScenario::reference(),
    };
    let catalog = load_catalog(args.catalog.as_deref())?;
    let specs = expand_backends(&args.backends)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let mut reports = Vec::new();
    for spec in &specs {
        tracing::debug!(backend = ?spec, scenario = %scenario.scenario_id, "running");
        let outcome = run_scenario(&scenario, catalog.clone(), spec)?;
        let dir = args.out.join(dir_name(&outcome.backend_name));
        std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let path = dir.join(OUTCOME_FILE);
        std::fs::write(&path, outcome.to_json()).with_context(|| format!("cannot write {}", path.display()))?;
        reports.push(outcome.score());
    }
    write_reports(&args.out, &reports)?;
    write!(out, "{}", emit_report(&reports, ReportOptions { format: args.format, grouped: true })?)?;
    Ok(())
}

/// Exit 0 whatever the scores are; 2 when the run itself could not complete.
pub fn bench_run(args: &BenchRunArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match try_bench_run(args, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "bench run failed: {e:#}");
            2
        }
    }
}

/// Outcome files named directly, found in a directory, or one level below it.
fn outcome_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_file() {
            files.push(input.clone());
            continue;
        }
        let direct = input.join(OUTCOME_FILE);
        if direct.is_file() {
            files.push(direct);
        }
        let mut nested: Vec<PathBuf> = std::fs::read_dir(input)
            .with_context(|| format!("cannot read {}", input.display()))?
            .filter_map(|e| e.ok())
            .map(|e| e.path().join(OUTCOME_FILE))
            .filter(|p| p.is_file())
            .collect();
        nested.sort();
        files.extend(nested);
    }
    Ok(files)
}

pub fn bench_report(inputs: &[PathBuf], format: ReportFormat, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = (|| -> Result<String> {
        let mut reports = Vec::new();
        for f in outcome_files(inputs)? {
            reports.push(SessionOutcome::from_path(&f)?.score());
        }
        Ok(emit_report(&reports, ReportOptions { format, grouped: true })?)
    })();
    match result {
        Ok(text) => {
            let _ = write!(out, "{text}");
            0
        }
        Err(e) => {
            let _ = writeln!(err, "bench report failed: {e:#}");
            2
        }
    }
}

/// Exit 0 when the replay matches, 1 on a difference, 2 when the input is unusable.
pub fn session_replay(path: &Path, catalog: Option<&Path>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let file = if path.is_dir() { path.join(OUTCOME_FILE) } else { path.to_path_buf() };
    let stored = match SessionOutcome::from_path(&file) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            return 2;
        }
    };
    let check = match load_catalog(catalog).and_then(|c| Ok(replay_outcome(&stored, c)?)) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "replay failed: {e:#}");
            return 2;
        }
    };
    if check.is_identical() {
        let _ = writeln!(out, "{}: identical ({} backend calls replayed)", file.display(), stored.backend_calls.len());
        0
    } else {
        let _ = writeln!(out, "{}: differs", file.display());
        for d in &check.differences {
            let _ = writeln!(out, "  {d}");
        }
        1
    }
}

/// Runs every subcommand except `serve`.
pub fn run_sync(cmd: &Command, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match cmd {
        Command::Catalog(CatalogCmd::Validate { path }) => catalog_validate(path, out, err),
        Command::Bench(BenchCmd::Run(args)) => bench_run(args, out, err),
        Command::Bench(BenchCmd::Report { inputs, format }) => bench_report(inputs, *format, out, err),
        Command::Session(SessionCmd::Replay { path, catalog }) => session_replay(path, catalog.as_deref(), out, err),
        Command::Serve(_) => {
            let _ = writeln!(err, "serve needs the async runtime");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_subcommand() {
        for argv in [
            &["cocreate", "catalog", "validate", "c.json"][..],
            &["cocreate", "bench", "run", "--backend", "oracle", "--backend", "scripted:all", "--format", "csv"],
            &["cocreate", "bench", "report", "a", "b", "--format", "md"],
            &["cocreate", "session", "replay", "dir"],
            &["cocreate", "serve", "--per-turn-timeout", "30", "--cors-allow", "http://x"],
        ] {
            Cli::try_parse_from(argv).unwrap_or_else(|e| panic!("{argv:?}: {e}"));
        }
        assert!(Cli::try_parse_from(["cocreate", "bench", "report"]).is_err());
    }

    #[test]
    fn backend_expansion() {
        assert_eq!(expand_backends(&["scripted:all".into()]).unwrap().len(), 13);
        assert!(expand_backends(&["gpt".into()]).is_err());
        assert_eq!(dir_name("remote:http://h,m"), "remote_http___h_m");
    }

    #[test]
    fn serve_flags_only_set_what_was_given() {
        let Command::Serve(a) = Cli::try_parse_from(["cocreate", "serve", "--data-dir", "d"]).unwrap().command else {
            panic!()
        };
        let l = a.flag_layer();
        assert_eq!(l.data_dir, Some(PathBuf::from("d")));
        assert!(l.cors_allow_list.is_none() && l.listen_address.is_none());
    }
}
