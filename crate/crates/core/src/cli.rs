//! Command-line front end. Exit codes: 0 ok, 2 config or usage error,
//! 3 runtime error.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::ada::{self, Aggregate, ComparisonTable};
use crate::config::SessionConfig;
use crate::indicator::{self, LoggedTrial, ObservationLog};
use crate::rng;
use crate::service::{self, AppState};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "reliance-aid", version, about = "Reliance-aware decision aid simulator and session server")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a population of operators.
    Simulate(RunArgs),
    /// Compare two aid modes over a parameter grid.
    Compare(RunArgs),
    /// Fit reliance parameters to one operator of a trace.
    AbcDiagnose(DiagnoseArgs),
    /// Serve live sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML run config.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Trace CSV written by `simulate`.
    #[arg(long)]
    pub trace: PathBuf,
    /// Supplies `abc` and `abc_priors`; defaults apply without it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Operator to fit; the first one in the trace by default.
    #[arg(long)]
    pub operator: Option<u32>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Bind address.
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    /// Directory for session transcripts.
    #[arg(long, default_value = "sessions")]
    pub data_dir: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Loads a config and applies a seed override. The raw text is returned for
/// hashing.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<(SessionConfig, String), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut config =
        SessionConfig::from_toml_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok((config, text))
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub format_version: u32,
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config_path: String,
    pub config_sha256: String,
    /// Effective config after the seed override, also written to
    /// `config.toml`.
    pub config: SessionConfig,
    pub outputs: Vec<String>,
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_manifest(
    out: &Path,
    command: &str,
    config_path: &Path,
    raw: &str,
    config: &SessionConfig,
    outputs: &[&str],
) -> Result<(), CliError> {
    let config_file = out.join("config.toml");
    fs::write(&config_file, config.to_toml()).map_err(io_at(&config_file))?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        command: command.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed: config.seed,
        config_path: config_path.display().to_string(),
        config_sha256: sha256_hex(raw),
        config: config.clone(),
        outputs: outputs.iter().map(|s| s.to_string()).chain(["config.toml".into()]).collect(),
    };
    write_json(&out.join("manifest.json"), &manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    fs::write(path, text).map_err(io_at(path))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_at(path))
}

fn prepare_out(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(io_at(out))
}

pub struct SimulateOutputs {
    pub trace: PathBuf,
    pub aggregate: PathBuf,
    pub curves: PathBuf,
    pub manifest: PathBuf,
    pub summary: Aggregate,
}

/// Runs a population and writes `trace.csv`, `aggregate.json`, `curves.csv`,
/// `config.toml` and `manifest.json` into `out`.
pub fn cmd_simulate(config_path: &Path, seed: Option<u64>, out: &Path) -> Result<SimulateOutputs, CliError> {
    let (config, raw) = load_config(config_path, seed)?;
    prepare_out(out)?;
    let pop = ada::run_monte_carlo(&config).map_err(runtime)?;

    let trace = out.join("trace.csv");
    let mut w = create(&trace)?;
    ada::write_trace_csv(&mut w, pop.traces.iter().flat_map(|t| &t.records)).map_err(runtime)?;
    w.flush().map_err(io_at(&trace))?;

    let aggregate = out.join("aggregate.json");
    let mut w = create(&aggregate)?;
    ada::write_aggregate_json(&mut w, &pop.aggregate, None).map_err(runtime)?;
    w.flush().map_err(io_at(&aggregate))?;

    let curves = out.join("curves.csv");
    let mut w = create(&curves)?;
    ada::write_curves_csv(&mut w, &pop.aggregate).map_err(runtime)?;
    w.flush().map_err(io_at(&curves))?;

    write_manifest(out, "simulate", config_path, &raw, &config, &["trace.csv", "aggregate.json", "curves.csv"])?;
    Ok(SimulateOutputs { trace, aggregate, curves, manifest: out.join("manifest.json"), summary: pop.aggregate })
}

pub fn write_comparison_csv<W: Write>(out: W, table: &ComparisonTable) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "theta",
        "s",
        "b2",
        "treatment_mean_reliance",
        "baseline_mean_reliance",
        "percent_difference",
        "treatment_mean_rho",
        "baseline_mean_rho",
        "treatment_reward",
        "baseline_reward",
    ])
    .map_err(runtime)?;
    for c in &table.cells {
        w.write_record([
            c.theta.to_string(),
            c.s.to_string(),
            c.b2.to_string(),
            c.treatment_mean_reliance.to_string(),
            c.baseline_mean_reliance.to_string(),
            c.percent_difference.map(|p| p.to_string()).unwrap_or_default(),
            c.treatment_mean_rho.to_string(),
            c.baseline_mean_rho.to_string(),
            c.treatment_reward.to_string(),
            c.baseline_reward.to_string(),
        ])
        .map_err(runtime)?;
    }
    w.flush().map_err(runtime)
}

/// Writes `comparison.csv` (empty `percent_difference` where undefined),
/// `comparison.json`, `config.toml` and `manifest.json`.
pub fn cmd_compare(config_path: &Path, seed: Option<u64>, out: &Path) -> Result<ComparisonTable, CliError> {
    let (config, raw) = load_config(config_path, seed)?;
    if config.grid.is_none() {
        return Err(CliError::Config(format!("{}: grid: compare needs a [grid] section", config_path.display())));
    }
    prepare_out(out)?;
    let table = ada::compare_methods(&config).map_err(runtime)?;
    let csv_path = out.join("comparison.csv");
    let mut w = create(&csv_path)?;
    write_comparison_csv(&mut w, &table)?;
    w.flush().map_err(io_at(&csv_path))?;
    write_json(&out.join("comparison.json"), &table)?;
    write_manifest(out, "compare", config_path, &raw, &config, &["comparison.csv", "comparison.json"])?;
    Ok(table)
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnoseSummary {
    pub operator: u32,
    pub trials: usize,
    pub observed_trials: usize,
    pub evaluated: u64,
    pub accepted: u64,
    pub acceptance_rate: f64,
    pub batches: usize,
    pub fallback: bool,
    pub posterior_size: usize,
    pub posterior_mean: PosteriorMean,
    pub threshold: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PosteriorMean {
    pub b1: f64,
    pub b2: f64,
    pub s: f64,
    pub theta: f64,
}

/// Fits one operator's logged trials and writes `posterior.csv` and
/// `summary.json`.
pub fn cmd_abc_diagnose(
    trace_path: &Path,
    config_path: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    operator: Option<u32>,
) -> Result<DiagnoseSummary, CliError> {
    let (config, raw) = match config_path {
        Some(p) => load_config(p, seed)?,
        None => {
            let config = SessionConfig { seed: seed.unwrap_or(0), ..SessionConfig::default() };
            let raw = config.to_toml();
            (config, raw)
        }
    };
    let file = File::open(trace_path)
        .map_err(|e| CliError::Config(format!("cannot read trace {}: {e}", trace_path.display())))?;
    let records = ada::read_trace_csv(std::io::BufReader::new(file))
        .map_err(|e| CliError::Config(format!("{}: {e}", trace_path.display())))?;
    let operator = match operator.or_else(|| records.first().map(|r| r.operator)) {
        Some(op) => op,
        None => return Err(CliError::Config(format!("{}: trace has no trials", trace_path.display()))),
    };
    let log: ObservationLog = records
        .iter()
        .filter(|r| r.operator == operator)
        .map(|r| LoggedTrial {
            reliance: r.reliance,
            agreement: r.agreement,
            capability: r.capability,
            observed: !r.ambiguous,
        })
        .collect();
    if log.is_empty() {
        return Err(CliError::Config(format!("{}: no trials for operator {operator}", trace_path.display())));
    }
    prepare_out(out)?;
    let template = config.abc_priors.means();
    let mut abc_rng = rng::stream(config.seed, operator as u64, rng::Purpose::Abc);
    let outcome =
        indicator::abc_rejection(&log, &config.abc_priors, &template, &config.abc, &mut abc_rng).map_err(runtime)?;
    let estimate = indicator::point_estimate(&outcome.samples, &template).map_err(runtime)?;

    let posterior = out.join("posterior.csv");
    let mut w = csv::Writer::from_writer(create(&posterior)?);
    w.write_record(["b1", "b2", "s", "theta", "distance", "draw_index"]).map_err(runtime)?;
    for p in &outcome.samples {
        w.write_record([
            p.b1.to_string(),
            p.b2.to_string(),
            p.s.to_string(),
            p.theta.to_string(),
            p.distance.to_string(),
            p.draw_index.to_string(),
        ])
        .map_err(runtime)?;
    }
    w.flush().map_err(io_at(&posterior))?;

    let summary = DiagnoseSummary {
        operator,
        trials: log.len(),
        observed_trials: log.observed_count(),
        evaluated: outcome.evaluated,
        accepted: outcome.accepted,
        acceptance_rate: outcome.acceptance_rate(),
        batches: outcome.batches,
        fallback: outcome.fallback,
        posterior_size: outcome.samples.len(),
        posterior_mean: PosteriorMean { b1: estimate.b1, b2: estimate.b2, s: estimate.s, theta: estimate.theta },
        threshold: config.abc.threshold,
        seed: config.seed,
    };
    write_json(&out.join("summary.json"), &summary)?;
    let config_label = config_path.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("<defaults>"));
    write_manifest(out, "abc-diagnose", &config_label, &raw, &config, &["posterior.csv", "summary.json"])?;
    Ok(summary)
}

/// Rejects privileged ports. Port 0 asks the system for a free port.
pub fn check_port(port: u16) -> Result<(), CliError> {
    if (1..1024).contains(&port) {
        return Err(CliError::Config(format!("port {port} is privileged; use a port from 1024 to 65535")));
    }
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}

/// Serves until SIGINT or SIGTERM. Prints the bound address on stdout.
pub fn cmd_serve(args: &ServeArgs) -> Result<(), CliError> {
    check_port(args.port)?;
    let config = match &args.config {
        Some(p) => load_config(p, None)?.0,
        None => SessionConfig::default(),
    };
    let runtime_ = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(runtime)?;
    runtime_.block_on(async {
        let addr = std::net::SocketAddr::new(args.host, args.port);
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Runtime(format!("cannot listen on {addr}: {e}")))?;
        let bound = listener.local_addr().map_err(runtime)?;
        println!("listening on http://{bound}");
        let _ = std::io::stdout().flush();
        let state = AppState::new(config, Some(args.data_dir.clone()));
        service::serve(state, listener, shutdown_signal()).await.map_err(runtime)
    })
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => {
            let out = cmd_simulate(&a.config, a.seed, &a.out)?;
            println!(
                "{} operators, mean reliance {:.4}, mean rho {:.4}; wrote {}",
                out.summary.operators,
                out.summary.mean_reliance,
                out.summary.mean_rho,
                a.out.display()
            );
        }
        Command::Compare(a) => {
            let table = cmd_compare(&a.config, a.seed, &a.out)?;
            for c in &table.cells {
                let pct = c.percent_difference.map(|p| format!("{p:+.2}%")).unwrap_or_else(|| "undefined".into());
                println!("theta={} s={} b2={}: {pct}", c.theta, c.s, c.b2);
            }
        }
        Command::AbcDiagnose(a) => {
            let s = cmd_abc_diagnose(&a.trace, a.config.as_deref(), a.seed, &a.out, a.operator)?;
            println!(
                "operator {}: acceptance rate {:.4}, {} samples{}",
                s.operator,
                s.acceptance_rate,
                s.posterior_size,
                if s.fallback { " (fallback)" } else { "" }
            );
        }
        Command::Serve(a) => cmd_serve(&a)?,
    }
    Ok(())
}
