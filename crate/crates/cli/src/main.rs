use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use ctlrisk::config::{ExperimentConfig, OracleConfig};
use ctlrisk::estimator::{run_diagnostics, run_subset_simulation};
use ctlrisk::oracle::{protocol, ProcessOracle, ReliabilityOracle};
use ctlrisk::report::{ReliabilityReport, REPORT_SCHEMA};
use ctlrisk::rng::{Purpose, SeedSource};
use ctlrisk::space::sample_uniform;
use serde_json::json;

const BUILD_ID: &str = env!("CTLRISK_BUILD_ID");

#[derive(Parser)]
#[command(name = "ctlrisk", version, about = "Rare-event reliability analysis for real-time controllers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the subset-simulation pipeline and write a report.
    Run(RunArgs),
    /// Compare honest and RWM samples on pilot functions, without estimating.
    Diagnose(RunArgs),
    /// Answer oracle requests on stdin/stdout using the config's oracle.
    OracleServe {
        #[arg(long)]
        config: PathBuf,
    },
    /// Send uniform states to an external oracle command and print its answers.
    OracleProbe(ProbeArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeArgs {
    /// Config whose state space supplies the probe states.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 1000)]
    count: u64,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Check every answer against the config's in-process oracle.
    #[arg(long)]
    compare: bool,
    /// Print each state and its answer.
    #[arg(long)]
    verbose: bool,
    /// Oracle command, after `--`.
    #[arg(last = true, required = true)]
    command: Vec<String>,
}

/// Errors that map to exit code 2.
#[derive(Debug)]
struct ConfigError(anyhow::Error);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(e: impl Into<anyhow::Error>) -> anyhow::Error {
    ConfigError(e.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(&args),
        Command::Diagnose(args) => diagnose(&args),
        Command::OracleServe { config } => serve(&config),
        Command::OracleProbe(args) => probe(&args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<ConfigError>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn load(path: &Path, args: Option<&RunArgs>) -> anyhow::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::from_path(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(config_error)?;
    if let Some(args) = args {
        if let Some(seed) = args.seed {
            config.seed = seed;
        }
        if let Some(workers) = args.workers {
            config.workers = Some(workers);
        }
        if let Some(dir) = &args.out_dir {
            config.output.dir = Some(dir.clone());
        }
        config.validate().map_err(config_error)?;
    }
    Ok(config)
}

fn validate_report(report: &ReliabilityReport) -> anyhow::Result<()> {
    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA)?;
    let validator = jsonschema::validator_for(&schema).map_err(|e| anyhow::anyhow!("report schema: {e}"))?;
    let value = serde_json::to_value(report)?;
    let errors: Vec<String> = validator.iter_errors(&value).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    if !errors.is_empty() {
        bail!("report does not match its schema: {}", errors.join("; "));
    }
    Ok(())
}

fn write_outputs(
    config: &ExperimentConfig,
    report: &ReliabilityReport,
    workers: usize,
    wall_seconds: f64,
    command: &str,
) -> anyhow::Result<PathBuf> {
    validate_report(report)?;
    let dir = config.output_dir();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let report_path = dir.join(&config.output.report);
    std::fs::write(&report_path, report.to_json()?)?;
    if !report.levels.is_empty() {
        std::fs::write(dir.join(&config.output.batches), report.batches_csv())?;
    }
    let meta = json!({
        "command": command,
        "build_id": BUILD_ID,
        "workers": workers,
        "wall_seconds": wall_seconds,
    });
    std::fs::write(dir.join("run_meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(report_path)
}

fn run(args: &RunArgs) -> anyhow::Result<ExitCode> {
    let config = load(&args.config, Some(args))?;
    let experiment = config.build().map_err(config_error)?;
    let started = Instant::now();
    let outcome = run_subset_simulation(
        &experiment.problem,
        &experiment.sampling,
        experiment.diagnostics.as_ref(),
        experiment.seed,
        experiment.workers,
    )?;
    let report = ReliabilityReport::from_outcome(&config, experiment.problem.oracle.name(), &outcome, BUILD_ID)?;
    let path = write_outputs(&config, &report, experiment.workers, started.elapsed().as_secs_f64(), "run")?;
    print!("{}", report.summary());
    println!("  report: {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn diagnose(args: &RunArgs) -> anyhow::Result<ExitCode> {
    let config = load(&args.config, Some(args))?;
    let experiment = config.build().map_err(config_error)?;
    let settings = experiment.diagnostics.clone().unwrap_or_default();
    let started = Instant::now();
    let levels = run_diagnostics(&experiment.problem, &experiment.sampling, &settings, experiment.seed, experiment.workers)?;
    let report = ReliabilityReport::from_diagnostics(&config, experiment.problem.oracle.name(), levels, BUILD_ID)?;
    let path = write_outputs(&config, &report, experiment.workers, started.elapsed().as_secs_f64(), "diagnose")?;
    print!("{}", report.summary());
    println!("  report: {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn in_process_oracle(config: &ExperimentConfig) -> anyhow::Result<Arc<dyn ReliabilityOracle>> {
    if matches!(config.oracle, OracleConfig::Process { .. }) {
        return Err(config_error(anyhow::anyhow!("the config's oracle must be an in-repo oracle, not a process")));
    }
    let space = config.space.build().map_err(config_error)?;
    config.oracle.build(&space, config.model.strategy).map_err(config_error)
}

fn serve(path: &Path) -> anyhow::Result<ExitCode> {
    let config = load(path, None)?;
    let oracle = in_process_oracle(&config)?;
    let stdin = io::stdin().lock();
    let stdout = BufWriter::new(io::stdout().lock());
    protocol::serve(oracle.as_ref(), stdin, stdout)?;
    Ok(ExitCode::SUCCESS)
}

fn probe(args: &ProbeArgs) -> anyhow::Result<ExitCode> {
    let config = load(&args.config, None)?;
    let space = config.space.build().map_err(config_error)?;
    let reference = if args.compare { Some(in_process_oracle(&config)?) } else { None };
    let external = ProcessOracle::spawn(&args.command).with_context(|| format!("starting {:?}", args.command))?;
    let mut rng = SeedSource::new(args.seed.unwrap_or(config.seed)).stream_for(Purpose::User, 0, 0);
    let mut out = BufWriter::new(io::stdout().lock());
    let (mut failures, mut mismatches) = (0u64, 0u64);
    for _ in 0..args.count {
        let x = sample_uniform(&space, &mut rng)?;
        let reliable = external.is_reliable(&x)?;
        failures += u64::from(!reliable);
        if let Some(r) = &reference {
            mismatches += u64::from(r.is_reliable(&x)? != reliable);
        }
        if args.verbose {
            writeln!(out, "{} -> {}", protocol::format_request(&x), protocol::format_response(reliable))?;
        }
    }
    write!(out, "probed {} states: {failures} failures", args.count)?;
    if reference.is_some() {
        write!(out, ", {mismatches} mismatches")?;
    }
    writeln!(out)?;
    out.flush()?;
    Ok(if mismatches == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
