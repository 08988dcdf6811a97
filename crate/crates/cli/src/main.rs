use std::path::PathBuf;
use std::process::ExitCode;

use bitensor_cli::config::SCHEMA;
use bitensor_cli::{run_scenario, validate_config, ConfigError, RunError, ScenarioKind};
use clap::{Parser, Subcommand};

/// Scenario runner for two-point metric bitensors, geodesic transport and
/// multi-event wavefields.
///
/// Exit codes: 0 when every invariant holds, 2 for an invalid configuration
/// or command line, 3 when a scenario fails or an invariant is violated.
#[derive(Parser)]
#[command(name = "bitensor", version)]
struct Cli {
    /// Scenario configuration (JSON). Without it the subcommand's defaults apply.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for the report bundle.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for intra-scenario parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Metric, connection, curvature and chart-transition checks at sampled events.
    Geometry,
    /// Geodesic census between event pairs.
    Connect,
    /// Propagator isometry on random geodesics and loop holonomy.
    Transport,
    /// Bitensor axioms and explicit pair evaluations.
    Bitensor,
    /// Operator residuals, structural checks and leapfrog convergence.
    Dynamics,
    /// Flat-limit reassembly of the Lagrangian terms.
    Reassemble,
    /// Stress-energy energy-condition audit.
    Audit,
    /// Run whatever scenario the configuration names.
    Run,
    /// Check a configuration and list every violation.
    Validate,
    /// Print the configuration schema.
    Schema,
}

impl Command {
    fn kind(&self) -> Option<ScenarioKind> {
        match self {
            Command::Geometry => Some(ScenarioKind::Geometry),
            Command::Connect => Some(ScenarioKind::Connect),
            Command::Transport => Some(ScenarioKind::Transport),
            Command::Bitensor => Some(ScenarioKind::Bitensor),
            Command::Dynamics => Some(ScenarioKind::Dynamics),
            Command::Reassemble => Some(ScenarioKind::Reassemble),
            Command::Audit => Some(ScenarioKind::Audit),
            Command::Run | Command::Validate | Command::Schema => None,
        }
    }
}

fn config_error(path: &str, message: impl Into<String>) -> RunError {
    RunError::Config(vec![ConfigError { path: path.to_string(), message: message.into() }])
}

/// Loads the document, reconciling its `scenario` key with the subcommand.
fn load(cli: &Cli) -> Result<String, RunError> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| config_error("", format!("cannot read {}: {e}", path.display())))?,
        None => "{}".to_string(),
    };
    let Some(kind) = cli.command.kind() else { return Ok(text) };
    let mut doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| config_error("", format!("not valid JSON: {e}")))?;
    let Some(obj) = doc.as_object_mut() else { return Ok(text) };
    match obj.get("scenario").and_then(|s| s.as_str()) {
        Some(s) if s != kind.as_str() => {
            return Err(config_error("/scenario", format!("configuration is for `{s}`, not `{}`", kind.as_str())));
        }
        Some(_) => {}
        None => {
            obj.insert("scenario".into(), kind.as_str().into());
        }
    }
    Ok(doc.to_string())
}

fn execute(cli: &Cli) -> Result<bool, RunError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(config_error("--threads", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| RunError::Scenario(format!("thread pool: {e}")))?;
    }
    let text = load(cli)?;
    let mut cfg = validate_config(&text).map_err(RunError::Config)?;
    if matches!(cli.command, Command::Validate) {
        println!("configuration is valid ({} scenario)", cfg.scenario.as_str());
        return Ok(true);
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("bitensor-out").join(cfg.scenario.as_str()));
    let report = run_scenario(&cfg)?;
    report
        .write(&out)
        .map_err(|e| RunError::Scenario(format!("cannot write {}: {e}", out.display())))?;
    print!("{}", report.summary());
    println!("report written to {}", out.display());
    Ok(report.ok())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if matches!(cli.command, Command::Schema) {
        print!("{SCHEMA}");
        return ExitCode::SUCCESS;
    }
    std::panic::set_hook(Box::new(|_| {}));
    match std::panic::catch_unwind(|| execute(&cli)) {
        Ok(Ok(true)) => ExitCode::SUCCESS,
        Ok(Ok(false)) => {
            eprintln!("one or more invariants failed");
            ExitCode::from(3)
        }
        Ok(Err(e)) => {
            eprint!("{e}");
            if !e.to_string().ends_with('\n') {
                eprintln!();
            }
            ExitCode::from(e.exit_code() as u8)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown failure".into());
            eprintln!("internal error: {msg}");
            ExitCode::from(3)
        }
    }
}
