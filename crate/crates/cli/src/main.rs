use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use wasmlab_core::exploits::{calibrate, DEFAULT_ALPHABET};
use wasmlab_core::host::{diff_backends, parse_script, run_script, StepOutcome};
use wasmlab_core::regexlite::StepBudget;
use wasmlab_core::scenarios::{parse_config, serve, ScenarioConfig, ServeConfig, PORT_ENV};
use wasmlab_core::{
    run_exploit, BackendKind, ExploitError, ExploitOptions, HardeningConfig, OracleMode, OracleOptions, PatternStyle,
    Scenario, Vector,
};

const EXIT_UNEXPECTED: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "wasmlab", version, about = "WebAssembly memory-corruption to web-exploit lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an honest session, or a call script, against one instance.
    Run(RunArgs),
    /// Run an automated exploit chain and emit its JSON report.
    Exploit(ExploitArgs),
    /// Serve the scenario over HTTP.
    Serve(ServeArgs),
    /// Print the hit/miss table that fixes the oracle threshold.
    Calibrate(CalibrateArgs),
    /// Run a call script on two backends and compare them.
    Diff(DiffArgs),
}

#[derive(Args)]
struct Target {
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    vector: Option<Vector>,
    /// Comma-separated hardening flags, `none` or `all`.
    #[arg(long, default_value = "none", value_parser = HardeningConfig::parse_list)]
    harden: HardeningConfig,
    #[arg(long, default_value_t = BackendKind::Sim)]
    backend: BackendKind,
}

impl Target {
    fn config(&self) -> Result<ScenarioConfig, String> {
        let scenario = self.scenario.ok_or("--scenario is required")?;
        let vector = self.vector.ok_or("--vector is required")?;
        Ok(ScenarioConfig::new(scenario, vector)
            .with_hardening(self.harden)
            .with_backend(self.backend))
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    target: Target,
    /// Call script to run instead of the honest session.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Expect {
    Success,
    Fail,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = OracleMode::Steps)]
    oracle: OracleMode,
    #[arg(long, default_value_t = PatternStyle::Plain)]
    style: PatternStyle,
    /// Measurements per guess (default 1 for steps, 3 for wall-clock).
    #[arg(long)]
    samples: Option<u32>,
}

impl OracleArgs {
    fn options(&self) -> OracleOptions {
        let base = match self.oracle {
            OracleMode::Steps => OracleOptions::default(),
            OracleMode::WallClock => OracleOptions::wall_clock(),
        };
        OracleOptions {
            samples: self.samples.unwrap_or(base.samples).max(1),
            style: self.style,
            ..base
        }
    }
}

#[derive(Args)]
struct ExploitArgs {
    #[command(flatten)]
    target: Target,
    #[command(flatten)]
    oracle: OracleArgs,
    #[arg(long, default_value = DEFAULT_ALPHABET)]
    alphabet: String,
    #[arg(long, default_value_t = 32)]
    max_len: u32,
    /// Outcome that exits 0; the other exits 1.
    #[arg(long, value_enum, default_value_t = Expect::Success)]
    expect: Expect,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    target: Target,
    /// `key = value` config file; flags given explicitly override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides LAB_PORT and the config file.
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    bind: Option<String>,
    /// Adds the step-count header to search responses.
    #[arg(long)]
    test_mode: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    oracle: OracleArgs,
    #[arg(long, default_value_t = StepBudget::DEFAULT_MAX_STEPS)]
    max_steps: u64,
    #[arg(long, default_value_t = 0x5EED)]
    seed: u64,
    /// Also write the calibration as JSON.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct DiffArgs {
    #[arg(long)]
    script: PathBuf,
    #[arg(long, default_value_t = BackendKind::Sim)]
    left: BackendKind,
    #[arg(long, default_value_t = BackendKind::Wasm)]
    right: BackendKind,
    #[arg(long)]
    output: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Unexpected(String),
}

type Outcome = Result<(), Failure>;

fn usage(e: impl ToString) -> Failure {
    Failure::Usage(e.to_string())
}

fn emit(value: &impl Serialize, output: Option<&Path>) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(usage)?;
    // A closed stdout (e.g. piped into `head`) is not a failure.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    if let Some(path) = output {
        std::fs::write(path, text + "\n").map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct ScriptReport<'a> {
    scenario: Scenario,
    vector: Option<Vector>,
    backend: BackendKind,
    init: &'a Result<u32, String>,
    outcomes: &'a [StepOutcome],
}

fn script_dir(path: &Path) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn cmd_run(args: RunArgs) -> Outcome {
    if let Some(path) = &args.script {
        let script = parse_script(&read(path)?).map_err(usage)?;
        let run = run_script(&script, args.target.backend, &script_dir(path)).map_err(usage)?;
        let report = ScriptReport {
            scenario: script.scenario,
            vector: script.vector,
            backend: args.target.backend,
            init: &run.init,
            outcomes: &run.outcomes,
        };
        emit(&report, args.output.as_deref())?;
        let mismatch = run
            .outcomes
            .iter()
            .any(|o| matches!(o, StepOutcome::Snapshot { matched: false, .. }));
        return if mismatch {
            Err(Failure::Unexpected("snapshot mismatch".into()))
        } else {
            Ok(())
        };
    }
    let config = args.target.config().map_err(usage)?;
    let run = wasmlab_core::exploits::run_honest(&config).map_err(usage)?;
    emit(&run, args.output.as_deref())?;
    if run.all_ok() {
        Ok(())
    } else {
        Err(Failure::Unexpected("honest session misbehaved".into()))
    }
}

fn cmd_exploit(args: ExploitArgs) -> Outcome {
    let config = args.target.config().map_err(usage)?;
    let opts = ExploitOptions {
        oracle: args.oracle.options(),
        alphabet: args.alphabet,
        max_len: args.max_len,
        ..ExploitOptions::default()
    };
    let report = run_exploit(&config, &opts).map_err(|e| match e {
        ExploitError::Unsupported(_) => usage(e),
        other => Failure::Unexpected(other.to_string()),
    })?;
    emit(&report, args.output.as_deref())?;
    let expected = args.expect == Expect::Success;
    if report.success == expected {
        Ok(())
    } else {
        Err(Failure::Unexpected(format!(
            "exploit {} but {} was expected",
            if report.success { "succeeded" } else { "failed" },
            if expected { "success" } else { "failure" }
        )))
    }
}

fn serve_config(args: &ServeArgs) -> Result<ServeConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => parse_config(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))?,
        None => {
            let scenario = args.target.scenario.ok_or_else(|| usage("--scenario or --config is required"))?;
            ServeConfig::new(ScenarioConfig::new(scenario, Vector::Bof))
        }
    };
    let t = &args.target;
    if let Some(s) = t.scenario {
        cfg.scenario.scenario = s;
    }
    if let Some(v) = t.vector {
        cfg.scenario.vector = v;
    }
    if t.harden.any() {
        cfg.scenario.hardening = t.harden;
    }
    if t.backend != BackendKind::Sim {
        cfg.scenario.backend = t.backend;
    }
    if let Some(b) = &args.bind {
        cfg.bind = b.clone();
    }
    cfg.test_mode |= args.test_mode;
    Ok(cfg)
}

fn cmd_serve(args: ServeArgs) -> Outcome {
    let cfg = serve_config(&args)?;
    let port = cfg.resolve_port(args.port).map_err(usage)?;
    let runtime = tokio::runtime::Runtime::new().map_err(usage)?;
    let label = format!("{} {}", cfg.scenario.scenario, cfg.scenario.vector);
    runtime
        .block_on(serve(cfg, port, |addr| eprintln!("serving {label} on http://{addr} ({PORT_ENV} overrides the default port)")))
        .map_err(|e| Failure::Unexpected(e.to_string()))
}

fn cmd_calibrate(args: CalibrateArgs) -> Outcome {
    let budget = StepBudget::new(args.max_steps).ok_or_else(|| usage("--max-steps must be positive"))?;
    let o = args.oracle.options();
    let cal = calibrate(o.mode, o.style, o.samples, budget, args.seed);
    let _ = write!(std::io::stdout().lock(), "{}", cal.table());
    if let Some(path) = &args.output {
        let text = serde_json::to_string_pretty(&cal).map_err(usage)?;
        std::fs::write(path, text + "\n").map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn cmd_diff(args: DiffArgs) -> Outcome {
    let script = parse_script(&read(&args.script)?).map_err(usage)?;
    let report = diff_backends(&script, args.left, args.right, &script_dir(&args.script)).map_err(usage)?;
    emit(&report, args.output.as_deref())?;
    if report.identical() {
        Ok(())
    } else {
        Err(Failure::Unexpected(format!(
            "backends differ: steps {:?}, {} bytes",
            report.outcome_mismatches,
            report.differing_bytes()
        )))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Exploit(a) => cmd_exploit(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Diff(a) => cmd_diff(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("wasmlab: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Unexpected(m)) => {
            eprintln!("wasmlab: {m}");
            ExitCode::from(EXIT_UNEXPECTED)
        }
    }
}
