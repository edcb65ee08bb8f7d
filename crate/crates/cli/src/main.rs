use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seplab::experiments::{run_to_dir, validate, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(name = "seplab", version, about = "Run exclusion-process and random-walk experiments from TOML configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment named by the config's `kind`.
    Run(RunArgs),
    /// Check a config (schema, registry names, bandwidth regime) without running it.
    Validate(ConfigArgs),
    /// Run a config as a `moments` experiment.
    Moments(RunArgs),
    /// Run a config as a `consistency` experiment.
    Consistency(RunArgs),
    /// Run a config as a `concentration` experiment.
    Concentration(RunArgs),
    /// Run a config as a `duality` experiment.
    Duality(RunArgs),
    /// Run a config as a `hydro` experiment.
    Hydro(RunArgs),
    /// Run a config as a `bundle-consistency` experiment.
    BundleConsistency(RunArgs),
    /// Run a config as a `bundle-hydro` experiment.
    BundleHydro(RunArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to the TOML config.
    config: PathBuf,
    /// Override a config key, e.g. `--set sizes.n=[1000,4000]`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    overrides: Vec<(String, String)>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Worker threads (defaults to all cores).
    #[arg(long, value_name = "K")]
    workers: Option<usize>,
    /// Output directory; falls back to the config's `output`, then `out/<kind>`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(format!("empty key in `{s}`"));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

fn load(args: &ConfigArgs, kind: Option<ExperimentKind>) -> Result<ExperimentConfig, String> {
    let mut overrides = args.overrides.clone();
    if let Some(k) = kind {
        overrides.insert(0, ("kind".to_string(), format!("\"{}\"", k.name())));
    }
    ExperimentConfig::load(&args.config, &overrides).map_err(|e| format!("{}: {e}", args.config.display()))
}

fn run(args: &RunArgs, kind: Option<ExperimentKind>) -> Result<bool, String> {
    let config = load(&args.config, kind)?;
    let dir = args
        .out
        .clone()
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| Path::new("out").join(config.kind.name()));
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = args.workers {
        if k == 0 {
            return Err("--workers must be at least 1".into());
        }
        pool = pool.num_threads(k);
    }
    let pool = pool.build().map_err(|e| e.to_string())?;
    let report = pool.install(|| run_to_dir(&config, &dir)).map_err(|e| e.to_string())?;
    for line in &report.log {
        println!("{line}");
    }
    let passed = report.passed();
    println!(
        "{} {}: {} table(s) written to {}",
        if passed { "PASS" } else { "FAIL" },
        config.kind.name(),
        report.tables.len(),
        dir.display()
    );
    Ok(passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, kind) = match &cli.command {
        Command::Validate(args) => {
            return match load(args, None) {
                Ok(config) => {
                    let report = validate(&config);
                    if report.is_ok() {
                        println!("ok");
                        ExitCode::SUCCESS
                    } else {
                        for f in &report.failures {
                            println!("failure: {f}");
                        }
                        ExitCode::FAILURE
                    }
                }
                Err(e) => {
                    println!("failure: {e}");
                    ExitCode::FAILURE
                }
            };
        }
        Command::Run(a) => (a, None),
        Command::Moments(a) => (a, Some(ExperimentKind::Moments)),
        Command::Consistency(a) => (a, Some(ExperimentKind::Consistency)),
        Command::Concentration(a) => (a, Some(ExperimentKind::Concentration)),
        Command::Duality(a) => (a, Some(ExperimentKind::Duality)),
        Command::Hydro(a) => (a, Some(ExperimentKind::Hydro)),
        Command::BundleConsistency(a) => (a, Some(ExperimentKind::BundleConsistency)),
        Command::BundleHydro(a) => (a, Some(ExperimentKind::BundleHydro)),
    };
    match run(args, kind) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
