//! `sbrl` command-line interface.
//!
//! Every run writes `resolved_config.json` (all defaults filled),
//! `report.json` (results, SHA-256 of the resolved config, file manifest)
//! and `timings.json` into the output directory. Exit codes: 0 certified or
//! consistent, 1 falsified or violated, 2 inconclusive or error.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod svg;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{Format, LawRegistry, Overrides, RunConfig};
pub use error::CliError;

use commands::Ctx;
use output::{sha256_hex, OutputDir, RunReport, Timings};

#[derive(Debug, Parser)]
#[command(name = "sbrl", version, about = "Stochastic bounded-real certificates and gain estimates")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<String>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Checks the storage-function inequalities on the configured domain.
    Certify,
    /// Empirical gain estimate from x0 = 0 over the disturbance ensembles.
    Gain,
    /// Writes trajectories from the configured initial state.
    Simulate,
    /// Reproduces a worked example (1 or 2).
    Example { which: u32 },
    /// Eigenvalue bounded-real check for a linear system.
    LinearBrl,
}

impl Command {
    pub fn name(&self) -> String {
        match self {
            Command::Certify => "certify".into(),
            Command::Gain => "gain".into(),
            Command::Simulate => "simulate".into(),
            Command::Example { which } => format!("example {which}"),
            Command::LinearBrl => "linear-brl".into(),
        }
    }
}

/// Runs one invocation and returns the process exit code.
pub fn run(cli: &Cli, registry: &LawRegistry) -> i32 {
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(cli, registry)),
            Err(e) => Err(CliError::invalid(format!("--threads: {e}"))),
        },
        None => execute(cli, registry),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    match (&cli.command, &cli.config) {
        (Command::Example { .. }, Some(_)) => {
            Err(CliError::invalid("example uses a built-in configuration; drop --config"))
        }
        (Command::Example { which }, None) => commands::example_config(*which),
        (_, Some(path)) => config::load(path),
        (_, None) => Err(CliError::invalid("--config is required for this command")),
    }
}

fn execute(cli: &Cli, registry: &LawRegistry) -> Result<i32, CliError> {
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        format: cli.format,
    };
    let cfg = load_config(cli)?.resolve(&overrides)?;
    let mut out = OutputDir::create(cfg.output.directory.as_deref().unwrap_or("out"))?;
    let mut resolved = serde_json::to_string_pretty(&cfg)
        .map_err(|e| CliError::Io(format!("serializing resolved config: {e}")))?;
    resolved.push('\n');
    let hash = sha256_hex(resolved.as_bytes());
    out.write("resolved_config.json", &resolved)?;

    let mut report = RunReport::new(&cli.command.name(), hash);
    let mut timings = Timings::default();
    let mut ctx = Ctx {
        cfg: &cfg,
        registry,
        out: &mut out,
        report: &mut report,
        timings: &mut timings,
    };
    let outcome = match &cli.command {
        Command::Certify => commands::certify(&mut ctx),
        Command::Gain => commands::gain(&mut ctx),
        Command::Simulate => commands::simulate_cmd(&mut ctx),
        Command::Example { which } => commands::example(&mut ctx, *which),
        Command::LinearBrl => commands::linear_brl_cmd(&mut ctx),
    };
    let (code, err) = match outcome {
        Ok(c) => (c, None),
        Err(e) => {
            report.notes.push(format!("error: {e}"));
            (2, Some(e))
        }
    };
    report.exit_code = code;
    report.files = out.manifest();
    out.write_json("report.json", &report)?;
    out.write_json("timings.json", &timings.to_json())?;
    print_summary(&report);
    match err {
        Some(e) => Err(e),
        None => Ok(code),
    }
}

fn print_summary(r: &RunReport) {
    let verdict = match r.exit_code {
        0 if r.command == "simulate" => "completed",
        0 => "certified/consistent",
        1 => "falsified/violated",
        _ => "inconclusive",
    };
    println!("{}: {verdict} (exit {})", r.command, r.exit_code);
    for (k, v) in &r.summary {
        let a = v.abs();
        if a != 0.0 && a.is_finite() && !(1e-4..1e6).contains(&a) {
            println!("  {k} = {v:e}");
        } else {
            println!("  {k} = {v}");
        }
    }
}
