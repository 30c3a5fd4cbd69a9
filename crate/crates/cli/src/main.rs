mod commands;
mod config;
mod group;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use commands::Outputs;

#[derive(Parser)]
#[command(name = "lcf", version, about = "Conformally invariant integral equations on Kleinian quotients of S^n")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (overrides `threads`).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[arg(long, global = true)]
    alpha: Option<f64>,

    #[arg(long, global = true)]
    resolution: Option<usize>,

    /// Group description file (overrides `group_file`).
    #[arg(long, global = true)]
    group: Option<PathBuf>,

    /// Any config key, e.g. `--set solve.theta=0.3` or `--set moving_plane.lambdas=[1,0.5]`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Solve the integral equation and write the nodal solution.
    Solve,
    /// Assemble and export the periodized kernel matrix and chart.
    Kernel,
    /// Partial Poincaré sums and the critical exponent estimate.
    Poincare,
    /// Run the identity suite.
    Verify,
    /// Moving-plane scan of the unfolded solution.
    MovingPlane,
    /// Blow-up rescaling, kernel limit and bubble fits.
    Rescale,
    /// Continuation in alpha starting from 2.
    Continue,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Kernel => "kernel",
            Command::Poincare => "poincare",
            Command::Verify => "verify",
            Command::MovingPlane => "moving-plane",
            Command::Rescale => "rescale",
            Command::Continue => "continue",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(Vec<String>),
    Core(lcf_core::Error),
    Io(String),
    Verification(Vec<String>),
}

impl From<lcf_core::Error> for CliError {
    fn from(e: lcf_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Config(errors) => json!({"status": "error", "kind": "config", "errors": errors}),
            CliError::Core(e) => json!({"status": "error", "kind": e.kind(), "message": e.to_string()}),
            CliError::Io(m) => json!({"status": "error", "kind": "io", "message": m}),
            CliError::Verification(failed) => {
                json!({"status": "error", "kind": "verification_failed", "failed": failed})
            }
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let text = match &cli.config {
        Some(p) => Some(
            std::fs::read_to_string(p).map_err(|e| CliError::Config(vec![format!("config: cannot read {}: {e}", p.display())]))?,
        ),
        None => None,
    };
    let base = cli
        .config
        .as_deref()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let mut overrides = Vec::new();
    if let Some(a) = cli.alpha {
        overrides.push(format!("alpha={a:?}"));
    }
    if let Some(m) = cli.resolution {
        overrides.push(format!("resolution={m}"));
    }
    if let Some(t) = cli.threads {
        overrides.push(format!("threads={t}"));
    }
    let mut resolved = config::load(text.as_deref(), &base, &[overrides, cli.sets.clone()].concat()).map_err(CliError::Config)?;
    // flag paths are relative to the working directory, not the config file
    if let Some(g) = &cli.group {
        let text = std::fs::read_to_string(g)
            .map_err(|e| CliError::Config(vec![format!("group_file: cannot read {}: {e}", g.display())]))?;
        resolved.group = group::GroupSpec::parse(&text, resolved.config.n)
            .map_err(|errs| CliError::Config(errs.into_iter().map(|m| format!("group_file: {m}")).collect()))?;
        resolved.config.group_file = Some(g.clone());
    }
    if let Some(o) = &cli.out {
        resolved.config.output_dir = o.clone();
    }
    if let Some(t) = resolved.config.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
    }
    let mut out = Outputs::new(&resolved.config.output_dir)?;
    let result = match cli.command {
        Command::Solve => commands::run_solve(&resolved, &mut out),
        Command::Kernel => commands::run_kernel(&resolved, &mut out),
        Command::Poincare => commands::run_poincare(&resolved, &mut out),
        Command::Verify => commands::run_verify(&resolved, &mut out),
        Command::MovingPlane => commands::run_moving_plane(&resolved, &mut out),
        Command::Rescale => commands::run_rescale(&resolved, &mut out),
        Command::Continue => commands::run_continue(&resolved, &mut out),
    };
    result.map(|_| out.written)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(written) => {
            let outputs: Vec<String> = written.iter().map(|p| p.display().to_string()).collect();
            println!("{}", json!({"status": "ok", "command": cli.command.name(), "outputs": outputs}));
            ExitCode::SUCCESS
        }
        Err(e) => {
            println!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
