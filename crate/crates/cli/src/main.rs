//! `qsmooth`: simulate monitored qubit trajectories, smooth them, and write
//! the results as CSV or JSON.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "qsmooth",
    version,
    about = "Quantum state filtering and retrodictive smoothing"
)]
#[command(after_help = "Exit codes: 0 ok, 1 validation failure, 2 config error, 3 numerical failure.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One trajectory: filtered, smoothed and unconditional Bloch vectors and purities.
    Simulate(RunArgs),
    /// Seeded ensemble: mean filtered and smoothed purity with standard errors.
    Ensemble(RunArgs),
    /// Runs the built-in consistency checks and reports them as JSON.
    Validate(RunArgs),
    /// Two-state telegraph example comparing both classical smoothing routes.
    ClassicalDemo(RunArgs),
}

/// Every key can come from `--config`, `--set key=value`, or its own flag,
/// with flags taking precedence over `--set` over the file.
#[derive(Args)]
struct RunArgs {
    /// Config file of `key = value` lines; `#` starts a comment.
    #[arg(short, long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides any key, e.g. `--set n_bob=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Rabi frequency.
    #[arg(long)]
    omega: Option<String>,
    /// Spontaneous emission rate.
    #[arg(long)]
    gamma: Option<String>,
    /// Thermal photon number of the bath.
    #[arg(long)]
    nbar: Option<String>,
    /// jump, homodyne-x or homodyne-y.
    #[arg(long)]
    unraveling: Option<String>,
    /// Homodyne phase in radians, or `auto` for the unraveling's quadrature.
    #[arg(long)]
    phi: Option<String>,
    /// Time step.
    #[arg(long)]
    dt: Option<String>,
    /// Final time.
    #[arg(long = "t-final")]
    t_final: Option<String>,
    /// ground, excited, mixed, or a Bloch vector `x,y,z`.
    #[arg(long)]
    rho0: Option<String>,
    /// Detection efficiency in [0, 1].
    #[arg(long)]
    eta: Option<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<String>,
    /// Step operators: second-order or exact.
    #[arg(long)]
    form: Option<String>,
    /// Number of ensemble trajectories.
    #[arg(long = "n-traj")]
    n_traj: Option<String>,
    /// Number of sampled unobserved records for the gw smoother.
    #[arg(long = "n-bob")]
    n_bob: Option<String>,
    /// Unraveling of the unobserved channel for the gw smoother.
    #[arg(long)]
    bob: Option<String>,
    /// Extra smoothers, comma separated: recursive, swv, gw.
    #[arg(long)]
    smoothers: Option<String>,
    /// Start of the ensemble summary window.
    #[arg(long = "window-start")]
    window_start: Option<String>,
    /// End of the ensemble summary window.
    #[arg(long = "window-end")]
    window_end: Option<String>,
    /// Number of steps of the classical demo.
    #[arg(long)]
    steps: Option<String>,
    /// Uninformative outcomes in the classical demo.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    uniform: Option<String>,
    /// Output file; standard output when omitted.
    #[arg(short, long, value_name = "FILE")]
    output: Option<String>,
    /// csv or json.
    #[arg(long)]
    format: Option<String>,
}

impl RunArgs {
    fn flags(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("omega", &self.omega),
            ("gamma", &self.gamma),
            ("nbar", &self.nbar),
            ("unraveling", &self.unraveling),
            ("phi", &self.phi),
            ("dt", &self.dt),
            ("t_final", &self.t_final),
            ("rho0", &self.rho0),
            ("eta", &self.eta),
            ("seed", &self.seed),
            ("form", &self.form),
            ("n_traj", &self.n_traj),
            ("n_bob", &self.n_bob),
            ("bob", &self.bob),
            ("smoothers", &self.smoothers),
            ("window_start", &self.window_start),
            ("window_end", &self.window_end),
            ("steps", &self.steps),
            ("uniform", &self.uniform),
            ("output", &self.output),
            ("format", &self.format),
        ]
    }

    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path).map_err(CliError::Config)?;
        }
        for item in &self.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{item}`")))?;
            cfg.set(k.trim(), v)
                .map_err(|e| CliError::Config(format!("--set {item}: {e}")))?;
        }
        for (key, value) in self.flags() {
            if let Some(v) = value {
                cfg.set(key, v)
                    .map_err(|e| CliError::Config(format!("--{}: {e}", key.replace('_', "-"))))?;
            }
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (args, f): (&RunArgs, fn(&RunConfig) -> Result<(), CliError>) = match &cli.command {
        Command::Simulate(a) => (a, commands::cmd_simulate),
        Command::Ensemble(a) => (a, commands::cmd_ensemble),
        Command::Validate(a) => (a, commands::cmd_validate),
        Command::ClassicalDemo(a) => (a, commands::cmd_classical_demo),
    };
    let cfg = args.resolve()?;
    for (k, v) in cfg.entries() {
        eprintln!("# {k} = {v}");
    }
    f(&cfg)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qsmooth: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
