use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cmc_tubes_cli::{emit, init_workers, run, CliError, Command, RunConfig};

/// Constant mean curvature tubes around a closed geodesic.
#[derive(Parser)]
#[command(name = "cmc-tubes", version)]
struct Cli {
    /// Start from a saved config (a bare RunConfig or a JSON result).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    opts: Opts,
    #[command(subcommand)]
    command: Option<Cmd>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Radius windows between consecutive resonances.
    Gaps,
    /// Solve for the leaf at one radius (JSON).
    Solve,
    /// Solve at sample radii in every window (CSV).
    Sweep,
    /// Jacobi spectrum and index of a leaf (JSON); defaults to the midpoint of the first window.
    Index,
    /// Degenerate radii of the flat cylinder and their nullities.
    Bifurcation,
    /// Scaled tube measures and first variation as the radius shrinks.
    Limits,
    /// Run the invariant checks; exits nonzero if any fails.
    Check,
}

#[derive(Args)]
struct Opts {
    /// Builtin model name or model file.
    #[arg(global = true, long)]
    model: Option<String>,
    #[arg(global = true, long)]
    n: Option<usize>,
    /// Length of the geodesic.
    #[arg(global = true, long = "Lambda", alias = "lambda")]
    lambda: Option<f64>,
    #[arg(global = true, long = "kmin")]
    k_min: Option<usize>,
    #[arg(global = true, long = "kmax")]
    k_max: Option<usize>,
    #[arg(global = true, long)]
    rho: Option<f64>,
    #[arg(global = true, long = "rho-min")]
    rho_min: Option<f64>,
    #[arg(global = true, long = "rho-max")]
    rho_max: Option<f64>,
    #[arg(global = true, long)]
    samples: Option<usize>,
    #[arg(global = true, long)]
    tol: Option<f64>,
    #[arg(global = true, long = "delta-res")]
    delta_res: Option<f64>,
    #[arg(global = true, long = "delta-j")]
    delta_j: Option<f64>,
    #[arg(global = true, long = "delta-null")]
    delta_null: Option<f64>,
    #[arg(global = true, long)]
    c1: Option<f64>,
    #[arg(global = true, long)]
    c0: Option<f64>,
    #[arg(global = true, long)]
    ns: Option<usize>,
    #[arg(global = true, long)]
    nt: Option<usize>,
    #[arg(global = true, long = "m-gamma")]
    m_gamma: Option<usize>,
    #[arg(global = true, long)]
    seed: Option<u64>,
    #[arg(global = true, long)]
    trials: Option<usize>,
    /// Write the result here instead of stdout.
    #[arg(global = true, long)]
    out: Option<PathBuf>,
}

impl Cmd {
    fn command(self) -> Command {
        match self {
            Cmd::Gaps => Command::Gaps,
            Cmd::Solve => Command::Solve,
            Cmd::Sweep => Command::Sweep,
            Cmd::Index => Command::Index,
            Cmd::Bifurcation => Command::Bifurcation,
            Cmd::Limits => Command::Limits,
            Cmd::Check => Command::Check,
        }
    }
}

macro_rules! apply {
    ($cfg:ident, $o:ident; $($f:ident),*) => {
        $(if let Some(v) = $o.$f { $cfg.$f = v; })*
    };
}

fn build(cli: Cli) -> Result<RunConfig, CliError> {
    let base = cli.config.as_deref().map(RunConfig::load).transpose()?;
    let o = cli.opts;
    let command = match (cli.command, &base) {
        (Some(c), _) => c.command(),
        (None, Some(b)) => b.command,
        (None, None) => return Err(CliError::ConfigParse("a subcommand or --config is required".into())),
    };
    let mut cfg = match base {
        Some(mut b) => {
            b.command = command;
            b.format = command.format();
            b
        }
        None => RunConfig::new(command),
    };
    apply!(cfg, o; model, n, lambda, k_min, k_max, rho_min, rho_max, samples, tol, delta_res, delta_j, delta_null, c1, c0, ns, nt, m_gamma, seed, trials);
    if o.rho.is_some() {
        cfg.rho = o.rho;
    }
    if o.out.is_some() {
        cfg.output = o.out;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_workers().and_then(|_| build(cli)).and_then(|cfg| {
        let art = run(&cfg)?;
        emit(&cfg, &art)
    });
    match result {
        Ok(Some(text)) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.name());
            ExitCode::FAILURE
        }
    }
}
