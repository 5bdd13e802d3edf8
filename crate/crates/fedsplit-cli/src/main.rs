use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedsplit::accountant;
use fedsplit::theory::{monte_carlo_divergence, variance_lower_bound, ConvexSpec};

use fedsplit_cli::config;
use fedsplit_cli::runner;

/// Simulator for client-level differentially private federated learning
/// with adaptive sub-client splitting.
#[derive(Parser)]
#[command(name = "fedsplit", version, about)]
struct Cli {
    /// Size of the worker thread pool (parallel builds only).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one experiment from a config file.
    Run(RunArgs),
    /// Convert between noise multipliers and privacy budgets.
    Calibrate(CalibrateArgs),
    /// Run one experiment per value of a swept axis.
    Sweep(RunArgs),
    /// Check the cumulative-variance lower bound by Monte Carlo.
    Bounds(BoundsArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment description (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for CSV/JSON/SVG artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Replace the config's seed list with a single seed.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Also write SVG line charts.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Noise multiplier to convert to a budget.
    #[arg(long, conflicts_with = "epsilon")]
    z: Option<f64>,
    /// Target budget to convert to a noise multiplier.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Number of composed rounds.
    #[arg(long, short = 'T', default_value_t = 100)]
    rounds: u32,
    #[arg(long, default_value_t = 1e-2)]
    delta: f64,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1)]
    k: u32,
    #[arg(long, default_value_t = 50)]
    steps: u32,
    #[arg(long, default_value_t = 2000)]
    trials: u32,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long, default_value_t = 10)]
    seed: u64,
    /// Optional CSV output path for (t, bound, estimate, ci_half).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("FEDSPLIT_LOG")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        fedsplit::parallel::configure_threads(n);
    }
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args, false),
        Command::Sweep(args) => cmd_run(args, true),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Bounds(args) => cmd_bounds(args),
    };
    match outcome {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

fn cmd_run(args: RunArgs, sweep: bool) -> Result<ExitCode, String> {
    let mut cfg = config::load(&args.config).map_err(|e| e.to_string())?;
    if let Some(seed) = args.seed_override {
        cfg.seeds = vec![seed];
    }
    if sweep && cfg.raw.sweep.is_none() {
        return Err("config field `sweep`: required for the sweep command".into());
    }
    let run = if sweep {
        runner::cmd_sweep(&cfg, &args.out, args.svg)
    } else {
        runner::cmd_run(&cfg, &args.out, args.svg)
    };
    run.map_err(|e| e.to_string())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<ExitCode, String> {
    let (z, epsilon) = match (args.z, args.epsilon) {
        (Some(z), None) => {
            let eps =
                accountant::epsilon_for(z, args.rounds, args.delta).map_err(|e| e.to_string())?;
            (z, eps)
        }
        (None, Some(epsilon)) => {
            let z = accountant::calibrate_z(epsilon, args.rounds, args.delta)
                .map_err(|e| e.to_string())?;
            (z, epsilon)
        }
        _ => return Err("give exactly one of --z or --epsilon".into()),
    };
    println!("z        rounds   delta        epsilon");
    println!(
        "{z:<8.4} {:<8} {:<12.3e} {epsilon:.4}",
        args.rounds, args.delta
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_bounds(args: BoundsArgs) -> Result<ExitCode, String> {
    let spec = ConvexSpec {
        mu: args.mu,
        beta: args.beta,
        eta: args.eta,
        sigma: args.sigma,
        k: args.k,
        steps: args.steps,
    };
    let points = monte_carlo_divergence(&spec, args.dim, args.trials, args.seed)
        .map_err(|e| e.to_string())?;
    let mut csv = String::from("t,analytic_bound,estimate,ci_half\n");
    let mut holds = true;
    for p in &points {
        let bound =
            variance_lower_bound(&spec, p.t - 1).map_err(|e| e.to_string())? * args.dim as f64;
        if p.mean_sq + p.ci_half < bound {
            holds = false;
        }
        csv.push_str(&format!("{},{},{},{}\n", p.t, bound, p.mean_sq, p.ci_half));
    }
    if let Some(path) = &args.out {
        std::fs::write(path, &csv).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    } else {
        print!("{csv}");
    }
    let a = spec.rate_base();
    if a >= 1.0 {
        println!("note: divergent regime (rate base {a:.4} >= 1)");
    }
    if holds {
        println!("variance lower bound holds at every step: PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("variance lower bound violated: FAIL");
        Ok(ExitCode::FAILURE)
    }
}
