use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stochsym_core::pipeline::{
    configure_threads_from_env, parse_stages, run_config_file, run_pipeline, PipelineRun, RunOptions, Stage,
};
use stochsym_core::scenario::{generate_rooms, RoomParams};

/// Compositional abstraction, certificate checking, safety synthesis and
/// co-simulation for networks of stochastic affine systems.
///
/// Exit codes: 0 ok, 2 condition violated, 3 config error, 4 runtime error.
/// STOCHSYM_THREADS caps the worker threads.
#[derive(Parser)]
#[command(name = "stochsym", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    config: PathBuf,
    /// Comma-separated prefix of verify,compose,abstract,synthesize,bound,simulate.
    #[arg(long)]
    stages: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct StageArgs {
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct DemoArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0.05)]
    eta: f64,
    #[arg(long, default_value_t = 0.005)]
    beta: f64,
    #[arg(long, default_value_t = 0.01)]
    theta: f64,
    #[arg(long, default_value_t = 50.0)]
    t_h: f64,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    t_e: f64,
    #[arg(long, default_value_t = 0.5)]
    g: f64,
    /// Override the number of Monte Carlo trials.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    stages: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "rooms-out")]
    out: PathBuf,
    /// Write the generated config here and exit without running it.
    #[arg(long)]
    write_config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the stages of a JSON pipeline config.
    Run(RunArgs),
    /// Generate and run the circular room network.
    DemoRooms(DemoArgs),
    /// Check the certificates and well-posedness.
    Verify(StageArgs),
    /// Verify, then check the compositional condition and aggregate constants.
    Compose(StageArgs),
    /// ... then build the finite abstractions.
    Abstract(StageArgs),
    /// ... then synthesize safety controllers.
    Synthesize(StageArgs),
    /// ... then evaluate the closeness bound.
    Bound(StageArgs),
    /// Run every stage including the co-simulation.
    Simulate(StageArgs),
}

struct Failure {
    code: u8,
    message: String,
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure { code: 3, message: message.into() }
}

fn stages_opt(list: Option<&str>) -> Result<Option<Vec<Stage>>, Failure> {
    list.map(|s| parse_stages(s).map_err(config_error)).transpose()
}

fn to_failure(e: stochsym_core::PipelineError) -> Failure {
    Failure { code: e.exit_code() as u8, message: e.to_string() }
}

fn run_file(config: &Path, opts: RunOptions) -> Result<PipelineRun, Failure> {
    run_config_file(config, &opts).map_err(to_failure)
}

fn demo(args: DemoArgs) -> Result<Option<PipelineRun>, Failure> {
    let params = RoomParams {
        n: args.n,
        eta: args.eta,
        beta: args.beta,
        theta: args.theta,
        t_h: args.t_h,
        t_e: args.t_e,
        g: args.g,
    };
    let mut cfg = generate_rooms(&params).map_err(|e| config_error(e.to_string()))?;
    if let (Some(t), Some(sim)) = (args.trials, cfg.simulation.as_mut()) {
        sim.n_trials = t;
    }
    if let Some(path) = &args.write_config {
        let text = serde_json::to_string_pretty(&cfg).map_err(|e| config_error(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Failure { code: 4, message: format!("{}: {e}", path.display()) })?;
        println!("wrote {}", path.display());
        return Ok(None);
    }
    let opts = RunOptions {
        stages: stages_opt(args.stages.as_deref())?,
        seed: args.seed,
        out_dir: Some(args.out),
        base_dir: None,
    };
    run_pipeline(&cfg, &opts).map(Some).map_err(to_failure)
}

fn report(run: &PipelineRun) {
    let names: Vec<_> = run.stages.iter().map(|s| s.name()).collect();
    println!("stages: {}", names.join(","));
    if let Some(c) = &run.composition {
        println!(
            "composition: lmi_margin={:e} kappa={} rho_ext_slope={} psi={:e} alpha_coeff={}",
            c.lmi_margin, c.ssf.kappa, c.ssf.rho_ext_slope, c.ssf.psi, c.ssf.alpha_coeff
        );
    }
    if let Some(b) = &run.bound {
        println!(
            "bound: epsilon={} horizon={} psi_hat={:e} ({:?}) violation<={:.6} success>={:.6}",
            b.reported.epsilon,
            b.reported.horizon,
            b.reported.psi_hat,
            b.psi_hat_source,
            b.reported.violation_bound,
            b.reported.success_bound
        );
    }
    if let Some(s) = &run.simulation {
        println!(
            "simulation: trials={} violations={} frequency={:.6} upper95={:.6} max_sup_error={:.6}",
            s.n_trials, s.violations, s.violation_frequency, s.violation_upper_95, s.max_sup_error
        );
    }
    println!("artifacts: {} files in {}", run.artifacts.len(), run.out_dir.display());
}

fn execute(cli: Cli) -> Result<(), Failure> {
    configure_threads_from_env().map_err(config_error)?;
    let staged = |args: StageArgs, last: Stage| {
        run_file(&args.config, RunOptions {
            stages: Some(last.prefix()),
            seed: args.seed,
            out_dir: args.out,
            base_dir: None,
        })
    };
    let run = match cli.command {
        Command::Run(a) => {
            let stages = stages_opt(a.stages.as_deref())?;
            Some(run_file(&a.config, RunOptions { stages, seed: a.seed, out_dir: a.out, base_dir: None })?)
        }
        Command::DemoRooms(a) => demo(a)?,
        Command::Verify(a) => Some(staged(a, Stage::Verify)?),
        Command::Compose(a) => Some(staged(a, Stage::Compose)?),
        Command::Abstract(a) => Some(staged(a, Stage::Abstract)?),
        Command::Synthesize(a) => Some(staged(a, Stage::Synthesize)?),
        Command::Bound(a) => Some(staged(a, Stage::Bound)?),
        Command::Simulate(a) => Some(staged(a, Stage::Simulate)?),
    };
    if let Some(run) = run {
        report(&run);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
