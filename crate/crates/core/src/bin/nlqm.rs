use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nlqm::experiment::{run_experiment, validate_config, ExperimentKind, EXIT_VALIDATION};

#[derive(Parser)]
#[command(name = "nlqm", version, about = "Nonlinear Schrodinger evolution experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Run RK4 with a time step above the stability bound.
    #[arg(long)]
    allow_unstable_dt: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve a single state and record its trajectory.
    Evolve(RunArgs),
    /// Test whether joint evolution of a product state stays a product.
    Separation(RunArgs),
    /// Measure the conditional signal after a remote measurement.
    Signal(RunArgs),
    /// Scan the first-order signal against localization sharpness.
    Amplification(RunArgs),
    /// Check regularized-delta asymptotics against smooth test functions.
    Regcheck(RunArgs),
    /// Extract and fit the plane-wave dispersion relation.
    Dispersion(RunArgs),
    /// Check the continuity equation with a diffusion term.
    FokkerPlanck(RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Evolve(a) => (ExperimentKind::Evolve, a),
        Command::Separation(a) => (ExperimentKind::Separation, a),
        Command::Signal(a) => (ExperimentKind::Signal, a),
        Command::Amplification(a) => (ExperimentKind::Amplification, a),
        Command::Regcheck(a) => (ExperimentKind::Regcheck, a),
        Command::Dispersion(a) => (ExperimentKind::Dispersion, a),
        Command::FokkerPlanck(a) => (ExperimentKind::FokkerPlanck, a),
    };
    let level = match args.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
    };
    let cfg = match validate_config(&text, Some(kind), args.allow_unstable_dt) {
        Ok(c) => c,
        Err(errors) => {
            eprintln!("invalid configuration {}:", args.config.display());
            for e in errors {
                eprintln!("  {e}");
            }
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
    };
    let out = args
        .output
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(format!("out/{}", kind.name())));

    let bundle = run_experiment(&cfg);
    print!("{}", bundle.summary_text());
    match bundle.write(&out) {
        Ok(files) => log::info!("wrote {} files to {}", files.len(), out.display()),
        Err(e) => {
            eprintln!("error: cannot write report to {}: {e}", out.display());
            return ExitCode::from(1);
        }
    }
    ExitCode::from(bundle.status.exit_code() as u8)
}
