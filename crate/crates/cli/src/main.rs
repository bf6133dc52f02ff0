//! `styledistill`: train collaborator decoders, distill compact student
//! encoders, stylize images (WCT / AdaIN / optimization-based), evaluate
//! style distances, and report analytic model costs.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
//! divergence, 70 internal invariant breach.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::RunContext;
use styledistill_core::error::Error;

#[derive(Parser)]
#[command(name = "styledistill", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Omit wall-clock fields so reruns are byte-identical.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a mirrored decoder against a frozen encoder (step 1).
    TrainDecoder(CommonArgs),
    /// Distill a narrow student encoder against a frozen collaborator (step 2).
    Distill(CommonArgs),
    /// WCT or AdaIN stylization with a trained model bundle.
    Stylize(CommonArgs),
    /// Optimization-based stylization with a quasi-Newton solver.
    Gatys(CommonArgs),
    /// Style distances of stylized images against their style references.
    Eval(CommonArgs),
    /// Analytic parameter/FLOP/memory/max-resolution report for two models.
    Bench(CommonArgs),
    /// Train two pairs with different seeds and cross-evaluate all four
    /// encoder-decoder combinations.
    CrossPair(CommonArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Spec(_) | Error::Arg(_) | Error::Infeasible(_) => 2,
        Error::Data(_) | Error::Io(_) | Error::Image(_) | Error::Checkpoint(_)
        | Error::Degenerate(_) => 3,
        Error::Divergence { .. } => 4,
    }
}

macro_rules! dispatch {
    ($args:expr, $cfg_ty:ty, $runner:path) => {{
        let args: &CommonArgs = $args;
        let mut cfg: $cfg_ty = config::parse(&args.config)?;
        let ctx = RunContext::resolve(
            args.seed,
            args.out.clone(),
            &mut cfg.seed,
            &mut cfg.out,
            args.deterministic,
        )?;
        config::write_resolved(&cfg, &ctx.out)?;
        $runner(&cfg, &ctx)
    }};
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    match &cli.command {
        Command::TrainDecoder(a) => {
            dispatch!(a, config::TrainDecoderConfig, commands::cmd_train_decoder)
        }
        Command::Distill(a) => dispatch!(a, config::DistillConfig, commands::cmd_distill),
        Command::Stylize(a) => dispatch!(a, config::StylizeConfig, commands::cmd_stylize),
        Command::Gatys(a) => dispatch!(a, config::GatysConfig, commands::cmd_gatys),
        Command::Eval(a) => dispatch!(a, config::EvalConfig, commands::cmd_eval),
        Command::Bench(a) => dispatch!(a, config::BenchConfig, commands::cmd_bench),
        Command::CrossPair(a) => dispatch!(a, config::CrossPairConfig, commands::cmd_cross_pair),
    }
}
