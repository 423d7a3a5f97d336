use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser)]
#[command(name = "lsm", version, about = "Coarse-to-fine subspace minimization for stereo, optical flow and segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Horizontal disparity such that source(p + d) = target(p); writes PFM.
    Stereo {
        target: PathBuf,
        source: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Optical flow such that source(p + f) = target(p); writes .flo.
    Flow {
        target: PathBuf,
        source: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Interactive segmentation from a JSON file of scribble polylines; writes a mask PNG.
    Iseg {
        image: PathBuf,
        scribbles: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Propagates a mask from the previous frame to the current one; writes a mask PNG.
    Vseg {
        prev: PathBuf,
        cur: PathBuf,
        prev_mask: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Runs the solver self-check suites; exits 1 if any suite fails.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Runs every task on synthetic scenes with known answers.
    Bench {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Writes a generator weight file.
    Weights {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = WeightInit::Identity)]
        init: WeightInit,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Feature channels per level, coarse to fine.
        #[arg(long, value_delimiter = ',', default_value = "32,32,16,16")]
        channels: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
        k_schedule: Vec<usize>,
    },
}

#[derive(Args, Debug, Clone)]
pub struct SolverArgs {
    /// Pyramid levels, keeping the finest ones (1-4).
    #[arg(long, default_value_t = 4)]
    pub levels: usize,
    /// Basis dimension per level, coarse to fine, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub k_schedule: Option<Vec<usize>>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// `rel:<factor>` (scaled by the mean diagonal) or `abs:<lambda>`; a bare number is relative.
    #[arg(long, value_parser = commands::parse_damping)]
    pub damping: Option<lsm_core::solver::Damping>,
    /// `analytic`, `patches` or `generated:<weights.lsmw>`.
    #[arg(long, default_value = "analytic")]
    pub basis: String,
}

#[derive(Args, Debug, Clone)]
pub struct OutputArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Writes per-iteration energies, step norms and timings as JSON.
    #[arg(long)]
    pub json_report: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum WeightInit {
    Identity,
    Random,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Stereo { target, source, solver, output } => commands::stereo(&target, &source, &solver, &output),
        Command::Flow { target, source, solver, output } => commands::flow(&target, &source, &solver, &output),
        Command::Iseg { image, scribbles, solver, output } => commands::iseg(&image, &scribbles, &solver, &output),
        Command::Vseg { prev, cur, prev_mask, solver, output } => {
            commands::vseg(&prev, &cur, &prev_mask, &solver, &output)
        }
        Command::Verify { seed } => commands::verify(seed),
        Command::Bench { seed, solver } => commands::bench(seed, &solver),
        Command::Weights { out, init, seed, channels, k_schedule } => {
            commands::weights(&out, matches!(init, WeightInit::Random), seed, &channels, &k_schedule)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
