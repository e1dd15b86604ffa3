use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use maxent_cli::commands::{
    analyze, gridworld, simulate, synthesize_cmd, AnalyzeArgs, GridworldArgs, SimulateArgs, SynthesizeArgs, Variant,
};
use maxent_mdp::case_study::Layout;

/// Entropy-rate maximizing policies for MDPs under surveillance constraints.
///
/// Log verbosity is read from MAXENT_LOG (error, warn, info, debug, trace).
#[derive(Parser)]
#[command(name = "maxent", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Blue,
    Green,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Standard,
    AllCorridors,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObservationArg {
    Probe,
    Huffman,
}

#[derive(Subcommand)]
enum Command {
    /// MECs, levels, communicating flag and winning region.
    Analyze {
        input: PathBuf,
        #[arg(long)]
        target: Option<PathBuf>,
        /// Write the level decomposition as Graphviz DOT.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Synthesize a policy and print metrics.
    Synthesize {
        input: PathBuf,
        #[arg(long, conflicts_with = "unconstrained")]
        target: Option<PathBuf>,
        /// Treat every state as a target.
        #[arg(long)]
        unconstrained: bool,
        /// Count at least one observation per step.
        #[arg(long)]
        min_probes_one: bool,
        #[arg(long, value_enum, default_value = "probe")]
        observation: ObservationArg,
        /// Directory for policy.txt and metrics.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample paths under a policy.
    Simulate {
        input: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        horizon: usize,
        #[arg(long, default_value_t = 10)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1_000)]
        window: usize,
        /// CSV file for the sampled paths.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the five-region workspace, synthesize and export grids.
    Gridworld {
        #[arg(long, value_enum, default_value = "blue")]
        variant: VariantArg,
        #[arg(long, value_enum, default_value = "standard")]
        layout: LayoutArg,
        #[arg(long)]
        min_probes_one: bool,
        #[arg(long, value_enum, default_value = "probe")]
        observation: ObservationArg,
        #[arg(long, default_value = "gridworld-out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MAXENT_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Analyze { input, target, dot } => {
            analyze(&AnalyzeArgs { input, target: target.as_deref(), dot: dot.as_deref() })
        }
        Command::Synthesize { input, target, unconstrained, min_probes_one, observation, out } => {
            synthesize_cmd(&SynthesizeArgs {
                input,
                target: target.as_deref(),
                unconstrained: *unconstrained,
                min_probes_one: *min_probes_one,
                huffman: matches!(observation, ObservationArg::Huffman),
                out: out.as_deref(),
            })
        }
        Command::Simulate { input, policy, target, horizon, paths, seed, window, out } => simulate(&SimulateArgs {
            input,
            policy,
            target: target.as_deref(),
            horizon: *horizon,
            paths: *paths,
            seed: *seed,
            window: *window,
            out: out.as_deref(),
        }),
        Command::Gridworld { variant, layout, min_probes_one, observation, out } => gridworld(&GridworldArgs {
            variant: match variant {
                VariantArg::Blue => Variant::Blue,
                VariantArg::Green => Variant::Green,
            },
            layout: match layout {
                LayoutArg::Standard => Layout::Standard,
                LayoutArg::AllCorridors => Layout::AllCorridors,
            },
            min_probes_one: *min_probes_one,
            huffman: matches!(observation, ObservationArg::Huffman),
            out,
        }),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
