use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rtpipe::rl::Preset;
use rtpipe_cli::{cmd_bench, cmd_eval, cmd_regret, cmd_train, CliError, Overrides};

/// Pipelined real-time RL experiments.
///
/// Every flag can also be set through an environment variable with the
/// `RTPIPE_` prefix, e.g. `RTPIPE_OUT=runs/x` or `RTPIPE_PRESET=full`.
#[derive(Parser)]
#[command(name = "rtpipe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment config.
    Train(Common),
    /// Evaluate a checkpoint described by an eval config.
    Eval(Common),
    /// Sweep delay and inaction regret on the worst-case chain.
    Regret(Common),
    /// Time the three tick executors over a depth grid.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config file (optional for regret and bench).
    #[arg(long, env = "RTPIPE_CONFIG")]
    config: Option<PathBuf>,
    /// Comma-separated seeds replacing the config's; single-seed commands use the first.
    #[arg(long, env = "RTPIPE_SEED_OVERRIDE", value_delimiter = ',')]
    seed_override: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long, env = "RTPIPE_OUT")]
    out: Option<PathBuf>,
    /// Hyperparameter scale: full or desk.
    #[arg(long, env = "RTPIPE_PRESET")]
    preset: Option<Preset>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides { seeds: self.seed_override.clone(), out: self.out.clone(), preset: self.preset }
    }

    fn config(&self) -> Result<&PathBuf, CliError> {
        self.config.as_ref().ok_or_else(|| CliError::Run("--config is required".into()))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(c) => {
            let results = cmd_train(c.config()?, &c.overrides())?;
            for r in results {
                println!(
                    "seed {}: {} episodes, {} steps, final return {}, eval {}",
                    r.seed,
                    r.episodes,
                    r.env_steps,
                    r.final_return.map_or("-".into(), |v| format!("{v:.4}")),
                    r.eval_mean.map_or("-".into(), |v| format!("{v:.4}")),
                );
            }
        }
        Command::Eval(c) => {
            let s = cmd_eval(c.config()?, &c.overrides())?;
            println!("mean {:.4} ± {:.4} over {} episodes", s.mean, s.se, s.returns.len());
        }
        Command::Regret(c) => {
            for r in cmd_regret(c.config.as_deref(), &c.overrides())? {
                println!(
                    "p={} n={} δ={} N={} {}: delay {:.4} ± {:.4}, inaction {:.4}",
                    r.p, r.n_states, r.delta, r.depth, r.policy, r.delay_regret, r.ci, r.inaction_regret
                );
            }
        }
        Command::Bench(c) => {
            let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
            println!("hardware threads: {threads}");
            for r in cmd_bench(c.config.as_deref(), &c.overrides())? {
                println!(
                    "{:<18} depth {:>3}: {:>12.1} actions/s, speed-up {:.3}",
                    r.executor.name(),
                    r.depth,
                    r.actions_per_sec,
                    r.speedup_vs_sequential
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
