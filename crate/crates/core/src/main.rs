use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use relaxfill::cli::{self, Outcome};
use relaxfill::config::RunConfig;
use relaxfill::Result;

#[derive(Parser)]
#[command(name = "relaxfill", version, about = "Complete sparsely sampled residual tensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic truth tensor, observations and misfit budget.
    Generate(Common),
    /// Run the configured solver and write its report.
    Solve(Common),
    /// Run or collect several solvers and tabulate them.
    Compare(Common),
    /// Write singular value decay curves.
    Svd(Common),
}

fn run(cli: Cli) -> Result<Outcome> {
    let (args, command) = match &cli.command {
        Command::Generate(a) => (a, "generate"),
        Command::Solve(a) => (a, "solve"),
        Command::Compare(a) => (a, "compare"),
        Command::Svd(a) => (a, "svd"),
    };
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.set_seed(seed);
    }
    match command {
        "generate" => cli::generate(&config, &args.out),
        "solve" => cli::solve(&config, &args.out),
        "compare" => {
            let (out, rows) = cli::compare(&config, &args.out)?;
            for r in rows {
                println!(
                    "{:<14} feas {:+.3e}  rms_obs {:.5}  rms_int {:.5}  {:.2}s",
                    r.algorithm, r.terminal_feasibility, r.rms_obs, r.rms_int, r.time_s
                );
            }
            Ok(out)
        }
        _ => cli::svd(&config, &args.out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(out) => {
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            for p in &out.written {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
