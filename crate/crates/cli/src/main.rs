use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mim_cli::check::run_checks;
use mim_cli::run::{fit, run, Overrides};
use mim_cli::CliError;
use mim_core::gallery::GALLERY;

#[derive(Parser)]
#[command(
    name = "mim",
    version,
    about = "Gaussian multi-index gradient flow experiments"
)]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Base seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; all output paths are relative to it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// List the named example targets.
    Gallery {
        #[arg(long)]
        list: bool,
    },
    /// Fit escape-time exponents from an escapes.json file.
    Fit { escapes: PathBuf },
    /// Run the invariant suite.
    Check,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config } => {
            let ov = Overrides {
                seed: cli.seed,
                out: cli.out,
                workers: cli.workers,
            };
            let out = run(&config, &ov)?;
            println!("wrote {}", out.display());
        }
        Command::Gallery { list: _ } => {
            for (name, desc) in GALLERY {
                println!("{name:<16} {desc}");
            }
        }
        Command::Fit { escapes } => {
            let v = fit(&escapes, cli.out.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&v)?);
        }
        Command::Check => {
            let results = run_checks();
            let failed = results.iter().filter(|r| !r.pass).count();
            for r in &results {
                println!(
                    "{} {}: {}",
                    if r.pass { "PASS" } else { "FAIL" },
                    r.name,
                    r.detail
                );
            }
            if failed > 0 {
                return Err(CliError::ChecksFailed(failed));
            }
        }
    }
    Ok(())
}
