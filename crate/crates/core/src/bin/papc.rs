use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use papc::config::ExperimentConfig;
use papc::experiment::{prepare, run_experiment, RunSettings};
use papc::{zoo, Error};

#[derive(Parser)]
#[command(name = "papc", version, about = "Stochastic projected primal-dual splitting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run this single seed instead of the configured list.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Maximum number of seeds run in parallel.
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory (overrides run.output).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run even if a hypothesis check fails.
        #[arg(long)]
        force: bool,
    },
    /// Check the step-size and noise hypotheses of a config without running.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Show the problem registry.
    Zoo {
        #[arg(long)]
        list: bool,
    },
}

const EXIT_FAILURE: u8 = 1;
const EXIT_REJECTED: u8 = 2;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Oracle(_) | Error::Divergence { .. } => EXIT_FAILURE,
        _ => EXIT_REJECTED,
    }
}

/// A config that cannot be read is a rejected config.
fn load(path: &std::path::Path) -> papc::Result<ExperimentConfig> {
    ExperimentConfig::load(path).map_err(|e| match e {
        Error::Io { .. } => Error::Config(e.to_string()),
        e => e,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn execute(command: Command) -> papc::Result<u8> {
    match command {
        Command::Run {
            config,
            seed_override,
            jobs,
            out,
            force,
        } => {
            if jobs == Some(0) {
                return Err(Error::Config("--jobs must be at least 1".into()));
            }
            let cfg = load(&config)?;
            let settings = RunSettings {
                out,
                jobs,
                force,
                seed_override,
            };
            let outcome = run_experiment(&cfg, &settings)?;
            let a = &outcome.summary.aggregate;
            println!("wrote {}", outcome.out_dir.display());
            println!(
                "seeds {}  max |x - x̄| {:.3e}  max |v - v̄| {:.3e}",
                outcome.summary.seeds.len(),
                a.max_dist_x,
                a.max_dist_v
            );
            if let (Some(gap), Some(bound)) = (a.mean_gap_final, a.bound_final) {
                println!("final gap {gap:.3e}  bound {bound:.3e}");
            }
            if outcome.diverged() {
                eprintln!("diverged seeds: {:?}", a.diverged_seeds);
                return Ok(EXIT_FAILURE);
            }
            Ok(0)
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            let p = prepare(&cfg)?;
            for c in &p.hypotheses.checks {
                println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
            }
            match &p.summability {
                Ok(r) if r.note.is_empty() => println!("ok   noise summability"),
                Ok(r) => println!("ok   noise summability: {}", r.note),
                Err(e) => println!("FAIL noise summability: {e}"),
            }
            if let Some(cv) = &p.composite {
                let ok = cv.passed();
                println!(
                    "{} composite step sizes{}",
                    if ok { "ok  " } else { "FAIL" },
                    if cv.discrepancy { " (blockwise and lifted checks disagree)" } else { "" }
                );
            }
            Ok(if p.certified() { 0 } else { EXIT_REJECTED })
        }
        Command::Zoo { list: _ } => {
            for e in zoo::zoo() {
                println!("{:<6} {}", e.name, e.description);
            }
            Ok(0)
        }
    }
}
