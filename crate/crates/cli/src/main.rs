use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use stochgame_core::io::{self, Dec};
use stochgame_core::kernel::{block_rank_profile, check_coarser, KernelMatrix, DEFAULT_RANK_THRESHOLD};
use stochgame_core::verify::{deviation_residual, simulate_payoffs, SimulationOptions};
use stochgame_core::{solve, Error, SolverOptions};

mod demo;

/// Environment variable holding the default worker-thread count.
const THREADS_ENV: &str = "STOCHGAME_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "stochgame",
    version,
    about = "Stationary equilibria of discounted stochastic games"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute and certify a stationary Markov perfect ε-equilibrium.
    Solve {
        #[arg(long)]
        game: PathBuf,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 500)]
        max_iter: usize,
        /// Floor of the damping weight.
        #[arg(long, default_value_t = 0.5)]
        damping: f64,
        #[arg(long, default_value_t = 3)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute the certificate of a stored result.
    Verify {
        #[arg(long)]
        game: PathBuf,
        #[arg(long)]
        result: PathBuf,
        /// Write the certificate here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate discounted play of a stored result.
    Simulate {
        #[arg(long)]
        game: PathBuf,
        #[arg(long)]
        result: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest discarded tail β^H·C.
        #[arg(long, default_value_t = 1e-4)]
        truncation: f64,
        #[arg(long)]
        horizon: Option<usize>,
        /// Initial cell.
        #[arg(long, default_value_t = 0)]
        cell: usize,
        /// Piece of the initial cell.
        #[arg(long, default_value_t = 0)]
        piece: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Block-rank profile and coarseness verdict of a kernel (text matrix or
    /// JSON game spec).
    Analyze {
        #[arg(long)]
        kernel: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RANK_THRESHOLD)]
        threshold: f64,
    },
    /// Built-in demonstrations.
    Demo {
        #[command(subcommand)]
        which: demo::Demo,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::NoConvergence { .. }) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .with_context(|| format!("{THREADS_ENV}={raw:?} is not a thread count"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Solve {
            game,
            tol,
            max_iter,
            damping,
            restarts,
            seed,
            out,
        } => {
            let spec = io::parse_game_spec(&game)?;
            let opts = SolverOptions {
                tol,
                max_iter,
                gamma_min: damping,
                restarts,
                seed,
                ..SolverOptions::default()
            };
            let result = solve(&spec, &opts)?;
            write(&out, &io::result_to_json(&spec, &result))?;
            println!("epsilon {}", Dec(result.epsilon));
            println!("iterations {}", result.diagnostics.iterations);
            println!("restarts {}", result.diagnostics.restarts);
            println!("recursion_residual {}", Dec(result.certificate.recursion_residual));
            if !result.diagnostics.count_mismatch_cells.is_empty() {
                println!("degenerate_cells {:?}", result.diagnostics.count_mismatch_cells);
            }
        }
        Command::Verify { game, result, out } => {
            let spec = io::parse_game_spec(&game)?;
            let r = io::read_result(&result, &spec)?;
            let cert = deviation_residual(&r, &spec)?;
            println!("epsilon {}", Dec(cert.epsilon));
            println!("bellman_residual {}", Dec(cert.bellman_residual));
            println!("recursion_residual {}", Dec(cert.recursion_residual));
            if cert.epsilon != r.epsilon {
                println!("note: stored epsilon {} differs", Dec(r.epsilon));
            }
            if let Some(path) = out {
                write(&path, &io::certificate_to_json(&spec, &cert))?;
            }
        }
        Command::Simulate {
            game,
            result,
            paths,
            seed,
            truncation,
            horizon,
            cell,
            piece,
            out,
        } => {
            let spec = io::parse_game_spec(&game)?;
            let r = io::read_result(&result, &spec)?;
            let opts = SimulationOptions {
                paths,
                seed,
                truncation,
                horizon,
            };
            let rep = simulate_payoffs(&spec, &r, (cell, piece), &opts)?;
            let reported = &r.cells[cell][piece].value;
            println!("player\tmean\tstd_error\treported");
            for i in 0..spec.players {
                println!(
                    "{i}\t{}\t{}\t{}",
                    Dec(rep.mean[i]),
                    Dec(rep.std_error[i]),
                    Dec(reported[i])
                );
            }
            println!("horizon {} paths {} seed {}", rep.horizon, rep.paths, rep.seed);
            if let Some(path) = out {
                let cert = stochgame_core::Certificate {
                    simulation: Some(rep),
                    ..r.certificate.clone()
                };
                write(&path, &io::certificate_to_json(&spec, &cert))?;
            }
        }
        Command::Analyze { kernel, threshold } => {
            let text = std::fs::read_to_string(&kernel).with_context(|| format!("reading {}", kernel.display()))?;
            let m = if kernel.extension().is_some_and(|e| e == "json") {
                KernelMatrix::from_spec(&io::parse_game_spec_str(&text, &kernel.display().to_string())?)
            } else {
                KernelMatrix::from_text(&text)?
            };
            let ranks = block_rank_profile(&m, threshold)?;
            let blocks = m.blocks();
            println!("block\trows\trank");
            for (e, r) in ranks.iter().enumerate() {
                if !blocks[e].is_empty() {
                    println!("{e}\t{}\t{r}", blocks[e].len());
                }
            }
            let verdict = if check_coarser(&m) { "coarser" } else { "not coarser" };
            println!("verdict {verdict}");
        }
        Command::Demo { which } => demo::run(which)?,
    }
    Ok(())
}
