use std::path::PathBuf;

use anyhow::{ensure, Context, Result};
use clap::Subcommand;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stochgame_core::exact::{shifted_walsh_moments, sign_pattern_search, to_f64, Q};
use stochgame_core::game::{sunspot_extend, validate_game};
use stochgame_core::generators::{
    levy_defect_matrix, make_levy_kernel, make_noisy_game, random_noisy_params, random_nowak, random_payoffs,
    LevyParams,
};
use stochgame_core::io::{self, Dec};
use stochgame_core::kernel::{block_rank_profile, check_coarser, KernelMatrix, DEFAULT_RANK_THRESHOLD};
use stochgame_core::measure::{half_split, is_g_atom, purify_selection, RetainedSet};
use stochgame_core::{solve, CandidateField, Cell, Error, GridSpace, SolverOptions, StepFunction};

#[derive(Debug, Subcommand)]
pub enum Demo {
    /// Block ranks of Levy's transition under refinement.
    Levy {
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Number of θ-players.
        #[arg(long, default_value_t = 1)]
        m: usize,
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
        sizes: Vec<usize>,
        /// Coarse blocks per grid (block size is N divided by this).
        #[arg(long, default_value_t = 2)]
        blocks: usize,
    },
    /// Solve a random Nowak-type game.
    Nowak {
        #[arg(long, default_value_t = 32)]
        cells: usize,
        #[arg(long, default_value_t = 2)]
        j: usize,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = 0.9)]
        beta_max: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the generated game spec here.
        #[arg(long)]
        spec_out: Option<PathBuf>,
        /// Write the result here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random noisy games: coarseness and half-splits.
    Noisy {
        #[arg(long, default_value_t = 3)]
        h: usize,
        #[arg(long, default_value_t = 4)]
        r: usize,
        #[arg(long, default_value_t = 100)]
        draws: usize,
        #[arg(long, default_value_t = 20)]
        splits: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Extend a random Nowak game by a sunspot coordinate and re-solve.
    Sunspot {
        #[arg(long, default_value_t = 32)]
        cells: usize,
        #[arg(long, default_value_t = 2)]
        sunspot: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Purification failing on a G-atom.
    Prop2,
    /// Walsh moments on 2^k atomic cells admit no ±1 selection.
    Prop3 {
        #[arg(long, default_value_t = 4)]
        k: u32,
    },
}

pub fn run(demo: Demo) -> Result<()> {
    match demo {
        Demo::Levy {
            alpha,
            m,
            sizes,
            blocks,
        } => levy(alpha, m, &sizes, blocks),
        Demo::Nowak {
            cells,
            j,
            k,
            beta_max,
            seed,
            spec_out,
            out,
        } => nowak(cells, j, k, beta_max, seed, spec_out, out),
        Demo::Noisy {
            h,
            r,
            draws,
            splits,
            seed,
        } => noisy(h, r, draws, splits, seed),
        Demo::Sunspot { cells, sunspot, seed } => sunspot_demo(cells, sunspot, seed),
        Demo::Prop2 => prop2(),
        Demo::Prop3 { k } => prop3(k),
    }
}

fn levy(alpha: f64, m: usize, sizes: &[usize], blocks: usize) -> Result<()> {
    ensure!(blocks >= 1, "need at least one block");
    println!("n\tblock\tranks\tcoarser");
    for &n in sizes {
        ensure!(n % blocks == 0, "grid size {n} is not divisible into {blocks} blocks");
        let p = LevyParams {
            alpha,
            m,
            n,
            block: n / blocks,
        };
        let spec = make_levy_kernel(&p, None, vec![0.5; 4 + m])?;
        let mtx = levy_defect_matrix(&spec);
        let ranks = block_rank_profile(&mtx, DEFAULT_RANK_THRESHOLD)?;
        let row_blocks = mtx.blocks();
        let shown: Vec<String> = ranks
            .iter()
            .zip(&row_blocks)
            .filter(|(_, b)| !b.is_empty())
            .map(|(r, _)| r.to_string())
            .collect();
        println!("{n}\t{}\t{}\t{}", p.block, shown.join(","), check_coarser(&mtx));
    }
    Ok(())
}

fn nowak(
    cells: usize,
    j: usize,
    k: usize,
    beta_max: f64,
    seed: u64,
    spec_out: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = random_nowak(&mut rng, cells, j, k, &[2, 2], beta_max)?;
    if let Some(path) = &spec_out {
        std::fs::write(path, io::game_spec_to_json(&spec)).with_context(|| format!("writing {}", path.display()))?;
    }
    let ranks = block_rank_profile(&KernelMatrix::from_spec(&spec), DEFAULT_RANK_THRESHOLD)?;
    println!("states {} components {j} atoms {k}", spec.n_states());
    println!("divisible block rank {}", ranks[0]);
    let result = solve(
        &spec,
        &SolverOptions {
            seed,
            ..SolverOptions::default()
        },
    )?;
    println!("epsilon {}", Dec(result.epsilon));
    println!("iterations {}", result.diagnostics.iterations);
    println!("restarts {}", result.diagnostics.restarts);
    if let Some(path) = &out {
        std::fs::write(path, io::result_to_json(&spec, &result))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn noisy(h: usize, r: usize, draws: usize, splits: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut passed = 0;
    println!("draw\tcoarser\thalf_splits");
    for draw in 0..draws {
        let p = random_noisy_params(&mut rng, h, r, 4);
        let config = random_payoffs(&mut rng, h * r, &[2, 2], 0.9);
        let g = make_noisy_game(&p, &config)?;
        let coarser = check_coarser(&g.raw_kernel);
        let space = &g.spec.space;
        let mut ok = 0;
        for _ in 0..splits {
            let d = random_set(&mut rng, space)?;
            if halves(&d, space)? {
                ok += 1;
            }
        }
        println!("{draw}\t{coarser}\t{ok}/{splits}");
        if coarser && ok == splits {
            passed += 1;
        }
    }
    println!("passed {passed}/{draws}");
    ensure!(passed == draws, "some noisy draws failed");
    Ok(())
}

/// Random positive-mass set retaining a random share of random cells.
fn random_set(rng: &mut ChaCha8Rng, space: &GridSpace) -> Result<RetainedSet> {
    let n = space.n_cells();
    let mut entries = Vec::new();
    for k in 0..n {
        if rng.gen_bool(0.5) {
            entries.push((k, space.mass(k) * rng.gen_range(0.05..=1.0)));
        }
    }
    if entries.is_empty() {
        entries.push((0, space.mass(0)));
    }
    Ok(RetainedSet::new(space, &entries)?)
}

fn halves(d: &RetainedSet, space: &GridSpace) -> Result<bool> {
    let split = half_split(d, space)?;
    let got: Vec<f64> = split.coarse_integrals(space, None).into_iter().map(|v| v[0]).collect();
    Ok(got
        .iter()
        .zip(d.by_coarse(space))
        .all(|(a, b)| (a - 0.5 * b).abs() <= 1e-12))
}

fn sunspot_demo(cells: usize, sunspot: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = random_nowak(&mut rng, cells, 2, 1, &[2, 2], 0.9)?;
    let ext = sunspot_extend(&spec, sunspot)?;
    let report = validate_game(&ext);
    println!("validation {report}");
    println!("coarser {}", check_coarser(&KernelMatrix::from_spec(&ext)));
    let base = solve(
        &spec,
        &SolverOptions {
            seed,
            ..SolverOptions::default()
        },
    )?;
    let extended = solve(
        &ext,
        &SolverOptions {
            seed,
            ..SolverOptions::default()
        },
    )?;
    println!("game\tstates\tepsilon");
    println!("original\t{}\t{}", spec.n_states(), Dec(base.epsilon));
    println!("extended\t{}\t{}", ext.n_states(), Dec(extended.epsilon));
    Ok(())
}

fn prop2() -> Result<()> {
    // D is an atomic cell alone in its coarse cell
    let space = GridSpace::new(vec![Cell::atomic(0.5), Cell::divisible(0.5)], vec![0, 1])?;
    let d = RetainedSet::cells(&space, &[0])?;
    println!("D is a G-atom: {}", is_g_atom(&d, &space).is_atom());
    let vprime = StepFunction::scalar(vec![0.5, 0.0])?;
    let candidates = CandidateField::new(vec![vec![vec![0.0], vec![1.0]], vec![vec![0.0]]])?;
    match purify_selection(&vprime, &candidates, &[], &space) {
        Err(Error::NoSelection { coarse }) => println!("atomic D: NoSelection on coarse cell {coarse}"),
        Ok(_) => anyhow::bail!("purification unexpectedly succeeded on a G-atom"),
        Err(e) => return Err(e.into()),
    }
    let soft = GridSpace::new(vec![Cell::divisible(0.5), Cell::divisible(0.5)], vec![0, 1])?;
    let sel = purify_selection(&vprime, &candidates, &[], &soft)?;
    let pieces: Vec<String> = sel
        .pieces(0)
        .iter()
        .map(|p| format!("{:.6}->{}", p.fraction, p.value[0]))
        .collect();
    println!("divisible D: split {}", pieces.join(" "));
    Ok(())
}

fn prop3(k: u32) -> Result<()> {
    ensure!(
        (1..=4).contains(&k),
        "k must lie in 1..=4 (2^k cells, 2^(2^k) patterns)"
    );
    let n = 1usize << k;
    let space = GridSpace::new(vec![Cell::atomic(1.0 / n as f64); n], vec![0; n])?;
    let exact = shifted_walsh_moments(k);
    let moments = exact
        .iter()
        .map(|row| StepFunction::scalar(row.iter().map(to_f64).collect()))
        .collect::<stochgame_core::Result<Vec<_>>>()?;
    let vprime = StepFunction::scalar(vec![0.0; n])?;
    let candidates = CandidateField::uniform(n, vec![vec![-1.0], vec![1.0]])?;
    match purify_selection(&vprime, &candidates, &moments, &space) {
        Err(Error::NoSelection { .. }) => {}
        Ok(_) => anyhow::bail!("purification unexpectedly succeeded"),
        Err(e) => return Err(e.into()),
    }
    let search = sign_pattern_search(&exact, &vec![Q::from_integer(0.into()); n])?;
    ensure!(search.matching.is_none(), "exhaustive search found a selection");
    println!(
        "NoSelection confirmed by exhaustive search ({} patterns)",
        search.patterns
    );
    Ok(())
}
