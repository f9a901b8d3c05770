//! Certification of reported equilibria, computed directly from the game
//! data: one-shot deviation gains, the recursion residual of the reported
//! strategy, and Monte Carlo simulation of play.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::StochasticGameSpec;
use crate::solver::EquilibriumResult;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// `gains[cell][piece][player]`: best one-shot deviation gain.
    pub gains: Vec<Vec<Vec<f64>>>,
    pub epsilon: f64,
    /// Sup gap between the reported values and the right-hand side of the
    /// recursion under the reported strategy.
    pub bellman_residual: f64,
    /// Sup gap between the reported values and the exact value of the
    /// reported stationary strategy.
    pub recursion_residual: f64,
    pub simulation: Option<SimulationReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub initial_cell: usize,
    pub initial_piece: usize,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub paths: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Share of steps `t ≥ 1` spent in each cell.
    pub occupancy: Vec<f64>,
}

/// Per-state continuation data: for every profile, the one-step payoff
/// vector `(1 − β_i) u_i + β_i E[v_i(next)]` using the reported values.
struct OneStep {
    /// `w[x][i]`.
    w: Vec<Vec<f64>>,
    radices: Vec<usize>,
}

fn check_shapes(result: &EquilibriumResult, spec: &StochasticGameSpec) -> Result<()> {
    let n = spec.space.n_cells();
    if result.cells.len() != n {
        return Err(Error::invalid(format!(
            "result has {} cells, game has {n}",
            result.cells.len()
        )));
    }
    for (s, pieces) in result.cells.iter().enumerate() {
        if pieces.is_empty() || (!spec.space.is_divisible(s) && pieces.len() != 1) {
            return Err(Error::invalid(format!("cell {s} has an invalid piece list")));
        }
        let total: f64 = pieces.iter().map(|p| p.fraction).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("piece fractions of cell {s} sum to {total}")));
        }
        for p in pieces {
            if p.value.len() != spec.players || p.strategy.len() != spec.players {
                return Err(Error::invalid(format!(
                    "cell {s} carries a piece of the wrong dimension"
                )));
            }
            for (i, f) in p.strategy.iter().enumerate() {
                let sum: f64 = f.iter().sum();
                if f.len() != spec.feasible[s][i].len() || f.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(format!(
                        "cell {s}: strategy of player {i} is not a distribution over its feasible actions"
                    )));
                }
            }
        }
    }
    Ok(())
}

fn cell_means(result: &EquilibriumResult, m: usize) -> Vec<Vec<f64>> {
    result
        .cells
        .iter()
        .map(|pieces| {
            let mut v = vec![0.0; m];
            for p in pieces {
                for i in 0..m {
                    v[i] += p.fraction * p.value[i];
                }
            }
            v
        })
        .collect()
}

/// Probability of moving to each cell from `(s, x)`; atoms take their mass
/// from the atom kernel.
fn next_cell_law(spec: &StochasticGameSpec, atom_pos: &[Option<usize>], s: usize, x: usize) -> Vec<f64> {
    (0..spec.space.n_cells())
        .map(|k| match atom_pos[k] {
            Some(a) => spec.atom_kernel[s][x][a],
            None => spec.density(s, x, k) * spec.space.mass(k),
        })
        .collect()
}

fn atom_positions(spec: &StochasticGameSpec) -> Vec<Option<usize>> {
    let mut pos = vec![None; spec.space.n_cells()];
    for (a, k) in spec.atoms().into_iter().enumerate() {
        pos[k] = Some(a);
    }
    pos
}

fn one_step(spec: &StochasticGameSpec, atom_pos: &[Option<usize>], means: &[Vec<f64>], s: usize) -> OneStep {
    let m = spec.players;
    let radices: Vec<usize> = spec.feasible[s].iter().map(Vec::len).collect();
    let n_prof: usize = radices.iter().product();
    let w = (0..n_prof)
        .map(|x| {
            let law = next_cell_law(spec, atom_pos, s, x);
            (0..m)
                .map(|i| {
                    let cont: f64 = law.iter().zip(means).map(|(p, v)| p * v[i]).sum();
                    let b = spec.discounts[i];
                    (1.0 - b) * spec.payoffs[s][x][i] + b * cont
                })
                .collect()
        })
        .collect();
    OneStep { w, radices }
}

/// Decodes profile `x` with the last player fastest.
fn decode(radices: &[usize], mut x: usize) -> Vec<usize> {
    let mut out = vec![0; radices.len()];
    for i in (0..radices.len()).rev() {
        out[i] = x % radices[i];
        x /= radices[i];
    }
    out
}

/// Expected `w_i` under `f` and the best value of a pure deviation by `i`.
fn expected_and_best(step: &OneStep, f: &[Vec<f64>], i: usize) -> (f64, f64) {
    let mut by_action = vec![0.0; step.radices[i]];
    let mut expected = 0.0;
    for (x, w) in step.w.iter().enumerate() {
        let prof = decode(&step.radices, x);
        let others: f64 = prof
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(j, &a)| f[j][a])
            .product();
        by_action[prof[i]] += others * w[i];
        expected += others * f[i][prof[i]] * w[i];
    }
    (expected, by_action.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// One-shot deviation gains at every piece of every state, the recursion
/// residual, and the exact value gap of the reported strategy.
pub fn deviation_residual(result: &EquilibriumResult, spec: &StochasticGameSpec) -> Result<Certificate> {
    check_shapes(result, spec)?;
    let m = spec.players;
    let means = cell_means(result, m);
    let atom_pos = atom_positions(spec);
    let per_state: Vec<(Vec<Vec<f64>>, f64)> = (0..spec.n_states())
        .into_par_iter()
        .map(|s| {
            let step = one_step(spec, &atom_pos, &means, s);
            let mut gains = Vec::with_capacity(result.cells[s].len());
            let mut bellman = 0.0_f64;
            for piece in &result.cells[s] {
                let mut g = Vec::with_capacity(m);
                for i in 0..m {
                    let (expected, best) = expected_and_best(&step, &piece.strategy, i);
                    g.push((best - expected).max(0.0));
                    bellman = bellman.max((expected - piece.value[i]).abs());
                }
                gains.push(g);
            }
            (gains, bellman)
        })
        .collect();
    let epsilon = per_state
        .iter()
        .flat_map(|(g, _)| g.iter().flatten())
        .fold(0.0_f64, |a, &b| a.max(b));
    let bellman_residual = per_state.iter().fold(0.0_f64, |a, (_, b)| a.max(*b));
    let policy = policy_value(result, spec)?;
    let recursion_residual = result
        .cells
        .iter()
        .flatten()
        .zip(&policy)
        .flat_map(|(p, v)| p.value.iter().zip(v).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    Ok(Certificate {
        gains: per_state.into_iter().map(|(g, _)| g).collect(),
        epsilon,
        bellman_residual,
        recursion_residual,
        simulation: None,
    })
}

/// Exact discounted value of the reported stationary strategy, one vector
/// per piece in cell-then-piece order. Moving into a divisible cell lands in
/// each of its pieces in proportion to the piece fractions.
pub fn policy_value(result: &EquilibriumResult, spec: &StochasticGameSpec) -> Result<Vec<Vec<f64>>> {
    check_shapes(result, spec)?;
    let m = spec.players;
    let atom_pos = atom_positions(spec);
    let offsets: Vec<usize> = result
        .cells
        .iter()
        .scan(0, |acc, p| {
            let o = *acc;
            *acc += p.len();
            Some(o)
        })
        .collect();
    let n_pieces: usize = result.cells.iter().map(Vec::len).sum();
    let mut p_mat = DMatrix::<f64>::zeros(n_pieces, n_pieces);
    let mut rewards = vec![vec![0.0; m]; n_pieces];
    for s in 0..spec.n_states() {
        let radices: Vec<usize> = spec.feasible[s].iter().map(Vec::len).collect();
        let n_prof: usize = radices.iter().product();
        let laws: Vec<Vec<f64>> = (0..n_prof).map(|x| next_cell_law(spec, &atom_pos, s, x)).collect();
        for (u, piece) in result.cells[s].iter().enumerate() {
            let row = offsets[s] + u;
            for x in 0..n_prof {
                let prob: f64 = decode(&radices, x)
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| piece.strategy[i][a])
                    .product();
                if prob == 0.0 {
                    continue;
                }
                for i in 0..m {
                    rewards[row][i] += prob * spec.payoffs[s][x][i];
                }
                for (k, &p) in laws[x].iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    for (v, target) in result.cells[k].iter().enumerate() {
                        p_mat[(row, offsets[k] + v)] += prob * p * target.fraction;
                    }
                }
            }
        }
    }
    let mut out = vec![vec![0.0; m]; n_pieces];
    for i in 0..m {
        let b = spec.discounts[i];
        let a = DMatrix::<f64>::identity(n_pieces, n_pieces) - &p_mat * b;
        let rhs = DVector::from_iterator(n_pieces, rewards.iter().map(|r| (1.0 - b) * r[i]));
        let sol = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::invalid("recursion system is singular"))?;
        for (row, v) in sol.iter().enumerate() {
            out[row][i] = *v;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationOptions {
    pub paths: usize,
    pub seed: u64,
    /// Bound on the discarded tail `β^H · C`.
    pub truncation: f64,
    /// Explicit horizon; must respect `truncation`.
    pub horizon: Option<usize>,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            paths: 10_000,
            seed: 0,
            truncation: 1e-4,
            horizon: None,
        }
    }
}

/// Smallest `H` with `β^H · C ≤ truncation`.
pub fn horizon_for(beta: f64, bound: f64, truncation: f64) -> Result<usize> {
    if !(truncation > 0.0) {
        return Err(Error::invalid("truncation error must be positive"));
    }
    if beta == 0.0 || bound <= truncation {
        return Ok(1);
    }
    let h = ((truncation / bound).ln() / beta.ln()).ceil() as usize;
    let mut h = h.max(1);
    while beta.powi(h as i32) * bound > truncation {
        h += 1;
    }
    while h > 1 && beta.powi(h as i32 - 1) * bound <= truncation {
        h -= 1;
    }
    Ok(h)
}

const BLOCK: usize = 1024;

#[derive(Clone)]
struct Accumulator {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    visits: Vec<u64>,
}

impl Accumulator {
    fn new(m: usize, cells: usize) -> Self {
        Accumulator {
            n: 0.0,
            mean: vec![0.0; m],
            m2: vec![0.0; m],
            visits: vec![0; cells],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / self.n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    fn merge(mut self, other: &Accumulator) -> Self {
        let n = self.n + other.n;
        if n == 0.0 {
            return self;
        }
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * other.n / n;
            self.m2[i] += other.m2[i] + d * d * self.n * other.n / n;
        }
        self.n = n;
        for (a, b) in self.visits.iter_mut().zip(&other.visits) {
            *a += b;
        }
        self
    }
}

fn sample_index<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Discounted payoffs of the reported strategy from `(cell, piece)`,
/// averaged over independent paths. Path `p` draws from ChaCha8 seeded with
/// `seed` on stream `p`, and partial sums are merged in a fixed order, so a
/// given seed reproduces the report bit for bit.
pub fn simulate_payoffs(
    spec: &StochasticGameSpec,
    result: &EquilibriumResult,
    start: (usize, usize),
    opts: &SimulationOptions,
) -> Result<SimulationReport> {
    check_shapes(result, spec)?;
    if opts.paths == 0 {
        return Err(Error::invalid("simulation needs at least one path"));
    }
    let (s0, p0) = start;
    if s0 >= spec.n_states() || p0 >= result.cells[s0].len() {
        return Err(Error::invalid("initial state is outside the result"));
    }
    let beta = spec.max_discount();
    let minimal = horizon_for(beta, spec.payoff_bound, opts.truncation)?;
    let horizon = match opts.horizon {
        Some(h) if h < minimal => {
            return Err(Error::invalid(format!(
                "horizon {h} leaves a tail above {} (needs at least {minimal})",
                opts.truncation
            )))
        }
        Some(h) => h,
        None => minimal,
    };
    let m = spec.players;
    let n = spec.space.n_cells();
    let atom_pos = atom_positions(spec);
    let laws: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|s| {
            let n_prof: usize = spec.feasible[s].iter().map(Vec::len).product();
            (0..n_prof).map(|x| next_cell_law(spec, &atom_pos, s, x)).collect()
        })
        .collect();
    let fractions: Vec<Vec<f64>> = result
        .cells
        .iter()
        .map(|p| p.iter().map(|q| q.fraction).collect())
        .collect();
    let radices: Vec<Vec<usize>> = spec.feasible.iter().map(|f| f.iter().map(Vec::len).collect()).collect();

    let run_path = |path: usize, acc: &mut Accumulator| {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(path as u64);
        let (mut s, mut piece) = (s0, p0);
        let mut total = vec![0.0; m];
        let mut disc: Vec<f64> = spec.discounts.iter().map(|b| 1.0 - b).collect();
        for t in 0..horizon {
            if t > 0 {
                acc.visits[s] += 1;
            }
            let strategy = &result.cells[s][piece].strategy;
            let mut x = 0;
            for i in 0..m {
                x = x * radices[s][i] + sample_index(&mut rng, &strategy[i]);
            }
            for i in 0..m {
                total[i] += disc[i] * spec.payoffs[s][x][i];
                disc[i] *= spec.discounts[i];
            }
            if t + 1 < horizon {
                s = sample_index(&mut rng, &laws[s][x]);
                piece = if fractions[s].len() == 1 {
                    0
                } else {
                    sample_index(&mut rng, &fractions[s])
                };
            }
        }
        acc.push(&total);
    };

    let n_blocks = opts.paths.div_ceil(BLOCK);
    let blocks: Vec<Accumulator> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = Accumulator::new(m, n);
            for path in b * BLOCK..((b + 1) * BLOCK).min(opts.paths) {
                run_path(path, &mut acc);
            }
            acc
        })
        .collect();
    let acc = blocks.iter().fold(Accumulator::new(m, n), |a, b| a.merge(b));
    let paths = opts.paths as f64;
    let std_error = acc
        .m2
        .iter()
        .map(|m2| {
            if opts.paths > 1 {
                (m2 / (paths - 1.0) / paths).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let steps = paths * (horizon.saturating_sub(1)) as f64;
    let occupancy = acc
        .visits
        .iter()
        .map(|&v| if steps > 0.0 { v as f64 / steps } else { 0.0 })
        .collect();
    Ok(SimulationReport {
        initial_cell: s0,
        initial_piece: p0,
        mean: acc.mean,
        std_error,
        paths: opts.paths,
        horizon,
        seed: opts.seed,
        occupancy,
    })
}
