//! Stationary Markov perfect ε-equilibria for games with a decomposable
//! coarser kernel on the atomless part.
//!
//! The iteration runs on per-cell values `v¹`, which enter the stage games
//! only through their aggregates `c`, together with atom values `v²` and atom
//! strategies `f²`. Each outer step solves the atom block (fixed point of the
//! atom operator, then a consistent Nash choice), projects every divisible
//! cell's value onto the hull of its stage-game Nash payoffs and damps. The
//! converged convexified values are then purified into Nash payoffs with the
//! same aggregates and certified by [`crate::verify`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{validate_game, StochasticGameSpec};
use crate::hull::project_onto_hull;
use crate::measure::{purify_indexed, CandidateField, SplitPiece, SplitSelection, StepFunction};
use crate::stage::{build_stage_game, nash_enumerate_with, AggregateVector, EnumerationMode, NashPoint};
use crate::verify::{deviation_residual, Certificate};

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    /// Outer stopping rule on the fixed-point residual.
    pub tol: f64,
    /// Stopping rule of the atom operator iteration.
    pub inner_tol: f64,
    pub max_iter: usize,
    /// Floor of the damping weight `γ_t = max(γ_min, 1/(t+2))`.
    pub gamma_min: f64,
    pub restarts: usize,
    pub seed: u64,
    /// A converged run whose certified ε exceeds this triggers a restart.
    pub target_epsilon: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            inner_tol: 1e-10,
            max_iter: 500,
            gamma_min: 0.5,
            restarts: 3,
            seed: 0,
            target_epsilon: 1e-6,
        }
    }
}

/// One sub-interval of a cell: a mixed profile over the feasible actions of
/// that state and the value it realizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyPiece {
    pub fraction: f64,
    pub strategy: Vec<Vec<f64>>,
    pub value: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Outer iterations of the returned attempt.
    pub iterations: usize,
    /// Restarts used before the returned attempt.
    pub restarts: usize,
    pub converged: bool,
    /// Fixed-point residual per outer iteration.
    pub residual_history: Vec<f64>,
    /// Cells whose stage game needed a perturbed enumeration with a different
    /// equilibrium count.
    pub count_mismatch_cells: Vec<usize>,
    /// Number of Nash equilibria found per cell in the final step.
    pub equilibria_per_cell: Vec<usize>,
    /// ε recomputed from the stage games of the purified aggregates.
    pub solver_epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    /// Per state (fine cell, atoms included); atomic cells carry one piece.
    pub cells: Vec<Vec<StrategyPiece>>,
    /// Certified one-shot deviation bound (the verifier's number).
    pub epsilon: f64,
    pub certificate: Certificate,
    pub diagnostics: Diagnostics,
}

impl EquilibriumResult {
    pub fn value_selection(&self, spec: &StochasticGameSpec) -> Result<SplitSelection> {
        let cells = self
            .cells
            .iter()
            .map(|pieces| {
                pieces
                    .iter()
                    .map(|p| SplitPiece {
                        fraction: p.fraction,
                        value: p.value.clone(),
                    })
                    .collect()
            })
            .collect();
        SplitSelection::new(cells, &spec.space)
    }

    /// Fraction-weighted value of every cell.
    pub fn cell_values(&self) -> Vec<Vec<f64>> {
        self.cells
            .iter()
            .map(|pieces| {
                let m = pieces[0].value.len();
                (0..m)
                    .map(|i| pieces.iter().map(|p| p.fraction * p.value[i]).sum())
                    .collect()
            })
            .collect()
    }

    pub fn aggregates(&self, spec: &StochasticGameSpec) -> AggregateVector {
        AggregateVector::from_values(spec, &self.cell_values())
    }

    pub fn atom_values(&self, spec: &StochasticGameSpec) -> Vec<Vec<f64>> {
        spec.atoms().iter().map(|&k| self.cells[k][0].value.clone()).collect()
    }
}

/// `Π(v²)`: for every atom and player, the best expected stage-game payoff
/// against the other players' atom strategies in `f2`.
pub fn atom_value_operator(
    spec: &StochasticGameSpec,
    f2: &[Vec<Vec<f64>>],
    c: &AggregateVector,
    v2: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let atoms = spec.atoms();
    if f2.len() != atoms.len() {
        return Err(Error::invalid("atom strategies do not match the atoms"));
    }
    atoms
        .iter()
        .zip(f2)
        .map(|(&s, f)| {
            let g = build_stage_game(spec, s, c, v2)?;
            if f.len() != spec.players || (0..spec.players).any(|i| f[i].len() != g.n_actions(i)) {
                return Err(Error::invalid(format!(
                    "atom strategy at state {s} has the wrong shape"
                )));
            }
            Ok((0..spec.players)
                .map(|i| g.deviation_payoffs(i, f).into_iter().fold(f64::NEG_INFINITY, f64::max))
                .collect())
        })
        .collect()
}

/// Iterates [`atom_value_operator`] from `v2` until the sup change is at most
/// `tol`. Returns the fixed point and the number of applications.
pub fn atom_fixed_point(
    spec: &StochasticGameSpec,
    f2: &[Vec<Vec<f64>>],
    c: &AggregateVector,
    v2: &[Vec<f64>],
    tol: f64,
) -> Result<(Vec<Vec<f64>>, usize)> {
    let beta = spec.max_discount();
    let mut cur = v2.to_vec();
    let cap = if beta > 0.0 {
        ((tol.ln() / beta.ln()).ceil() as usize).saturating_add(64)
    } else {
        1
    };
    for it in 1..=cap {
        let next = atom_value_operator(spec, f2, c, &cur)?;
        let change = sup_dist(&next, &cur);
        cur = next;
        if beta == 0.0 || change <= tol {
            return Ok((cur, it));
        }
    }
    Ok((cur, cap))
}

fn sup_dist(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Nash point whose payoff is nearest to `target`; the first in the
/// enumeration order wins ties.
fn closest(points: &[NashPoint], target: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (n, p) in points.iter().enumerate() {
        let d = euclid(&p.payoffs, target);
        if d < best_d - 1e-15 {
            best = n;
            best_d = d;
        }
    }
    best
}

struct AtomBlock {
    v2: Vec<Vec<f64>>,
    f2: Vec<Vec<Vec<f64>>>,
}

const ATOM_ROUNDS: usize = 50;

/// Atom values as the fixed point of the atom operator, with atom strategies
/// chosen among the atoms' stage-game equilibria so that `f²` is consistent
/// with `v²`.
fn solve_atom_block(
    spec: &StochasticGameSpec,
    c: &AggregateVector,
    start: AtomBlock,
    inner_tol: f64,
) -> Result<AtomBlock> {
    let atoms = spec.atoms();
    if atoms.is_empty() {
        return Ok(start);
    }
    let AtomBlock { mut v2, mut f2 } = start;
    for _ in 0..ATOM_ROUNDS {
        v2 = atom_fixed_point(spec, &f2, c, &v2, inner_tol)?.0;
        let mut next = Vec::with_capacity(atoms.len());
        for (a, &s) in atoms.iter().enumerate() {
            let g = build_stage_game(spec, s, c, &v2)?;
            let eqs = nash_enumerate_with(&g, EnumerationMode::Auto)?.points;
            next.push(eqs[closest(&eqs, &v2[a])].strategies.clone());
        }
        let stable = next.iter().zip(&f2).all(|(x, y)| sup_dist(x, y) <= 1e-12);
        f2 = next;
        if stable {
            break;
        }
    }
    v2 = atom_fixed_point(spec, &f2, c, &v2, inner_tol)?.0;
    Ok(AtomBlock { v2, f2 })
}

struct CellStep {
    projected: Vec<f64>,
    points: Vec<NashPoint>,
    count_mismatch: bool,
}

fn cell_step(
    spec: &StochasticGameSpec,
    k: usize,
    c: &AggregateVector,
    v2: &[Vec<f64>],
    current: &[f64],
) -> Result<CellStep> {
    let g = build_stage_game(spec, k, c, v2)?;
    let en = nash_enumerate_with(&g, EnumerationMode::Auto)?;
    let payoffs: Vec<Vec<f64>> = en.points.iter().map(|p| p.payoffs.clone()).collect();
    let (_, projected) = project_onto_hull(&payoffs, current);
    Ok(CellStep {
        projected,
        points: en.points,
        count_mismatch: en.count_mismatch,
    })
}

struct Attempt {
    result: Option<EquilibriumResult>,
    epsilon: f64,
    iterations: usize,
}

/// Computes a stationary Markov perfect ε-equilibrium.
pub fn solve(spec: &StochasticGameSpec, opts: &SolverOptions) -> Result<EquilibriumResult> {
    let report = validate_game(spec);
    if !report.is_pass() {
        return Err(Error::Validation(report));
    }
    if !report.no_g_atom {
        return Err(Error::PreconditionFailed(
            "the decomposed kernel puts density on atomic cells; the atomless part has a G-atom".into(),
        ));
    }
    if !(opts.tol > 0.0 && opts.inner_tol > 0.0 && opts.gamma_min > 0.0 && opts.gamma_min <= 1.0) {
        return Err(Error::invalid(
            "tolerances must be positive and the damping floor in (0, 1]",
        ));
    }

    let mut best: Option<Attempt> = None;
    let mut total_iterations = 0;
    for restart in 0..=opts.restarts {
        let attempt = run_attempt(spec, opts, restart)?;
        total_iterations += attempt.iterations;
        let done = attempt
            .result
            .as_ref()
            .is_some_and(|r| r.diagnostics.converged && r.epsilon <= opts.target_epsilon);
        if best.as_ref().map_or(true, |b| attempt.epsilon < b.epsilon) {
            best = Some(attempt);
        }
        if done {
            break;
        }
    }
    let best = best.expect("at least one attempt runs");
    match best.result {
        Some(r) if r.diagnostics.converged && r.epsilon <= opts.target_epsilon => Ok(r),
        _ => Err(Error::NoConvergence {
            iterations: total_iterations,
            best_epsilon: best.epsilon,
        }),
    }
}

fn run_attempt(spec: &StochasticGameSpec, opts: &SolverOptions, restart: usize) -> Result<Attempt> {
    let n = spec.space.n_cells();
    let m = spec.players;
    let divisible = spec.space.divisible_cells();
    let atoms = spec.atoms();

    let mut v1 = vec![vec![0.0; m]; n];
    if restart > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(restart as u64);
        let half = 0.5 * spec.payoff_bound;
        for &k in &divisible {
            for v in v1[k].iter_mut() {
                *v = rng.gen_range(-half..=half);
            }
        }
    }
    let mut block = AtomBlock {
        v2: vec![vec![0.0; m]; atoms.len()],
        f2: atoms
            .iter()
            .map(|&s| {
                spec.feasible[s]
                    .iter()
                    .map(|f| vec![1.0 / f.len() as f64; f.len()])
                    .collect()
            })
            .collect(),
    };

    let mut history = Vec::new();
    let mut converged = false;
    let mut steps: Vec<(usize, CellStep)>;
    let mut c = AggregateVector::from_values(spec, &v1);
    let mut t = 0;
    loop {
        let prev_v2 = block.v2.clone();
        block = solve_atom_block(spec, &c, block, opts.inner_tol)?;
        steps = divisible
            .par_iter()
            .map(|&k| cell_step(spec, k, &c, &block.v2, &v1[k]).map(|s| (k, s)))
            .collect::<Result<Vec<_>>>()?;
        let cell_res = steps
            .iter()
            .map(|(k, s)| {
                s.projected
                    .iter()
                    .zip(&v1[*k])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let residual = cell_res.max(sup_dist(&block.v2, &prev_v2));
        history.push(residual);
        t += 1;
        if residual <= opts.tol && t > 1 {
            converged = true;
            break;
        }
        if t >= opts.max_iter {
            break;
        }
        let gamma = opts.gamma_min.max(1.0 / (t as f64 + 1.0));
        for (k, s) in &steps {
            for (v, p) in v1[*k].iter_mut().zip(&s.projected) {
                *v = (1.0 - gamma) * *v + gamma * p;
            }
        }
        c = AggregateVector::from_values(spec, &v1);
    }

    // purify the last projection: it lies in the hull of the Nash payoffs
    let mut vprime = vec![vec![0.0; m]; n];
    let mut candidates: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
    let mut points: Vec<Vec<NashPoint>> = vec![Vec::new(); n];
    let mut mismatch = Vec::new();
    for (k, s) in steps {
        vprime[k] = s.projected;
        candidates[k] = s.points.iter().map(|p| p.payoffs.clone()).collect();
        if s.count_mismatch {
            mismatch.push(k);
        }
        points[k] = s.points;
    }
    for (a, &k) in atoms.iter().enumerate() {
        vprime[k] = block.v2[a].clone();
        candidates[k] = vec![block.v2[a].clone()];
    }
    let moments: Vec<StepFunction> = spec
        .kernel
        .rho
        .iter()
        .map(|r| StepFunction::scalar(r.clone()))
        .collect::<Result<_>>()?;
    let indexed = purify_indexed(
        &StepFunction::new(vprime)?,
        &CandidateField::new(candidates)?,
        &moments,
        &spec.space,
    )?;

    let mut cells: Vec<Vec<StrategyPiece>> = indexed
        .cells
        .iter()
        .enumerate()
        .map(|(k, pieces)| {
            pieces
                .iter()
                .map(|&(fraction, idx)| match points[k].get(idx) {
                    Some(p) => StrategyPiece {
                        fraction,
                        strategy: p.strategies.clone(),
                        value: p.payoffs.clone(),
                    },
                    None => StrategyPiece {
                        fraction,
                        strategy: Vec::new(),
                        value: Vec::new(),
                    },
                })
                .collect()
        })
        .collect();
    for (a, &k) in atoms.iter().enumerate() {
        cells[k] = vec![StrategyPiece {
            fraction: 1.0,
            strategy: block.f2[a].clone(),
            value: block.v2[a].clone(),
        }];
    }

    let mut result = EquilibriumResult {
        cells,
        epsilon: f64::INFINITY,
        certificate: Certificate::default(),
        diagnostics: Diagnostics {
            iterations: t,
            restarts: restart,
            converged,
            residual_history: history,
            count_mismatch_cells: mismatch,
            equilibria_per_cell: points.iter().map(Vec::len).collect(),
            solver_epsilon: f64::INFINITY,
        },
    };
    result.diagnostics.solver_epsilon = stage_game_epsilon(spec, &result)?;
    let certificate = deviation_residual(&result, spec)?;
    result.epsilon = certificate.epsilon;
    result.certificate = certificate;
    Ok(Attempt {
        epsilon: result.epsilon,
        iterations: t,
        result: Some(result),
    })
}

/// ε measured through the stage games built from the result's own
/// aggregates and atom values.
pub fn stage_game_epsilon(spec: &StochasticGameSpec, result: &EquilibriumResult) -> Result<f64> {
    let c = result.aggregates(spec);
    let v2 = result.atom_values(spec);
    let gains = (0..spec.n_states())
        .into_par_iter()
        .map(|s| {
            let g = build_stage_game(spec, s, &c, &v2)?;
            Ok(result.cells[s]
                .iter()
                .map(|p| g.max_gain(&p.strategy))
                .fold(0.0, f64::max))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(gains.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::fixtures::constant_kernel_game;
    use crate::game::KernelDecomposition;
    use crate::measure::{Cell, GridSpace};

    fn single_atom(payoffs: Vec<Vec<f64>>, actions: Vec<usize>, beta: f64) -> StochasticGameSpec {
        let players = actions.len();
        let n_prof = payoffs.len();
        StochasticGameSpec {
            players,
            discounts: vec![beta; players],
            actions: actions
                .iter()
                .map(|&a| (0..a).map(|l| format!("a{l}")).collect())
                .collect(),
            feasible: vec![actions.iter().map(|&a| (0..a).collect()).collect()],
            payoff_bound: payoffs.iter().flatten().fold(1.0_f64, |a, u| a.max(u.abs())),
            payoffs: vec![payoffs],
            space: GridSpace::new(vec![Cell::atomic(1.0)], vec![0]).unwrap(),
            kernel: KernelDecomposition {
                rho: vec![vec![0.0]],
                q: vec![vec![vec![vec![0.0]]; n_prof]],
            },
            atom_kernel: vec![vec![vec![1.0]; n_prof]],
        }
    }

    #[test]
    fn discount_free_operator_is_one_shot() {
        let spec = single_atom(vec![vec![1.0], vec![3.0]], vec![2], 0.0);
        let c = AggregateVector::for_spec(&spec);
        let f2 = vec![vec![vec![0.5, 0.5]]];
        let (v, it) = atom_fixed_point(&spec, &f2, &c, &[vec![0.0]], 1e-10).unwrap();
        assert_eq!(it, 1);
        assert_eq!(v, vec![vec![3.0]]);
    }

    #[test]
    fn geometric_series_fixed_point() {
        let spec = single_atom(vec![vec![1.0]], vec![1], 0.5);
        let c = AggregateVector::for_spec(&spec);
        let (v, it) = atom_fixed_point(&spec, &[vec![vec![1.0]]], &c, &[vec![0.0]], 1e-10).unwrap();
        assert!((v[0][0] - 1.0).abs() < 1e-9);
        assert!(it <= (1e-10f64.ln() / 0.5f64.ln()).ceil() as usize + 1);
    }

    #[test]
    fn static_atom_game_returns_stage_nash() {
        // battle of the sexes at a single absorbing atom with β = 0
        let spec = single_atom(
            vec![vec![2.0, 1.0], vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 2.0]],
            vec![2, 2],
            0.0,
        );
        let r = solve(&spec, &SolverOptions::default()).unwrap();
        assert!(r.epsilon <= 1e-12);
        let v = &r.cells[0][0].value;
        let nash = [vec![2.0 / 3.0, 2.0 / 3.0], vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(nash.iter().any(|p| euclid(p, v) < 1e-12));
    }

    #[test]
    fn constant_kernel_game_solves() {
        let spec = constant_kernel_game();
        let r = solve(&spec, &SolverOptions::default()).unwrap();
        assert!(r.epsilon <= 1e-6, "epsilon {}", r.epsilon);
        assert!((r.diagnostics.solver_epsilon - r.epsilon).abs() <= 1e-12);
        assert!(r.certificate.recursion_residual <= 1e-8);
    }

    #[test]
    fn g_atom_is_a_failed_precondition() {
        let mut spec = single_atom(vec![vec![1.0]], vec![1], 0.5);
        spec.kernel.rho = vec![vec![1.0]];
        spec.kernel.q = vec![vec![vec![vec![0.0]]]];
        assert!(matches!(
            solve(&spec, &SolverOptions::default()),
            Err(Error::PreconditionFailed(_))
        ));
    }
}
