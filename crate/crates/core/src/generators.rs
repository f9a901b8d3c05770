//! Builders for the standard game families: Levy's transition, Nowak-type
//! mixtures, noisy product games, and seeded random instances of each.

use rand::Rng;

use crate::error::{Error, Result};
use crate::game::{KernelDecomposition, ProfileIndexer, StochasticGameSpec};
use crate::kernel::KernelMatrix;
use crate::measure::{Cell, GridSpace};

/// Stage data shared by every generator: discounts, action labels and
/// payoffs `payoffs[s][x][i]` over all actions (every action is feasible
/// everywhere).
#[derive(Clone, Debug, PartialEq)]
pub struct PayoffConfig {
    pub discounts: Vec<f64>,
    pub actions: Vec<Vec<String>>,
    /// `None` means all stage payoffs are zero.
    pub payoffs: Option<Vec<Vec<Vec<f64>>>>,
    pub payoff_bound: f64,
}

impl PayoffConfig {
    pub fn players(&self) -> usize {
        self.actions.len()
    }

    pub fn profile_count(&self) -> usize {
        self.actions.iter().map(Vec::len).product()
    }

    fn payoffs_for(&self, n_states: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        match &self.payoffs {
            Some(p) if p.len() == n_states => Ok(p.clone()),
            Some(p) => Err(Error::invalid(format!(
                "payoffs cover {} states, game has {n_states}",
                p.len()
            ))),
            None => Ok(vec![vec![vec![0.0; self.players()]; self.profile_count()]; n_states]),
        }
    }

    fn feasible(&self, n_states: usize) -> Vec<Vec<Vec<usize>>> {
        vec![self.actions.iter().map(|a| (0..a.len()).collect()).collect(); n_states]
    }
}

fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevyParams {
    pub alpha: f64,
    /// Number of θ-players.
    pub m: usize,
    /// Divisible cells on `[0, 1)`.
    pub n: usize,
    /// Cells per coarse block; must divide `n`.
    pub block: usize,
}

/// Player order of the Levy game: A, B, C, D, then the θ-players.
pub const LEVY_C: usize = 2;
pub const LEVY_D: usize = 3;

/// Levy's transition on an `n`-cell grid of `[0, 1)` plus an atomic cell for
/// the absorbing state 1. From state `s` the atom receives
/// `1 − α(1−s) + α(1−s)(1 − w)` and the cells receive `w · α(1−s) U(s,1)`,
/// with `w = 1, ½, ½, 0` for `(C,D) = (−1,−1), (−1,1), (1,−1), (1,1)`.
/// The uniform law is averaged exactly over each cell; source states sit at
/// cell midpoints.
///
/// The decomposition uses one component per position inside a block, which
/// is the trivial one with `J = block`.
pub fn make_levy_kernel(
    p: &LevyParams,
    payoffs: Option<Vec<Vec<Vec<f64>>>>,
    discounts: Vec<f64>,
) -> Result<StochasticGameSpec> {
    if !(p.alpha > 0.0 && p.alpha <= 1.0) {
        return Err(Error::invalid("alpha must lie in (0, 1]"));
    }
    if p.n < 2 || p.block == 0 || p.n % p.block != 0 {
        return Err(Error::invalid("grid needs n >= 2 cells and a block size dividing n"));
    }
    let n = p.n;
    let width = 1.0 / n as f64;
    let mut cells = vec![Cell::divisible(width); n];
    cells.push(Cell::atomic(width));
    let n_blocks = n / p.block;
    let mut coarse: Vec<usize> = (0..n).map(|k| k / p.block).collect();
    coarse.push(n_blocks);
    let space = GridSpace::new(cells, coarse)?;

    let mut actions = vec![
        labels(&["L", "M", "R"]),
        labels(&["L", "M", "R"]),
        labels(&["1", "-1"]),
        labels(&["1", "-1"]),
    ];
    actions.extend((0..p.m).map(|_| labels(&["L", "R"])));
    let players = actions.len();
    if discounts.len() != players {
        return Err(Error::invalid(format!("Levy game has {players} players")));
    }
    let config = PayoffConfig {
        discounts,
        actions,
        payoffs,
        payoff_bound: 1.0,
    };
    let n_states = n + 1;
    let payoffs = config.payoffs_for(n_states)?;
    let bound = payoffs.iter().flatten().flatten().fold(1.0_f64, |a, u| a.max(u.abs()));
    let ix = ProfileIndexer::new(config.actions.iter().map(Vec::len).collect());

    let rho: Vec<Vec<f64>> = (0..p.block)
        .map(|j| {
            (0..=n)
                .map(|k| if k < n && k % p.block == j { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let mut q = Vec::with_capacity(n_states);
    let mut atom_kernel = Vec::with_capacity(n_states);
    for s in 0..n_states {
        let pos = if s < n { (s as f64 + 0.5) * width } else { 1.0 };
        let moving = p.alpha * (1.0 - pos);
        let cell_density: Vec<f64> = (0..n)
            .map(|k| {
                if moving <= 0.0 {
                    return 0.0;
                }
                let (a, b) = (k as f64 * width, (k + 1) as f64 * width);
                let overlap = (b.min(1.0) - a.max(pos)).max(0.0);
                // α(1−s) · (overlap / (1−s)) / width
                p.alpha * overlap / width
            })
            .collect();
        let mut q_s = Vec::with_capacity(ix.count());
        let mut atoms_s = Vec::with_capacity(ix.count());
        for x in 0..ix.count() {
            let prof = ix.decode(x);
            let w = match (prof[LEVY_C], prof[LEVY_D]) {
                (1, 1) => 1.0,
                (0, 0) => 0.0,
                _ => 0.5,
            };
            let per_j: Vec<Vec<f64>> = (0..p.block)
                .map(|j| {
                    (0..=n_blocks)
                        .map(|e| {
                            if e < n_blocks {
                                w * cell_density[e * p.block + j]
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect();
            q_s.push(per_j);
            atoms_s.push(vec![1.0 - moving + moving * (1.0 - w)]);
        }
        q.push(q_s);
        atom_kernel.push(atoms_s);
    }
    Ok(StochasticGameSpec {
        players,
        feasible: config.feasible(n_states),
        discounts: config.discounts,
        actions: config.actions,
        payoffs,
        payoff_bound: bound,
        space,
        kernel: KernelDecomposition { rho, q },
        atom_kernel,
    })
}

/// Levy kernel matrix restricted to columns where C and D both play −1.
pub fn levy_defect_matrix(spec: &StochasticGameSpec) -> KernelMatrix {
    let ix = spec.profiles(0);
    KernelMatrix::from_spec_columns(spec, |_, x| {
        let prof = ix.decode(x);
        prof[LEVY_C] == 1
            && prof[LEVY_D] == 1
            && prof
                .iter()
                .enumerate()
                .all(|(i, &a)| i == LEVY_C || i == LEVY_D || a == 0)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NowakParams {
    /// `mu[j][c]`: mass of atomless component `j` on divisible cell `c`.
    pub mu: Vec<Vec<f64>>,
    /// Number of atoms `K`.
    pub atoms: usize,
    /// `mix[s][x][j]`: weight on component `j`.
    pub mix: Vec<Vec<Vec<f64>>>,
    /// `atom_mix[s][x][k]`: mass sent to atom `k`.
    pub atom_mix: Vec<Vec<Vec<f64>>>,
}

/// Nowak-type mixture: `Q(·|s,x) = Σ_j q_j(s,x) μ_j + Σ_k b_k(s,x) δ_k`.
///
/// `λ` is the uniform mixture of all `J + K` components. The divisible cells
/// form one coarse cell and each atom its own; `ρ_j = dμ_j/dλ` and `q_j` is
/// the same on every coarse cell. States are the divisible cells followed by
/// the atoms.
pub fn make_nowak_game(p: &NowakParams, config: &PayoffConfig) -> Result<StochasticGameSpec> {
    let j_count = p.mu.len();
    let k_count = p.atoms;
    if j_count == 0 {
        return Err(Error::invalid("Nowak game needs at least one atomless component"));
    }
    let n_div = p.mu[0].len();
    if n_div == 0 || p.mu.iter().any(|m| m.len() != n_div) {
        return Err(Error::invalid("atomless components must cover the same cells"));
    }
    for (j, m) in p.mu.iter().enumerate() {
        let total: f64 = m.iter().sum();
        if m.iter().any(|v| !v.is_finite() || *v < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "component {j} is not a probability measure (mass {total})"
            )));
        }
    }
    let n_states = n_div + k_count;
    let n_prof = config.profile_count();
    if p.mix.len() != n_states
        || p.atom_mix.len() != n_states
        || p.mix
            .iter()
            .any(|r| r.len() != n_prof || r.iter().any(|w| w.len() != j_count))
        || p.atom_mix
            .iter()
            .any(|r| r.len() != n_prof || r.iter().any(|w| w.len() != k_count))
    {
        return Err(Error::invalid(
            "mixing functions do not match states, profiles and components",
        ));
    }
    for s in 0..n_states {
        for x in 0..n_prof {
            let w = p.mix[s][x].iter().chain(&p.atom_mix[s][x]);
            if w.clone().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("mixing weight outside [0, 1] at state {s}")));
            }
            let total: f64 = w.sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "mixing weights sum to {total} at state {s}, profile {x}"
                )));
            }
        }
    }
    let share = 1.0 / (j_count + k_count) as f64;
    let mut cells: Vec<Cell> = (0..n_div)
        .map(|c| Cell::divisible(share * p.mu.iter().map(|m| m[c]).sum::<f64>()))
        .collect();
    cells.extend((0..k_count).map(|_| Cell::atomic(share)));
    let mut coarse = vec![0; n_div];
    coarse.extend(1..=k_count);
    let space = GridSpace::new(cells, coarse)?;

    let rho =
        p.mu.iter()
            .map(|m| {
                (0..n_states)
                    .map(|k| {
                        let lam = space.mass(k);
                        if k < n_div && lam > 0.0 {
                            m[k] / lam
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
    let q = p
        .mix
        .iter()
        .map(|per_x| {
            per_x
                .iter()
                .map(|w| {
                    w.iter()
                        .map(|&wj| {
                            let mut per_e = vec![0.0; 1 + k_count];
                            per_e[0] = wj;
                            per_e
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let payoffs = config.payoffs_for(n_states)?;
    Ok(StochasticGameSpec {
        players: config.players(),
        discounts: config.discounts.clone(),
        actions: config.actions.clone(),
        feasible: config.feasible(n_states),
        payoffs,
        payoff_bound: config.payoff_bound,
        space,
        kernel: KernelDecomposition { rho, q },
        atom_kernel: p.atom_mix.clone(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisyGameParams {
    /// Masses `κ` of the `H` cells.
    pub kappa: Vec<f64>,
    /// Masses `ν` of the `R` cells.
    pub nu: Vec<f64>,
    /// `alpha[s][x][h']`: density of the next `h'` with respect to `κ`;
    /// states are the product cells `(h, r)` in row-major order.
    pub alpha: Vec<Vec<Vec<f64>>>,
    /// `beta[h][r]`: density of the noise `r` given `h`, with respect to `ν`.
    pub beta: Vec<Vec<f64>>,
}

/// A noisy game together with the kernel density it induces cell by cell,
/// computed from the transition law before any decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyGame {
    pub spec: StochasticGameSpec,
    pub raw_kernel: KernelMatrix,
}

/// Product game on `H × R` with `λ(h,r) ∝ κ(h) ν(r) β(r|h)` and coarse cells
/// the `H`-cells. The transition law `α(h'|s,a) κ(h') β(r'|h') ν(r')` has a
/// density with respect to `λ` that does not depend on `r'`.
pub fn make_noisy_game(p: &NoisyGameParams, config: &PayoffConfig) -> Result<NoisyGame> {
    let (h_n, r_n) = (p.kappa.len(), p.nu.len());
    if h_n == 0 || r_n == 0 || p.beta.len() != h_n || p.beta.iter().any(|b| b.len() != r_n) {
        return Err(Error::invalid("noisy game grids do not match the noise densities"));
    }
    let all = p.kappa.iter().chain(&p.nu).chain(p.beta.iter().flatten());
    if all.clone().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("noisy game masses and densities must be nonnegative"));
    }
    for (h, b) in p.beta.iter().enumerate() {
        let total: f64 = b.iter().zip(&p.nu).map(|(x, n)| x * n).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "noise density at h = {h} integrates to {total}"
            )));
        }
    }
    let n = h_n * r_n;
    let n_prof = config.profile_count();
    if p.alpha.len() != n
        || p.alpha
            .iter()
            .any(|r| r.len() != n_prof || r.iter().any(|a| a.len() != h_n))
    {
        return Err(Error::invalid("marginal densities do not match states and profiles"));
    }
    for (s, per_x) in p.alpha.iter().enumerate() {
        for a in per_x {
            let total: f64 = a.iter().zip(&p.kappa).map(|(x, k)| x * k).sum();
            if a.iter().any(|v| *v < 0.0) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "marginal density at state {s} integrates to {total}"
                )));
            }
        }
    }
    let raw: Vec<f64> = (0..n)
        .map(|k| {
            let (h, r) = (k / r_n, k % r_n);
            p.kappa[h] * p.nu[r] * p.beta[h][r]
        })
        .collect();
    let z: f64 = raw.iter().sum();
    if !(z > 0.0) {
        return Err(Error::invalid("product measure has zero mass"));
    }
    let cells: Vec<Cell> = raw.iter().map(|m| Cell::divisible(m / z)).collect();
    let coarse: Vec<usize> = (0..n).map(|k| k / r_n).collect();
    let space = GridSpace::new(cells, coarse)?;

    // density of the transition law against λ, cell by cell
    let density = |s: usize, x: usize, k: usize| {
        let (h, r) = (k / r_n, k % r_n);
        let lam = space.mass(k);
        let q_mass = p.alpha[s][x][h] * p.kappa[h] * p.beta[h][r] * p.nu[r];
        if lam > 0.0 {
            q_mass / lam
        } else {
            p.alpha[s][x][h] * z
        }
    };
    let mut data = Vec::with_capacity(n * n * n_prof);
    let columns: Vec<(usize, usize)> = (0..n).flat_map(|s| (0..n_prof).map(move |x| (s, x))).collect();
    for k in 0..n {
        for &(s, x) in &columns {
            data.push(density(s, x, k));
        }
    }
    let raw_kernel = KernelMatrix::new((0..n).collect(), columns, data, space.clone())?;

    let q = (0..n)
        .map(|s| {
            (0..n_prof)
                .map(|x| {
                    let per_e = (0..h_n)
                        .map(|h| {
                            let members = space.members(h);
                            let mass: f64 = members.iter().map(|&k| space.mass(k)).sum();
                            if mass > 0.0 {
                                members.iter().map(|&k| space.mass(k) * density(s, x, k)).sum::<f64>() / mass
                            } else {
                                p.alpha[s][x][h] * z
                            }
                        })
                        .collect();
                    vec![per_e]
                })
                .collect()
        })
        .collect();
    let spec = StochasticGameSpec {
        players: config.players(),
        discounts: config.discounts.clone(),
        actions: config.actions.clone(),
        feasible: config.feasible(n),
        payoffs: config.payoffs_for(n)?,
        payoff_bound: config.payoff_bound,
        space,
        kernel: KernelDecomposition {
            rho: vec![vec![1.0; n]],
            q,
        },
        atom_kernel: vec![vec![Vec::new(); n_prof]; n],
    };
    Ok(NoisyGame { spec, raw_kernel })
}

/// Random stage data: payoffs uniform in `[−1, 1]`, `C = 1`, discounts
/// uniform in `[0, beta_max]`.
pub fn random_payoffs<R: Rng + ?Sized>(rng: &mut R, n_states: usize, actions: &[usize], beta_max: f64) -> PayoffConfig {
    let players = actions.len();
    let n_prof: usize = actions.iter().product();
    PayoffConfig {
        discounts: (0..players).map(|_| rng.gen_range(0.0..=beta_max)).collect(),
        actions: actions
            .iter()
            .map(|&a| (0..a).map(|l| format!("a{l}")).collect())
            .collect(),
        payoffs: Some(
            (0..n_states)
                .map(|_| {
                    (0..n_prof)
                        .map(|_| (0..players).map(|_| rng.gen_range(-1.0..=1.0)).collect())
                        .collect()
                })
                .collect(),
        ),
        payoff_bound: 1.0,
    }
}

fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    // exponential spacings give the uniform law on the simplex
    let w: Vec<f64> = (0..n).map(|_| -rng.gen_range(f64::EPSILON..1.0f64).ln()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Random Nowak game with `n_div` divisible cells, `j` atomless components
/// and `k` atoms.
pub fn random_nowak<R: Rng + ?Sized>(
    rng: &mut R,
    n_div: usize,
    j: usize,
    k: usize,
    actions: &[usize],
    beta_max: f64,
) -> Result<StochasticGameSpec> {
    let n_states = n_div + k;
    let config = random_payoffs(rng, n_states, actions, beta_max);
    let n_prof = config.profile_count();
    let mu = (0..j).map(|_| random_simplex(rng, n_div)).collect();
    let mut mix = Vec::with_capacity(n_states);
    let mut atom_mix = Vec::with_capacity(n_states);
    for _ in 0..n_states {
        let (mut m_s, mut a_s) = (Vec::new(), Vec::new());
        for _ in 0..n_prof {
            let w = random_simplex(rng, j + k);
            m_s.push(w[..j].to_vec());
            a_s.push(w[j..].to_vec());
        }
        mix.push(m_s);
        atom_mix.push(a_s);
    }
    make_nowak_game(
        &NowakParams {
            mu,
            atoms: k,
            mix,
            atom_mix,
        },
        &config,
    )
}

/// Random noisy-game parameters on an `h × r` product grid.
pub fn random_noisy_params<R: Rng + ?Sized>(rng: &mut R, h: usize, r: usize, n_prof: usize) -> NoisyGameParams {
    let kappa = random_simplex(rng, h);
    let nu = random_simplex(rng, r);
    let beta = (0..h)
        .map(|_| {
            let w = random_simplex(rng, r);
            // density against ν: β(r) = w(r) / ν(r)
            w.iter().zip(&nu).map(|(a, b)| a / b).collect()
        })
        .collect();
    let alpha = (0..h * r)
        .map(|_| {
            (0..n_prof)
                .map(|_| random_simplex(rng, h).iter().zip(&kappa).map(|(a, b)| a / b).collect())
                .collect()
        })
        .collect();
    NoisyGameParams { kappa, nu, alpha, beta }
}
