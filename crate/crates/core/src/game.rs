//! Discounted stochastic games on a grid state space.
//!
//! States are the cells of the [`GridSpace`]. Transitions into divisible cells
//! go through a [`KernelDecomposition`]: the density at cell `k` is
//! `Σ_j q_j(E(k), s, x) ρ_j(k)` with respect to the cell masses, so each `q_j`
//! only depends on the coarse cell `E(k)`. Transitions into atomic cells are
//! given directly as masses in `atom_kernel`.
//!
//! Action profiles at a state enumerate the feasible actions of every player
//! in mixed radix, the last player varying fastest.

use std::fmt;

use crate::error::{Error, Result};
use crate::measure::{Cell, GridSpace};

pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct KernelDecomposition {
    /// `rho[j][k]`: weight of component `j` on cell `k`.
    pub rho: Vec<Vec<f64>>,
    /// `q[s][x][j][e]`: coefficient of component `j` on coarse cell `e` when
    /// profile `x` is played at state `s`.
    pub q: Vec<Vec<Vec<Vec<f64>>>>,
}

impl KernelDecomposition {
    pub fn n_components(&self) -> usize {
        self.rho.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StochasticGameSpec {
    pub players: usize,
    pub discounts: Vec<f64>,
    /// Global action labels per player.
    pub actions: Vec<Vec<String>>,
    /// `feasible[s][i]`: indices into `actions[i]` available at state `s`.
    pub feasible: Vec<Vec<Vec<usize>>>,
    /// `payoffs[s][x][i]`.
    pub payoffs: Vec<Vec<Vec<f64>>>,
    pub payoff_bound: f64,
    pub space: GridSpace,
    pub kernel: KernelDecomposition,
    /// `atom_kernel[s][x][a]`: probability of moving to the `a`-th atomic cell.
    pub atom_kernel: Vec<Vec<Vec<f64>>>,
}

/// Mixed-radix enumeration of action profiles; the last player varies fastest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProfileIndexer {
    radices: Vec<usize>,
    count: usize,
}

impl ProfileIndexer {
    pub fn new(radices: Vec<usize>) -> Self {
        let count = radices.iter().product();
        ProfileIndexer { radices, count }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn radices(&self) -> &[usize] {
        &self.radices
    }

    pub fn decode(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.radices.len()];
        for i in (0..self.radices.len()).rev() {
            out[i] = idx % self.radices[i];
            idx /= self.radices[i];
        }
        out
    }

    pub fn encode(&self, profile: &[usize]) -> usize {
        profile.iter().zip(&self.radices).fold(0, |acc, (&a, &r)| acc * r + a)
    }
}

impl StochasticGameSpec {
    pub fn n_states(&self) -> usize {
        self.space.n_cells()
    }

    pub fn atoms(&self) -> Vec<usize> {
        self.space.atoms()
    }

    pub fn profiles(&self, s: usize) -> ProfileIndexer {
        ProfileIndexer::new(self.feasible[s].iter().map(Vec::len).collect())
    }

    pub fn max_discount(&self) -> f64 {
        self.discounts.iter().copied().fold(0.0, f64::max)
    }

    /// Transition density at cell `k` from state `s` under profile `x`.
    pub fn density(&self, s: usize, x: usize, k: usize) -> f64 {
        let e = self.space.coarse_of(k);
        let q = &self.kernel.q[s][x];
        self.kernel
            .rho
            .iter()
            .enumerate()
            .map(|(j, rho)| q[j][e] * rho[k])
            .sum()
    }

    /// Total transition probability out of `(s, x)`.
    pub fn transition_mass(&self, s: usize, x: usize) -> f64 {
        let cells: f64 = (0..self.space.n_cells())
            .map(|k| self.density(s, x, k) * self.space.mass(k))
            .sum();
        cells + self.atom_kernel[s][x].iter().sum::<f64>()
    }

    /// True when the decomposed kernel puts no density on atomic cells, i.e.
    /// the part of the state space it covers has no `G`-atom.
    pub fn no_g_atom(&self) -> bool {
        (0..self.space.n_cells()).all(|k| {
            self.space.is_divisible(k)
                || self.space.mass(k) <= 0.0
                || self.kernel.rho.iter().all(|rho| rho.get(k).map_or(true, |&r| r <= 0.0))
        })
    }

    pub fn check_shapes(&self) -> Result<()> {
        let report = validate_game(self);
        match report.violations.iter().find(|v| matches!(v, Violation::Shape(_))) {
            Some(v) => Err(Error::invalid(v.to_string())),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Shape(String),
    InvalidDiscount {
        player: usize,
        value: f64,
    },
    EmptyFeasibleSet {
        state: usize,
        player: usize,
    },
    PayoffBound {
        state: usize,
        profile: usize,
        player: usize,
        value: f64,
    },
    NegativeKernelComponent {
        what: String,
        value: f64,
    },
    Normalization {
        state: usize,
        profile: usize,
        total: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Violation::InvalidDiscount { player, value } => {
                write!(f, "discount {value} of player {player} outside [0, 1)")
            }
            Violation::EmptyFeasibleSet { state, player } => {
                write!(f, "empty feasible set for player {player} at state {state}")
            }
            Violation::PayoffBound {
                state,
                profile,
                player,
                value,
            } => write!(
                f,
                "unbounded payoff {value} for player {player} at state {state}, profile {profile}"
            ),
            Violation::NegativeKernelComponent { what, value } => {
                write!(f, "negative kernel component {what} = {value}")
            }
            Violation::Normalization { state, profile, total } => {
                write!(f, "normalization {total} ≠ 1 at state {state}, profile {profile}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Whether the decomposed kernel lives on divisible cells only.
    pub no_g_atom: bool,
}

impl ValidationReport {
    pub fn is_pass(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "pass (no G-atom: {})", self.no_g_atom);
        }
        let msgs: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

pub fn validate_game(spec: &StochasticGameSpec) -> ValidationReport {
    let mut violations = Vec::new();
    let shape = |msg: String| Violation::Shape(msg);
    let n = spec.space.n_cells();
    let n_atoms = spec.space.atoms().len();
    let n_coarse = spec.space.n_coarse();
    let j_count = spec.kernel.rho.len();

    if spec.players == 0 {
        violations.push(shape("game has no players".into()));
    }
    if spec.discounts.len() != spec.players || spec.actions.len() != spec.players {
        violations.push(shape("discounts/actions do not match the player count".into()));
    }
    if spec.feasible.len() != n || spec.payoffs.len() != n || spec.kernel.q.len() != n || spec.atom_kernel.len() != n {
        violations.push(shape(format!("per-state tables must have {n} entries")));
    }
    if j_count == 0 {
        violations.push(shape("kernel needs at least one component".into()));
    }
    if spec.kernel.rho.iter().any(|r| r.len() != n) {
        violations.push(shape("rho rows must cover every cell".into()));
    }
    if !(spec.payoff_bound.is_finite() && spec.payoff_bound > 0.0) {
        violations.push(shape(format!("payoff bound {} must be positive", spec.payoff_bound)));
    }
    if !violations.is_empty() {
        return ValidationReport {
            violations,
            no_g_atom: false,
        };
    }

    for (i, &b) in spec.discounts.iter().enumerate() {
        if !(0.0..1.0).contains(&b) {
            violations.push(Violation::InvalidDiscount { player: i, value: b });
        }
    }

    for s in 0..n {
        if spec.feasible[s].len() != spec.players {
            violations.push(shape(format!(
                "state {s} lists feasible sets for the wrong number of players"
            )));
            continue;
        }
        let mut shapes_ok = true;
        for i in 0..spec.players {
            if spec.feasible[s][i].is_empty() {
                violations.push(Violation::EmptyFeasibleSet { state: s, player: i });
                shapes_ok = false;
            }
            if spec.feasible[s][i].iter().any(|&a| a >= spec.actions[i].len()) {
                violations.push(shape(format!("state {s} references an unknown action of player {i}")));
                shapes_ok = false;
            }
        }
        if !shapes_ok {
            continue;
        }
        let n_prof = spec.profiles(s).count();
        if spec.payoffs[s].len() != n_prof || spec.kernel.q[s].len() != n_prof || spec.atom_kernel[s].len() != n_prof {
            violations.push(shape(format!("state {s} needs {n_prof} profile entries")));
            continue;
        }
        for x in 0..n_prof {
            if spec.payoffs[s][x].len() != spec.players
                || spec.kernel.q[s][x].len() != j_count
                || spec.kernel.q[s][x].iter().any(|row| row.len() != n_coarse)
                || spec.atom_kernel[s][x].len() != n_atoms
            {
                violations.push(shape(format!("state {s}, profile {x} has malformed entries")));
                shapes_ok = false;
            }
        }
        if !shapes_ok {
            continue;
        }
        for x in 0..n_prof {
            for (i, &u) in spec.payoffs[s][x].iter().enumerate() {
                if !u.is_finite() || u.abs() > spec.payoff_bound {
                    violations.push(Violation::PayoffBound {
                        state: s,
                        profile: x,
                        player: i,
                        value: u,
                    });
                }
            }
            for (j, row) in spec.kernel.q[s][x].iter().enumerate() {
                for (e, &v) in row.iter().enumerate() {
                    if !(v >= 0.0) || !v.is_finite() {
                        violations.push(Violation::NegativeKernelComponent {
                            what: format!("q[{s}][{x}][{j}][{e}]"),
                            value: v,
                        });
                    }
                }
            }
            for (a, &v) in spec.atom_kernel[s][x].iter().enumerate() {
                if !(v >= 0.0) || !v.is_finite() {
                    violations.push(Violation::NegativeKernelComponent {
                        what: format!("atom[{s}][{x}][{a}]"),
                        value: v,
                    });
                }
            }
        }
    }
    for (j, rho) in spec.kernel.rho.iter().enumerate() {
        for (k, &v) in rho.iter().enumerate() {
            if !(v >= 0.0) || !v.is_finite() {
                violations.push(Violation::NegativeKernelComponent {
                    what: format!("rho[{j}][{k}]"),
                    value: v,
                });
            }
        }
    }
    if violations.iter().any(|v| matches!(v, Violation::Shape(_))) {
        return ValidationReport {
            violations,
            no_g_atom: false,
        };
    }
    for s in 0..n {
        for x in 0..spec.profiles(s).count() {
            let total = spec.transition_mass(s, x);
            if (total - 1.0).abs() > NORMALIZATION_TOL {
                violations.push(Violation::Normalization {
                    state: s,
                    profile: x,
                    total,
                });
            }
        }
    }
    ValidationReport {
        violations,
        no_g_atom: spec.no_g_atom(),
    }
}

/// Appends a payoff-irrelevant public randomization coordinate: every
/// divisible cell is cut into `sunspot_cells` equal sub-cells. The coarse
/// partition of the extended game is the original fine partition, so the
/// transition density is constant on each coarse cell. Atomic cells are
/// carried over unchanged.
pub fn sunspot_extend(spec: &StochasticGameSpec, sunspot_cells: usize) -> Result<StochasticGameSpec> {
    if sunspot_cells < 2 {
        return Err(Error::invalid("sunspot extension needs at least two sunspot cells"));
    }
    spec.check_shapes()?;
    if spec.space.divisible_cells().is_empty() {
        return Err(Error::invalid("no divisible cells to extend"));
    }
    let old = &spec.space;
    let mut cells = Vec::new();
    let mut coarse = Vec::new();
    let mut origin = Vec::new();
    for k in 0..old.n_cells() {
        if old.is_divisible(k) {
            for _ in 0..sunspot_cells {
                cells.push(Cell::divisible(old.mass(k) / sunspot_cells as f64));
                coarse.push(k);
                origin.push(k);
            }
        } else {
            cells.push(old.cells()[k].clone());
            coarse.push(k);
            origin.push(k);
        }
    }
    let space = GridSpace::new(cells, coarse)?;

    let rho = spec
        .kernel
        .rho
        .iter()
        .map(|r| origin.iter().map(|&k| r[k]).collect())
        .collect();
    // new coarse cell = original fine cell k, carrying q_j(E(k), ·, ·)
    let q = origin
        .iter()
        .map(|&s| {
            spec.kernel.q[s]
                .iter()
                .map(|per_j| {
                    per_j
                        .iter()
                        .map(|per_e| (0..old.n_cells()).map(|k| per_e[old.coarse_of(k)]).collect())
                        .collect()
                })
                .collect()
        })
        .collect();

    Ok(StochasticGameSpec {
        players: spec.players,
        discounts: spec.discounts.clone(),
        actions: spec.actions.clone(),
        feasible: origin.iter().map(|&s| spec.feasible[s].clone()).collect(),
        payoffs: origin.iter().map(|&s| spec.payoffs[s].clone()).collect(),
        payoff_bound: spec.payoff_bound,
        space,
        kernel: KernelDecomposition { rho, q },
        atom_kernel: origin.iter().map(|&s| spec.atom_kernel[s].clone()).collect(),
    })
}


#[cfg(test)]
mod tests {
    use super::fixtures::constant_kernel_game;
    use super::*;

    #[test]
    fn profile_indexer_roundtrip() {
        let ix = ProfileIndexer::new(vec![3, 2, 2]);
        assert_eq!(ix.count(), 12);
        for p in 0..12 {
            assert_eq!(ix.encode(&ix.decode(p)), p);
        }
        assert_eq!(ix.decode(1), vec![0, 0, 1]);
        assert_eq!(ix.decode(4), vec![1, 0, 0]);
    }

    #[test]
    fn well_formed_game_passes() {
        let report = validate_game(&constant_kernel_game());
        assert!(report.is_pass(), "{report}");
        assert!(report.no_g_atom);
    }

    #[test]
    fn negative_component_is_reported() {
        let mut spec = constant_kernel_game();
        spec.kernel.q[0][1][0][0] = -0.1;
        let report = validate_game(&spec);
        assert!(report
            .violations
            .iter()
            .any(|v| v.to_string().starts_with("negative kernel component")));
    }

    #[test]
    fn normalization_failure_is_reported() {
        let mut spec = constant_kernel_game();
        spec.kernel.q[1][2][0][0] = 0.98;
        let report = validate_game(&spec);
        let msg = report
            .violations
            .iter()
            .find_map(|v| match v {
                Violation::Normalization { total, .. } => Some(*total),
                _ => None,
            })
            .unwrap();
        assert!((msg - 0.98).abs() < 1e-12);
        assert!(report.to_string().contains("normalization 0.98 ≠ 1"));
    }

    #[test]
    fn empty_feasible_set_and_payoff_bound() {
        let mut spec = constant_kernel_game();
        spec.payoffs[0][0][0] = 10.0;
        let report = validate_game(&spec);
        assert!(matches!(report.violations[0], Violation::PayoffBound { .. }));

        let mut spec = constant_kernel_game();
        spec.feasible[1][0].clear();
        let report = validate_game(&spec);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::EmptyFeasibleSet { state: 1, player: 0 })));
    }

    #[test]
    fn atom_density_breaks_no_g_atom() {
        let mut spec = constant_kernel_game();
        spec.space = GridSpace::new(vec![Cell::divisible(0.5), Cell::atomic(0.5)], vec![0, 0]).unwrap();
        spec.atom_kernel = vec![vec![vec![0.0]; 4]; 2];
        let report = validate_game(&spec);
        assert!(report.is_pass(), "{report}");
        assert!(!report.no_g_atom);
    }

    #[test]
    fn sunspot_one_cell() {
        let mut spec = constant_kernel_game();
        spec.space = GridSpace::new(vec![Cell::divisible(1.0)], vec![0]).unwrap();
        spec.feasible.truncate(1);
        spec.payoffs.truncate(1);
        spec.kernel.q.truncate(1);
        spec.kernel.rho = vec![vec![1.0]];
        spec.atom_kernel.truncate(1);
        assert!(validate_game(&spec).is_pass());
        let ext = sunspot_extend(&spec, 2).unwrap();
        assert_eq!(ext.space.n_cells(), 2);
        assert_eq!(ext.space.n_coarse(), 1);
        assert_eq!(ext.density(0, 0, 0), ext.density(0, 0, 1));
        assert_eq!(ext.payoffs[0], ext.payoffs[1]);
        assert!(validate_game(&ext).is_pass());
    }

    #[test]
    fn sunspot_rejects_small_or_atomic() {
        let spec = constant_kernel_game();
        assert!(sunspot_extend(&spec, 1).is_err());
        let mut atomic = constant_kernel_game();
        atomic.space = GridSpace::new(vec![Cell::atomic(0.5), Cell::atomic(0.5)], vec![0, 1]).unwrap();
        atomic.kernel.q = vec![vec![vec![vec![0.0, 0.0]]; 4]; 2];
        atomic.kernel.rho = vec![vec![0.0, 0.0]];
        atomic.atom_kernel = vec![vec![vec![0.5, 0.5]; 4]; 2];
        assert!(validate_game(&atomic).is_pass());
        assert!(matches!(sunspot_extend(&atomic, 2), Err(Error::InvalidInput(_))));
    }
}
