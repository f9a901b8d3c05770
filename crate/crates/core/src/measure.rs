//! Finite measure spaces built from weighted cells.
//!
//! A [`GridSpace`] is a list of fine cells, each carrying a mass and a
//! divisibility flag, plus a coarse partition standing for the sub-σ-algebra
//! `G`. Divisible cells behave like atomless pieces of the state space (they can
//! be split into sub-intervals of any proportion); atomic cells are indivisible
//! point masses.
//!
//! Functions on the space are cell-constant ([`StepFunction`]), while
//! selections produced by splitting divisible cells are carried by
//! [`SplitSelection`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hull;

/// Tolerance on per-cell convex-hull membership during purification.
pub const HULL_TOL: f64 = 1e-9;
/// Tolerance on aggregate moment matching.
pub const AGGREGATE_TOL: f64 = 1e-10;
/// Largest number of assignments the atomic exhaustive search will visit.
pub const MAX_ATOMIC_PATTERNS: u64 = 1 << 24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mass: f64,
    pub divisible: bool,
}

impl Cell {
    pub fn divisible(mass: f64) -> Self {
        Cell { mass, divisible: true }
    }

    pub fn atomic(mass: f64) -> Self {
        Cell { mass, divisible: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpace {
    cells: Vec<Cell>,
    coarse_map: Vec<usize>,
    members: Vec<Vec<usize>>,
    total_mass: f64,
}

impl GridSpace {
    /// Builds a space from fine cells and a surjective map onto coarse cells
    /// `0..n_coarse`.
    pub fn new(cells: Vec<Cell>, coarse_map: Vec<usize>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::invalid("grid has no cells"));
        }
        if cells.len() != coarse_map.len() {
            return Err(Error::invalid(format!(
                "coarse map has {} entries for {} cells",
                coarse_map.len(),
                cells.len()
            )));
        }
        for (k, c) in cells.iter().enumerate() {
            if !c.mass.is_finite() || c.mass < 0.0 {
                return Err(Error::invalid(format!("cell {k} has invalid mass {}", c.mass)));
            }
        }
        let n_coarse = coarse_map.iter().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); n_coarse];
        for (k, &e) in coarse_map.iter().enumerate() {
            members[e].push(k);
        }
        if let Some(e) = members.iter().position(Vec::is_empty) {
            return Err(Error::invalid(format!("coarse cell {e} is empty")));
        }
        let total_mass = cells.iter().map(|c| c.mass).sum();
        Ok(GridSpace {
            cells,
            coarse_map,
            members,
            total_mass,
        })
    }

    /// `n` divisible cells of equal mass `1/n` in a single coarse cell.
    pub fn uniform(n: usize) -> Self {
        let cells = vec![Cell::divisible(1.0 / n as f64); n];
        GridSpace::new(cells, vec![0; n]).expect("uniform grid is well formed")
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_coarse(&self) -> usize {
        self.members.len()
    }

    pub fn coarse_map(&self) -> &[usize] {
        &self.coarse_map
    }

    pub fn coarse_of(&self, k: usize) -> usize {
        self.coarse_map[k]
    }

    pub fn members(&self, e: usize) -> &[usize] {
        &self.members[e]
    }

    pub fn mass(&self, k: usize) -> f64 {
        self.cells[k].mass
    }

    pub fn is_divisible(&self, k: usize) -> bool {
        self.cells[k].divisible
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn coarse_mass(&self, e: usize) -> f64 {
        self.members[e].iter().map(|&k| self.cells[k].mass).sum()
    }

    /// Indices of atomic cells, in cell order. Position in this list is the
    /// atom index used by transition tables.
    pub fn atoms(&self) -> Vec<usize> {
        (0..self.n_cells()).filter(|&k| !self.cells[k].divisible).collect()
    }

    pub fn divisible_cells(&self) -> Vec<usize> {
        (0..self.n_cells()).filter(|&k| self.cells[k].divisible).collect()
    }
}

/// A vector-valued function constant on every fine cell.
#[derive(Clone, Debug, PartialEq)]
pub struct StepFunction {
    dim: usize,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::invalid("step function needs at least one cell and dimension"));
        }
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (k, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::invalid(format!(
                    "cell {k} has dimension {} (expected {dim})",
                    row.len()
                )));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("cell {k} has a non-finite value")));
            }
            values.extend_from_slice(row);
        }
        Ok(StepFunction { dim, values })
    }

    pub fn scalar(values: Vec<f64>) -> Result<Self> {
        StepFunction::new(values.into_iter().map(|v| vec![v]).collect())
    }

    pub fn constant(n_cells: usize, value: &[f64]) -> Self {
        StepFunction {
            dim: value.len(),
            values: value.iter().copied().cycle().take(n_cells * value.len()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    /// `Σ_k λ_k f_k`, per component.
    pub fn integral(&self, space: &GridSpace) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for k in 0..self.n_cells() {
            let m = space.mass(k);
            for (o, v) in out.iter_mut().zip(self.value(k)) {
                *o += m * v;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPiece {
    pub fraction: f64,
    pub value: Vec<f64>,
}

/// Per cell, a finite list of sub-intervals `(fraction, value)` whose
/// fractions sum to one. Atomic cells carry a single piece.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSelection {
    cells: Vec<Vec<SplitPiece>>,
}

impl SplitSelection {
    pub fn new(cells: Vec<Vec<SplitPiece>>, space: &GridSpace) -> Result<Self> {
        if cells.len() != space.n_cells() {
            return Err(Error::invalid("selection does not cover the grid"));
        }
        for (k, pieces) in cells.iter().enumerate() {
            if pieces.is_empty() {
                return Err(Error::invalid(format!("cell {k} has no pieces")));
            }
            if !space.is_divisible(k) && pieces.len() != 1 {
                return Err(Error::invalid(format!(
                    "atomic cell {k} carries {} pieces",
                    pieces.len()
                )));
            }
            if pieces.iter().any(|p| !(0.0..=1.0).contains(&p.fraction)) {
                return Err(Error::invalid(format!("cell {k} has a fraction outside [0, 1]")));
            }
            let total: f64 = pieces.iter().map(|p| p.fraction).sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!("cell {k} fractions sum to {total}")));
            }
        }
        Ok(SplitSelection { cells })
    }

    /// Lifts a step function: every cell carries its value as a single piece.
    pub fn from_step(f: &StepFunction) -> Self {
        SplitSelection {
            cells: (0..f.n_cells())
                .map(|k| {
                    vec![SplitPiece {
                        fraction: 1.0,
                        value: f.value(k).to_vec(),
                    }]
                })
                .collect(),
        }
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn pieces(&self, k: usize) -> &[SplitPiece] {
        &self.cells[k]
    }

    pub fn into_cells(self) -> Vec<Vec<SplitPiece>> {
        self.cells
    }

    /// Fraction-weighted average value on cell `k`.
    pub fn cell_average(&self, k: usize) -> Vec<f64> {
        let dim = self.cells[k][0].value.len();
        let mut out = vec![0.0; dim];
        for p in &self.cells[k] {
            for (o, v) in out.iter_mut().zip(&p.value) {
                *o += p.fraction * v;
            }
        }
        out
    }

    pub fn averages(&self) -> StepFunction {
        let rows = (0..self.n_cells()).map(|k| self.cell_average(k)).collect();
        StepFunction::new(rows).expect("selection values are finite")
    }

    /// `Σ_{k∈E} λ_k w_k ⟨v⟩_k` for every coarse cell `E`, with `w ≡ 1` when no
    /// weight is given.
    pub fn coarse_integrals(&self, space: &GridSpace, weight: Option<&StepFunction>) -> Vec<Vec<f64>> {
        let dim = self.cells[0][0].value.len();
        let mut out = vec![vec![0.0; dim]; space.n_coarse()];
        for k in 0..self.n_cells() {
            let w = weight.map_or(1.0, |w| w.value(k)[0]);
            let m = space.mass(k) * w;
            let avg = self.cell_average(k);
            for (o, v) in out[space.coarse_of(k)].iter_mut().zip(avg) {
                *o += m * v;
            }
        }
        out
    }
}

/// Per cell, the finite set of admissible value vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateField {
    sets: Vec<Vec<Vec<f64>>>,
}

impl CandidateField {
    pub fn new(sets: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if let Some(k) = sets.iter().position(Vec::is_empty) {
            return Err(Error::invalid(format!("cell {k} has an empty candidate set")));
        }
        Ok(CandidateField { sets })
    }

    /// The same candidate set on every cell.
    pub fn uniform(n_cells: usize, set: Vec<Vec<f64>>) -> Result<Self> {
        CandidateField::new(vec![set; n_cells])
    }

    pub fn n_cells(&self) -> usize {
        self.sets.len()
    }

    pub fn set(&self, k: usize) -> &[Vec<f64>] {
        &self.sets[k]
    }
}

/// `E(f | G)`: on each coarse cell, the mass-weighted average of `f`.
pub fn conditional_expectation(f: &StepFunction, space: &GridSpace) -> Result<StepFunction> {
    if f.n_cells() != space.n_cells() {
        return Err(Error::invalid(format!(
            "function has {} cells, space has {}",
            f.n_cells(),
            space.n_cells()
        )));
    }
    let dim = f.dim();
    let mut coarse = vec![vec![0.0; dim]; space.n_coarse()];
    for (e, acc) in coarse.iter_mut().enumerate() {
        let mass = space.coarse_mass(e);
        if mass <= 0.0 {
            continue;
        }
        for &k in space.members(e) {
            let m = space.mass(k);
            for (a, v) in acc.iter_mut().zip(f.value(k)) {
                *a += m * v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= mass);
    }
    let rows = (0..space.n_cells())
        .map(|k| coarse[space.coarse_of(k)].clone())
        .collect();
    StepFunction::new(rows)
}

/// A measurable set described cell by cell: the mass of each cell it retains.
#[derive(Clone, Debug, PartialEq)]
pub struct RetainedSet {
    retained: Vec<f64>,
}

impl RetainedSet {
    pub fn new(space: &GridSpace, entries: &[(usize, f64)]) -> Result<Self> {
        let mut retained = vec![0.0; space.n_cells()];
        for &(k, m) in entries {
            if k >= space.n_cells() {
                return Err(Error::invalid(format!("cell {k} out of range")));
            }
            if !m.is_finite() || m < 0.0 {
                return Err(Error::invalid(format!("retained mass {m} on cell {k}")));
            }
            retained[k] += m;
        }
        for (k, &r) in retained.iter().enumerate() {
            if r > space.mass(k) * (1.0 + 1e-12) + 1e-15 {
                return Err(Error::invalid(format!(
                    "cell {k} retains {r}, more than its mass {}",
                    space.mass(k)
                )));
            }
        }
        Ok(RetainedSet { retained })
    }

    /// Whole cells.
    pub fn cells(space: &GridSpace, cells: &[usize]) -> Result<Self> {
        let entries: Vec<_> = cells
            .iter()
            .map(|&k| (k, space.cells().get(k).map_or(0.0, |c| c.mass)))
            .collect();
        if let Some(&k) = cells.iter().find(|&&k| k >= space.n_cells()) {
            return Err(Error::invalid(format!("cell {k} out of range")));
        }
        RetainedSet::new(space, &entries)
    }

    pub fn retained(&self, k: usize) -> f64 {
        self.retained[k]
    }

    pub fn total(&self) -> f64 {
        self.retained.iter().sum()
    }

    pub fn by_coarse(&self, space: &GridSpace) -> Vec<f64> {
        let mut out = vec![0.0; space.n_coarse()];
        for (k, r) in self.retained.iter().enumerate() {
            out[space.coarse_of(k)] += r;
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GAtomVerdict {
    Atom,
    NotAtom,
    /// `λ(D) = 0`: the positivity clause of the definition fails.
    NullSet,
}

impl GAtomVerdict {
    pub fn is_atom(self) -> bool {
        self == GAtomVerdict::Atom
    }
}

/// Decides whether `D` is a `G`-atom: `λ(D) > 0` and every measurable subset of
/// `D` agrees, up to null sets, with the trace on `D` of some coarse set.
///
/// On a grid this holds exactly when `D` retains no divisible mass and each
/// positive-mass atomic cell of `D` is alone within its coarse cell.
pub fn is_g_atom(d: &RetainedSet, space: &GridSpace) -> GAtomVerdict {
    if d.total() <= 0.0 {
        return GAtomVerdict::NullSet;
    }
    let mut seen = vec![false; space.n_coarse()];
    for k in 0..space.n_cells() {
        if d.retained(k) <= 0.0 {
            continue;
        }
        if space.is_divisible(k) {
            return GAtomVerdict::NotAtom;
        }
        let e = space.coarse_of(k);
        if seen[e] {
            return GAtomVerdict::NotAtom;
        }
        seen[e] = true;
    }
    GAtomVerdict::Atom
}

/// Splits `D` into `D0 ⊆ D` with `λ(D0 ∩ E) = ½ λ(D ∩ E)` for every coarse
/// cell `E`. The result is the indicator of `D0` as a selection with values
/// `[1.0]` on `D0` and `[0.0]` elsewhere.
pub fn half_split(d: &RetainedSet, space: &GridSpace) -> Result<SplitSelection> {
    let mut cells = Vec::with_capacity(space.n_cells());
    for k in 0..space.n_cells() {
        let r = d.retained(k);
        if r > 0.0 && !space.is_divisible(k) {
            return Err(Error::AtomicMass { cell: k });
        }
        let pieces = if r > 0.0 {
            let inside = (r / (2.0 * space.mass(k))).min(0.5);
            vec![
                SplitPiece {
                    fraction: inside,
                    value: vec![1.0],
                },
                SplitPiece {
                    fraction: 1.0 - inside,
                    value: vec![0.0],
                },
            ]
        } else {
            vec![SplitPiece {
                fraction: 1.0,
                value: vec![0.0],
            }]
        };
        cells.push(pieces);
    }
    SplitSelection::new(cells, space)
}

/// Purified selection with each piece tagged by the index of the candidate it
/// realizes in its cell's candidate set.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexedSelection {
    pub cells: Vec<Vec<(f64, usize)>>,
}

impl IndexedSelection {
    pub fn to_selection(&self, candidates: &CandidateField, space: &GridSpace) -> Result<SplitSelection> {
        let cells = self
            .cells
            .iter()
            .enumerate()
            .map(|(k, pieces)| {
                pieces
                    .iter()
                    .map(|&(fraction, c)| SplitPiece {
                        fraction,
                        value: candidates.set(k)[c].clone(),
                    })
                    .collect()
            })
            .collect();
        SplitSelection::new(cells, space)
    }
}

/// Replaces a selection `vprime` of the convexified candidate field by a
/// selection of the field itself with the same conditional moments
/// `E(v ρ_j | G)` for every moment `ρ_j` and for `ρ ≡ 1`.
///
/// Divisible cells are split into sub-intervals whose fraction-weighted
/// average equals `vprime` on the cell, so every moment matches cell by cell.
/// Atomic cells cannot be split: when `vprime` is not already a candidate, the
/// atomic cells of each coarse cell are searched exhaustively for an
/// assignment with matching aggregates.
pub fn purify_selection(
    vprime: &StepFunction,
    candidates: &CandidateField,
    moments: &[StepFunction],
    space: &GridSpace,
) -> Result<SplitSelection> {
    purify_indexed(vprime, candidates, moments, space)?.to_selection(candidates, space)
}

pub fn purify_indexed(
    vprime: &StepFunction,
    candidates: &CandidateField,
    moments: &[StepFunction],
    space: &GridSpace,
) -> Result<IndexedSelection> {
    let n = space.n_cells();
    if vprime.n_cells() != n || candidates.n_cells() != n {
        return Err(Error::invalid("purification inputs do not match the grid"));
    }
    let dim = vprime.dim();
    for k in 0..n {
        if candidates.set(k).iter().any(|c| c.len() != dim) {
            return Err(Error::invalid(format!(
                "cell {k} has candidates of the wrong dimension"
            )));
        }
    }
    for (j, rho) in moments.iter().enumerate() {
        if rho.n_cells() != n || rho.dim() != 1 {
            return Err(Error::invalid(format!(
                "moment {j} is not a scalar function on the grid"
            )));
        }
        if (0..n).any(|k| rho.value(k)[0] < 0.0) {
            return Err(Error::invalid(format!("moment {j} is negative somewhere")));
        }
    }

    let mut cells: Vec<Vec<(f64, usize)>> = vec![Vec::new(); n];
    for k in space.divisible_cells() {
        let w = hull::caratheodory_weights(candidates.set(k), vprime.value(k), HULL_TOL)
            .ok_or_else(|| Error::invalid(format!("value on divisible cell {k} is outside the candidate hull")))?;
        cells[k] = w.into_iter().filter(|&(_, f)| f > 0.0).map(|(c, f)| (f, c)).collect();
        normalize_fractions(&mut cells[k]);
    }

    for e in 0..space.n_coarse() {
        let atomic: Vec<usize> = space
            .members(e)
            .iter()
            .copied()
            .filter(|&k| !space.is_divisible(k))
            .collect();
        if atomic.is_empty() {
            continue;
        }
        let direct: Vec<Option<usize>> = atomic
            .iter()
            .map(|&k| {
                candidates
                    .set(k)
                    .iter()
                    .position(|c| sup_dist(c, vprime.value(k)) <= HULL_TOL)
            })
            .collect();
        let choice: Vec<usize> = if direct.iter().all(Option::is_some) {
            direct.into_iter().map(Option::unwrap).collect()
        } else {
            let outcome = atomic_search(&atomic, vprime, candidates, moments, space)?;
            match outcome.found {
                Some(c) => c,
                None => return Err(Error::NoSelection { coarse: e }),
            }
        };
        for (&k, c) in atomic.iter().zip(choice) {
            cells[k] = vec![(1.0, c)];
        }
    }
    Ok(IndexedSelection { cells })
}

fn normalize_fractions(pieces: &mut [(f64, usize)]) {
    let total: f64 = pieces.iter().map(|p| p.0).sum();
    pieces.iter_mut().for_each(|p| p.0 /= total);
}

#[derive(Clone, Debug, PartialEq)]
pub struct AtomicSearchOutcome {
    /// Candidate index per searched cell, lexicographically first match.
    pub found: Option<Vec<usize>>,
    pub patterns_checked: u64,
}

/// Exhaustive search over candidate assignments of `cells` (all in one coarse
/// cell) for one whose moment aggregates `Σ λ_k ρ_j,k v_k` (with `ρ ≡ 1`
/// included) match those of `vprime` within [`AGGREGATE_TOL`]. Zero-mass
/// cells do not enter the aggregates and take the candidate nearest to
/// `vprime`.
pub fn atomic_search(
    cells: &[usize],
    vprime: &StepFunction,
    candidates: &CandidateField,
    moments: &[StepFunction],
    space: &GridSpace,
) -> Result<AtomicSearchOutcome> {
    let dim = vprime.dim();
    let weight = |k: usize, j: usize| -> f64 {
        let rho = if j == 0 { 1.0 } else { moments[j - 1].value(k)[0] };
        space.mass(k) * rho
    };
    let n_mom = moments.len() + 1;
    let active: Vec<usize> = cells.iter().copied().filter(|&k| space.mass(k) > 0.0).collect();

    let mut target = vec![0.0; n_mom * dim];
    let mut scale = vec![0.0_f64; n_mom * dim];
    for &k in &active {
        for j in 0..n_mom {
            let w = weight(k, j);
            for d in 0..dim {
                target[j * dim + d] += w * vprime.value(k)[d];
                let cmax = candidates.set(k).iter().map(|c| c[d].abs()).fold(0.0, f64::max);
                scale[j * dim + d] += w.abs() * cmax.max(vprime.value(k)[d].abs());
            }
        }
    }

    let total_patterns = active
        .iter()
        .try_fold(1u64, |acc, &k| acc.checked_mul(candidates.set(k).len() as u64))
        .filter(|&p| p <= MAX_ATOMIC_PATTERNS)
        .ok_or_else(|| Error::invalid("atomic assignment search exceeds its size limit"))?;

    // contributions[i][c] = aggregate vector of cell active[i] choosing candidate c
    let contributions: Vec<Vec<Vec<f64>>> = active
        .iter()
        .map(|&k| {
            candidates
                .set(k)
                .iter()
                .map(|cand| {
                    let mut v = vec![0.0; n_mom * dim];
                    for j in 0..n_mom {
                        let w = weight(k, j);
                        for d in 0..dim {
                            v[j * dim + d] = w * cand[d];
                        }
                    }
                    v
                })
                .collect()
        })
        .collect();

    let mut odometer = vec![0usize; active.len()];
    let mut checked = 0u64;
    let mut found = None;
    let mut sum = vec![0.0; n_mom * dim];
    while checked < total_patterns {
        sum.iter_mut().for_each(|s| *s = 0.0);
        for (i, &c) in odometer.iter().enumerate() {
            for (s, v) in sum.iter_mut().zip(&contributions[i][c]) {
                *s += v;
            }
        }
        checked += 1;
        let ok = sum
            .iter()
            .zip(&target)
            .zip(&scale)
            .all(|((s, t), sc)| (s - t).abs() <= AGGREGATE_TOL * sc.max(1.0));
        if ok {
            found = Some(odometer.clone());
            break;
        }
        // last cell varies fastest
        for i in (0..odometer.len()).rev() {
            odometer[i] += 1;
            if odometer[i] < contributions[i].len() {
                break;
            }
            odometer[i] = 0;
        }
    }

    let found = found.map(|assign| {
        let mut by_cell = Vec::with_capacity(cells.len());
        let mut it = assign.into_iter();
        for &k in cells {
            if space.mass(k) > 0.0 {
                by_cell.push(it.next().expect("one choice per active cell"));
            } else {
                by_cell.push(nearest_candidate(candidates.set(k), vprime.value(k)));
            }
        }
        by_cell
    });
    Ok(AtomicSearchOutcome {
        found,
        patterns_checked: checked,
    })
}

fn nearest_candidate(set: &[Vec<f64>], v: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, cand) in set.iter().enumerate() {
        let d = sup_dist(cand, v);
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
