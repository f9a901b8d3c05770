//! One-shot auxiliary games and their Nash equilibria.
//!
//! At every state the continuation values enter the stage game only through
//! the aggregates `c[i][j][E] = Σ_{k∈E} λ_k ρ_j,k v_i,k` and the atom values,
//! so [`build_stage_game`] needs nothing else from the value function.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{ProfileIndexer, StochasticGameSpec};

/// Best-response tolerance used to accept an equilibrium.
pub const BR_TOL: f64 = 1e-10;
/// Strategies closer than this (sup norm) are the same equilibrium.
pub const DEDUP_TOL: f64 = 1e-8;
const PERTURBATION: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct StageGame {
    /// Global action labels available to each player.
    pub actions: Vec<Vec<usize>>,
    /// `payoffs[x][i]` over local profile indices.
    pub payoffs: Vec<Vec<f64>>,
    indexer: ProfileIndexer,
}

impl StageGame {
    pub fn new(actions: Vec<Vec<usize>>, payoffs: Vec<Vec<f64>>) -> Result<Self> {
        let indexer = ProfileIndexer::new(actions.iter().map(Vec::len).collect());
        let m = actions.len();
        if m == 0 || actions.iter().any(Vec::is_empty) {
            return Err(Error::invalid("stage game needs players with nonempty action sets"));
        }
        if payoffs.len() != indexer.count() || payoffs.iter().any(|p| p.len() != m) {
            return Err(Error::invalid("payoff tensor does not match the action sets"));
        }
        if payoffs.iter().flatten().any(|u| !u.is_finite()) {
            return Err(Error::invalid("payoff tensor has non-finite entries"));
        }
        Ok(StageGame {
            actions,
            payoffs,
            indexer,
        })
    }

    /// Two-player game from row and column payoff matrices.
    pub fn bimatrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Self> {
        let rows = a.len();
        let cols = a.first().map_or(0, Vec::len);
        let mut payoffs = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                payoffs.push(vec![a[r][c], b[r][c]]);
            }
        }
        StageGame::new(vec![(0..rows).collect(), (0..cols).collect()], payoffs)
    }

    pub fn players(&self) -> usize {
        self.actions.len()
    }

    pub fn n_actions(&self, i: usize) -> usize {
        self.actions[i].len()
    }

    pub fn indexer(&self) -> &ProfileIndexer {
        &self.indexer
    }

    pub fn payoff(&self, profile: &[usize], i: usize) -> f64 {
        self.payoffs[self.indexer.encode(profile)][i]
    }

    /// Expected payoff vector under a mixed profile.
    pub fn expected_payoffs(&self, strategies: &[Vec<f64>]) -> Vec<f64> {
        let m = self.players();
        let mut out = vec![0.0; m];
        for x in 0..self.indexer.count() {
            let prof = self.indexer.decode(x);
            let w: f64 = prof.iter().enumerate().map(|(i, &a)| strategies[i][a]).product();
            if w == 0.0 {
                continue;
            }
            for i in 0..m {
                out[i] += w * self.payoffs[x][i];
            }
        }
        out
    }

    /// Payoff to player `i` of each pure action against the others' mixtures.
    pub fn deviation_payoffs(&self, i: usize, strategies: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_actions(i)];
        for x in 0..self.indexer.count() {
            let prof = self.indexer.decode(x);
            let w: f64 = prof
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, &a)| strategies[j][a])
                .product();
            if w != 0.0 {
                out[prof[i]] += w * self.payoffs[x][i];
            }
        }
        out
    }

    /// Largest gain any player obtains from a unilateral pure deviation.
    pub fn max_gain(&self, strategies: &[Vec<f64>]) -> f64 {
        let current = self.expected_payoffs(strategies);
        (0..self.players())
            .map(|i| {
                let best = self
                    .deviation_payoffs(i, strategies)
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max);
                best - current[i]
            })
            .fold(0.0, f64::max)
    }

    fn scale(&self) -> f64 {
        self.payoffs.iter().flatten().fold(1.0_f64, |a, u| a.max(u.abs()))
    }

    /// Deterministic generic shift of every payoff by at most `1e-12 · scale`.
    fn perturbed(&self) -> StageGame {
        let scale = self.scale();
        let m = self.players();
        let payoffs = self
            .payoffs
            .iter()
            .enumerate()
            .map(|(x, row)| {
                row.iter()
                    .enumerate()
                    .map(|(i, u)| {
                        let h = ((x * m + i + 1) as f64 * 0.618_033_988_749_894_9).fract();
                        u + PERTURBATION * scale * h
                    })
                    .collect()
            })
            .collect();
        StageGame {
            actions: self.actions.clone(),
            payoffs,
            indexer: self.indexer.clone(),
        }
    }

    /// Whether some player has two actions with identical payoffs against
    /// every opponent profile.
    fn has_equivalent_actions(&self) -> bool {
        let tol = 1e-12 * self.scale();
        for i in 0..self.players() {
            for a in 0..self.n_actions(i) {
                for b in a + 1..self.n_actions(i) {
                    let same = (0..self.indexer.count()).all(|x| {
                        let mut prof = self.indexer.decode(x);
                        if prof[i] != a {
                            return true;
                        }
                        let ua = self.payoffs[x][i];
                        prof[i] = b;
                        (ua - self.payoffs[self.indexer.encode(&prof)][i]).abs() <= tol
                    });
                    if same {
                        return true;
                    }
                }
            }
        }
        false
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NashPoint {
    /// Probability vector per player over that player's stage-game actions.
    pub strategies: Vec<Vec<f64>>,
    pub payoffs: Vec<f64>,
}

impl NashPoint {
    fn cmp_lex(&self, other: &Self) -> Ordering {
        let by_payoff = self
            .payoffs
            .iter()
            .zip(&other.payoffs)
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal);
        by_payoff.then_with(|| {
            self.strategies
                .iter()
                .flatten()
                .zip(other.strategies.iter().flatten())
                .map(|(a, b)| a.total_cmp(b))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
    }

    fn same_as(&self, other: &Self) -> bool {
        self.strategies
            .iter()
            .flatten()
            .zip(other.strategies.iter().flatten())
            .all(|(a, b)| (a - b).abs() <= DEDUP_TOL)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EnumerationMode {
    /// Exact support enumeration inside the exact envelope (at most three
    /// players, four actions each), regret matching outside it.
    Auto,
    Exact,
    Approximate {
        target_eps: f64,
        max_iter: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct NashEnumeration {
    pub points: Vec<NashPoint>,
    /// Set in approximate mode: the verified ε of the returned profile.
    pub approximate_eps: Option<f64>,
    /// The game was degenerate and a perturbed copy was enumerated as well.
    pub perturbed: bool,
    /// The perturbed and unperturbed enumerations found different counts.
    pub count_mismatch: bool,
}

/// All Nash equilibria found by exact support enumeration (or a single
/// ε-equilibrium outside the exact envelope), sorted by payoff vector.
pub fn nash_enumerate(g: &StageGame) -> Result<Vec<NashPoint>> {
    Ok(nash_enumerate_with(g, EnumerationMode::Auto)?.points)
}

pub fn nash_enumerate_with(g: &StageGame, mode: EnumerationMode) -> Result<NashEnumeration> {
    let in_envelope = g.players() <= 3 && (0..g.players()).all(|i| g.n_actions(i) <= 4);
    match mode {
        EnumerationMode::Auto if !in_envelope => regret_matching(g, 1e-6, 200_000),
        EnumerationMode::Approximate { target_eps, max_iter } => regret_matching(g, target_eps, max_iter),
        _ => exact(g),
    }
}

fn exact(g: &StageGame) -> Result<NashEnumeration> {
    let (mut points, singular) = enumerate_supports(g, g);
    let mut perturbed = false;
    let mut count_mismatch = false;
    if singular || g.has_equivalent_actions() || points.is_empty() {
        perturbed = true;
        let work = g.perturbed();
        let (extra, _) = enumerate_supports(&work, g);
        count_mismatch = extra.len() != points.len();
        for p in extra {
            if !points.iter().any(|q| q.same_as(&p)) {
                points.push(p);
            }
        }
    }
    if points.is_empty() {
        // supports exhausted without a verified point; fall back to learning
        return regret_matching(g, 1e-9, 500_000);
    }
    points.sort_by(NashPoint::cmp_lex);
    Ok(NashEnumeration {
        points,
        approximate_eps: None,
        perturbed,
        count_mismatch,
    })
}

/// Support enumeration on `work`, verifying against `original`. Returns the
/// verified equilibria and whether a singular system was met.
fn enumerate_supports(work: &StageGame, original: &StageGame) -> (Vec<NashPoint>, bool) {
    let m = work.players();
    let mut singular = false;
    let mut found: Vec<NashPoint> = Vec::new();
    let accept = |strategies: Vec<Vec<f64>>, found: &mut Vec<NashPoint>| {
        if original.max_gain(&strategies) <= BR_TOL {
            let payoffs = original.expected_payoffs(&strategies);
            let p = NashPoint { strategies, payoffs };
            if !found.iter().any(|q| q.same_as(&p)) {
                found.push(p);
            }
        }
    };
    match m {
        1 => {
            let u: Vec<f64> = (0..work.n_actions(0)).map(|a| work.payoffs[a][0]).collect();
            let best = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (a, &ua) in u.iter().enumerate() {
                if ua >= best - BR_TOL {
                    accept(vec![unit(work.n_actions(0), a)], &mut found);
                }
            }
        }
        2 => {
            let (n1, n2) = (work.n_actions(0), work.n_actions(1));
            for k in 1..=n1.min(n2) {
                for rows in subsets(n1, k) {
                    for cols in subsets(n2, k) {
                        match two_player_support(work, &rows, &cols) {
                            SupportSolve::Solved(s) => accept(s, &mut found),
                            SupportSolve::Singular => singular = true,
                            SupportSolve::Infeasible => {}
                        }
                    }
                }
            }
        }
        _ => {
            let supports: Vec<Vec<Vec<usize>>> = (0..m)
                .map(|i| {
                    (1..=work.n_actions(i))
                        .flat_map(|k| subsets(work.n_actions(i), k))
                        .collect()
                })
                .collect();
            let ix = ProfileIndexer::new(supports.iter().map(Vec::len).collect());
            for t in 0..ix.count() {
                let choice = ix.decode(t);
                let sup: Vec<&Vec<usize>> = choice.iter().enumerate().map(|(i, &c)| &supports[i][c]).collect();
                for s in newton_support(work, &sup, &mut singular) {
                    accept(s, &mut found);
                }
            }
        }
    }
    (found, singular)
}

enum SupportSolve {
    Solved(Vec<Vec<f64>>),
    Singular,
    Infeasible,
}

fn two_player_support(g: &StageGame, rows: &[usize], cols: &[usize]) -> SupportSolve {
    let k = rows.len();
    let pay = |r: usize, c: usize, i: usize| g.payoffs[r * g.n_actions(1) + c][i];
    // column mixture y making the row player indifferent over `rows`
    let mut a = vec![vec![0.0; k + 1]; k + 1];
    let mut b = vec![0.0; k + 1];
    for (e, &r) in rows.iter().enumerate() {
        for (u, &c) in cols.iter().enumerate() {
            a[e][u] = pay(r, c, 0);
        }
        a[e][k] = -1.0;
    }
    for u in 0..k {
        a[k][u] = 1.0;
    }
    b[k] = 1.0;
    let Some(y) = solve_linear(a, b) else {
        return SupportSolve::Singular;
    };
    let mut a = vec![vec![0.0; k + 1]; k + 1];
    let mut b = vec![0.0; k + 1];
    for (e, &c) in cols.iter().enumerate() {
        for (u, &r) in rows.iter().enumerate() {
            a[e][u] = pay(r, c, 1);
        }
        a[e][k] = -1.0;
    }
    for u in 0..k {
        a[k][u] = 1.0;
    }
    b[k] = 1.0;
    let Some(x) = solve_linear(a, b) else {
        return SupportSolve::Singular;
    };
    if x[..k].iter().chain(&y[..k]).any(|&p| p < -1e-12) {
        return SupportSolve::Infeasible;
    }
    let mut sx = vec![0.0; g.n_actions(0)];
    let mut sy = vec![0.0; g.n_actions(1)];
    for (u, &r) in rows.iter().enumerate() {
        sx[r] = x[u].max(0.0);
    }
    for (u, &c) in cols.iter().enumerate() {
        sy[c] = y[u].max(0.0);
    }
    normalize(&mut sx);
    normalize(&mut sy);
    SupportSolve::Solved(vec![sx, sy])
}

/// Damped Newton on the indifference system of a support profile, from eight
/// deterministic starting points.
fn newton_support(g: &StageGame, sup: &[&Vec<usize>], singular: &mut bool) -> Vec<Vec<Vec<f64>>> {
    let m = g.players();
    if sup.iter().all(|s| s.len() == 1) {
        let strategies = (0..m).map(|i| unit(g.n_actions(i), sup[i][0])).collect();
        return vec![strategies];
    }
    let offsets: Vec<usize> = sup
        .iter()
        .scan(0, |acc, s| {
            let o = *acc;
            *acc += s.len();
            Some(o)
        })
        .collect();
    let n_sigma: usize = sup.iter().map(|s| s.len()).sum();
    let dim = n_sigma + m;

    let to_strategies = |z: &[f64]| -> Vec<Vec<f64>> {
        (0..m)
            .map(|i| {
                let mut s = vec![0.0; g.n_actions(i)];
                for (u, &a) in sup[i].iter().enumerate() {
                    s[a] = z[offsets[i] + u];
                }
                s
            })
            .collect()
    };
    let residual = |z: &[f64]| -> Vec<f64> {
        let strategies = to_strategies(z);
        let mut f = Vec::with_capacity(dim);
        for i in 0..m {
            let dev = g.deviation_payoffs(i, &strategies);
            for &a in sup[i] {
                f.push(dev[a] - z[n_sigma + i]);
            }
        }
        for i in 0..m {
            f.push(z[offsets[i]..offsets[i] + sup[i].len()].iter().sum::<f64>() - 1.0);
        }
        f
    };
    let jacobian = |z: &[f64]| -> Vec<Vec<f64>> {
        let strategies = to_strategies(z);
        let mut jac = vec![vec![0.0; dim]; dim];
        let mut row = 0;
        for i in 0..m {
            for &a in sup[i] {
                for j in (0..m).filter(|&j| j != i) {
                    for (u, &b) in sup[j].iter().enumerate() {
                        jac[row][offsets[j] + u] = pair_payoff(g, i, a, j, b, &strategies);
                    }
                }
                jac[row][n_sigma + i] = -1.0;
                row += 1;
            }
        }
        for i in 0..m {
            for u in 0..sup[i].len() {
                jac[row][offsets[i] + u] = 1.0;
            }
            row += 1;
        }
        jac
    };

    let scale = g.scale();
    let mut out: Vec<Vec<Vec<f64>>> = Vec::new();
    for start in 0..8 {
        let mut z = vec![0.0; dim];
        for i in 0..m {
            let k = sup[i].len();
            let w: Vec<f64> = (0..k)
                .map(|u| {
                    if start == 0 {
                        1.0
                    } else {
                        1.0 + 0.8 * ((start * (u + 1) + 3 * i) as f64 * 0.9).sin()
                    }
                })
                .collect();
            let total: f64 = w.iter().sum();
            for u in 0..k {
                z[offsets[i] + u] = w[u] / total;
            }
        }
        let strategies = to_strategies(&z);
        for i in 0..m {
            let dev = g.deviation_payoffs(i, &strategies);
            z[n_sigma + i] = sup[i].iter().map(|&a| dev[a]).sum::<f64>() / sup[i].len() as f64;
        }
        let mut f = residual(&z);
        let mut norm = l2(&f);
        for _ in 0..60 {
            if norm <= 1e-13 * scale {
                break;
            }
            let neg: Vec<f64> = f.iter().map(|v| -v).collect();
            let Some(step) = solve_linear(jacobian(&z), neg) else {
                *singular = true;
                break;
            };
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = z.iter().zip(&step).map(|(a, d)| a + t * d).collect();
                let ft = residual(&trial);
                let nt = l2(&ft);
                if nt < (1.0 - 0.25 * t) * norm || t < 1e-6 {
                    z = trial;
                    f = ft;
                    norm = nt;
                    break;
                }
                t *= 0.5;
            }
        }
        if norm > 1e-11 * scale || z[..n_sigma].iter().any(|&p| p < -1e-9) {
            continue;
        }
        let mut strategies = to_strategies(&z);
        strategies.iter_mut().for_each(|s| {
            s.iter_mut().for_each(|p| *p = p.max(0.0));
            normalize(s);
        });
        if !out.iter().any(|o| sup_dist_profiles(o, &strategies) <= DEDUP_TOL) {
            out.push(strategies);
        }
    }
    out
}

/// `E[u_i | i plays a, j plays b, others mixed]`.
fn pair_payoff(g: &StageGame, i: usize, a: usize, j: usize, b: usize, strategies: &[Vec<f64>]) -> f64 {
    let ix = g.indexer();
    let mut total = 0.0;
    for x in 0..ix.count() {
        let prof = ix.decode(x);
        if prof[i] != a || prof[j] != b {
            continue;
        }
        let w: f64 = prof
            .iter()
            .enumerate()
            .filter(|&(l, _)| l != i && l != j)
            .map(|(l, &c)| strategies[l][c])
            .product();
        total += w * g.payoffs[x][i];
    }
    total
}

fn regret_matching(g: &StageGame, target_eps: f64, max_iter: usize) -> Result<NashEnumeration> {
    let m = g.players();
    let mut regrets: Vec<Vec<f64>> = (0..m).map(|i| vec![0.0; g.n_actions(i)]).collect();
    let mut sums: Vec<Vec<f64>> = (0..m).map(|i| vec![0.0; g.n_actions(i)]).collect();
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    for t in 1..=max_iter {
        let current: Vec<Vec<f64>> = regrets
            .iter()
            .map(|r| {
                let pos: Vec<f64> = r.iter().map(|v| v.max(0.0)).collect();
                let total: f64 = pos.iter().sum();
                if total > 0.0 {
                    pos.iter().map(|p| p / total).collect()
                } else {
                    vec![1.0 / r.len() as f64; r.len()]
                }
            })
            .collect();
        let values = g.expected_payoffs(&current);
        for i in 0..m {
            let dev = g.deviation_payoffs(i, &current);
            for (a, d) in dev.iter().enumerate() {
                regrets[i][a] += d - values[i];
                sums[i][a] += current[i][a];
            }
        }
        if t % 100 == 0 || t == max_iter {
            for candidate in [sums.clone(), current] {
                let mut avg = candidate;
                avg.iter_mut().for_each(|s| normalize(s));
                let eps = g.max_gain(&avg);
                if best.as_ref().map_or(true, |(b, _)| eps < *b) {
                    best = Some((eps, avg));
                }
            }
            if best.as_ref().is_some_and(|(b, _)| *b <= target_eps) {
                break;
            }
        }
    }
    let (eps, strategies) = best.expect("at least one evaluation happens");
    if eps > target_eps {
        return Err(Error::NoConvergence {
            iterations: max_iter,
            best_epsilon: eps,
        });
    }
    let payoffs = g.expected_payoffs(&strategies);
    Ok(NashEnumeration {
        points: vec![NashPoint { strategies, payoffs }],
        approximate_eps: Some(eps),
        perturbed: false,
        count_mismatch: false,
    })
}

/// `c[i][j][E] = Σ_{k∈E} λ_k ρ_j,k v_i,k`: the only channel through which
/// continuation values on divisible cells reach the stage games.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateVector {
    players: usize,
    components: usize,
    coarse: usize,
    data: Vec<f64>,
}

impl AggregateVector {
    pub fn zeros(players: usize, components: usize, coarse: usize) -> Self {
        AggregateVector {
            players,
            components,
            coarse,
            data: vec![0.0; players * components * coarse],
        }
    }

    pub fn for_spec(spec: &StochasticGameSpec) -> Self {
        AggregateVector::zeros(spec.players, spec.kernel.n_components(), spec.space.n_coarse())
    }

    /// Aggregates of a cell-wise value function `values[k][i]`.
    pub fn from_values(spec: &StochasticGameSpec, values: &[Vec<f64>]) -> Self {
        let mut c = AggregateVector::for_spec(spec);
        for (j, rho) in spec.kernel.rho.iter().enumerate() {
            for (k, v) in values.iter().enumerate() {
                let w = spec.space.mass(k) * rho[k];
                if w == 0.0 {
                    continue;
                }
                let e = spec.space.coarse_of(k);
                for i in 0..spec.players {
                    *c.get_mut(i, j, e) += w * v[i];
                }
            }
        }
        c
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.players, self.components, self.coarse)
    }

    pub fn get(&self, i: usize, j: usize, e: usize) -> f64 {
        self.data[(i * self.components + j) * self.coarse + e]
    }

    pub fn get_mut(&mut self, i: usize, j: usize, e: usize) -> &mut f64 {
        &mut self.data[(i * self.components + j) * self.coarse + e]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn sup_dist(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `(1 − γ) self + γ other`.
    pub fn blend(&self, other: &Self, gamma: f64) -> Self {
        AggregateVector {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (1.0 - gamma) * a + gamma * b)
                .collect(),
            ..self.clone()
        }
    }
}

/// Continuation term `Σ_j Σ_E q_j(E,s,x) c[i][j][E] + Σ_a v2[a][i] · atom(a|s,x)`.
pub fn continuation(
    spec: &StochasticGameSpec,
    s: usize,
    x: usize,
    i: usize,
    c: &AggregateVector,
    v2: &[Vec<f64>],
) -> f64 {
    let q = &spec.kernel.q[s][x];
    let mut total = 0.0;
    for (j, per_e) in q.iter().enumerate() {
        for (e, &w) in per_e.iter().enumerate() {
            if w != 0.0 {
                total += w * c.get(i, j, e);
            }
        }
    }
    for (a, &mass) in spec.atom_kernel[s][x].iter().enumerate() {
        total += mass * v2[a][i];
    }
    total
}

/// The auxiliary game at state `s`:
/// `U_i(x) = (1 − β_i) u_i(s,x) + β_i · continuation_i(s,x)`.
pub fn build_stage_game(
    spec: &StochasticGameSpec,
    s: usize,
    c: &AggregateVector,
    v2: &[Vec<f64>],
) -> Result<StageGame> {
    if s >= spec.n_states() {
        return Err(Error::invalid(format!("state {s} out of range")));
    }
    if c.shape() != (spec.players, spec.kernel.n_components(), spec.space.n_coarse()) {
        return Err(Error::invalid("aggregate vector does not match the game"));
    }
    if v2.len() != spec.atoms().len() || v2.iter().any(|v| v.len() != spec.players) {
        return Err(Error::invalid("atom values do not match the game"));
    }
    let n_prof = spec.profiles(s).count();
    let payoffs = (0..n_prof)
        .map(|x| {
            (0..spec.players)
                .map(|i| {
                    let b = spec.discounts[i];
                    (1.0 - b) * spec.payoffs[s][x][i] + b * continuation(spec, s, x, i, c, v2)
                })
                .collect()
        })
        .collect();
    StageGame::new(spec.feasible[s].clone(), payoffs)
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for v in start..n {
            cur.push(v);
            rec(v + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

fn unit(n: usize, a: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[a] = 1.0;
    v
}

fn normalize(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter_mut().for_each(|p| *p /= total);
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sup_dist_profiles(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Gaussian elimination with partial pivoting; `None` when a pivot falls
/// below `1e-13` relative to the largest entry.
pub(crate) fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    for col in 0..n {
        let piv = (col..n).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))?;
        if a[piv][col].abs() <= 1e-13 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::fixtures::constant_kernel_game;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn matching_pennies_unique_mixed() {
        let a = vec![vec![1.0, -1.0], vec![-1.0, 1.0]];
        let b = vec![vec![-1.0, 1.0], vec![1.0, -1.0]];
        let g = StageGame::bimatrix(&a, &b).unwrap();
        let eq = nash_enumerate(&g).unwrap();
        assert_eq!(eq.len(), 1);
        assert!(close(&eq[0].strategies[0], &[0.5, 0.5], 1e-12));
        assert!(close(&eq[0].strategies[1], &[0.5, 0.5], 1e-12));
        assert!(close(&eq[0].payoffs, &[0.0, 0.0], 1e-12));
    }

    #[test]
    fn prisoners_dilemma_dominant_profile() {
        let a = vec![vec![3.0, 0.0], vec![5.0, 1.0]];
        let b = vec![vec![3.0, 5.0], vec![0.0, 1.0]];
        let g = StageGame::bimatrix(&a, &b).unwrap();
        let eq = nash_enumerate(&g).unwrap();
        assert_eq!(eq.len(), 1);
        assert_eq!(eq[0].strategies, vec![vec![0.0, 1.0], vec![0.0, 1.0]]);
        assert_eq!(eq[0].payoffs, vec![1.0, 1.0]);
    }

    #[test]
    fn battle_of_the_sexes_three_equilibria() {
        let a = vec![vec![2.0, 0.0], vec![0.0, 1.0]];
        let b = vec![vec![1.0, 0.0], vec![0.0, 2.0]];
        let g = StageGame::bimatrix(&a, &b).unwrap();
        let eq = nash_enumerate(&g).unwrap();
        assert_eq!(eq.len(), 3);
        let mixed = eq
            .iter()
            .find(|p| p.strategies[0][0] > 0.0 && p.strategies[0][0] < 1.0)
            .unwrap();
        assert!(close(&mixed.strategies[0], &[2.0 / 3.0, 1.0 / 3.0], 1e-10));
        assert!(close(&mixed.strategies[1], &[1.0 / 3.0, 2.0 / 3.0], 1e-10));
        assert!(close(&mixed.payoffs, &[2.0 / 3.0, 2.0 / 3.0], 1e-10));
        // sorted by payoff vector
        assert!(close(&eq[0].payoffs, &[2.0 / 3.0, 2.0 / 3.0], 1e-10));
        assert_eq!(eq[1].payoffs, vec![1.0, 2.0]);
        assert_eq!(eq[2].payoffs, vec![2.0, 1.0]);
    }

    #[test]
    fn zero_game_is_degenerate_but_solved() {
        let z = vec![vec![0.0; 2]; 2];
        let g = StageGame::bimatrix(&z, &z).unwrap();
        let res = nash_enumerate_with(&g, EnumerationMode::Exact).unwrap();
        assert!(res.perturbed);
        assert!(res.points.len() >= 4);
        for p in &res.points {
            assert!(g.max_gain(&p.strategies) <= BR_TOL);
        }
    }

    #[test]
    fn three_player_game_has_verified_equilibria() {
        // three-player matching pennies variant: player 3 wants to match player 1
        let ix = ProfileIndexer::new(vec![2, 2, 2]);
        let payoffs: Vec<Vec<f64>> = (0..8)
            .map(|x| {
                let p = ix.decode(x);
                let s = |a: usize| if a == 0 { 1.0 } else { -1.0 };
                vec![
                    s(p[0]) * s(p[1]),
                    -s(p[1]) * s(p[2]),
                    s(p[2]) * s(p[0]) * 0.5 + 0.1 * s(p[2]),
                ]
            })
            .collect();
        let g = StageGame::new(vec![vec![0, 1]; 3], payoffs).unwrap();
        let eq = nash_enumerate(&g).unwrap();
        assert!(!eq.is_empty());
        for p in &eq {
            assert!(g.max_gain(&p.strategies) <= BR_TOL);
        }
    }

    #[test]
    fn single_player_picks_maximizers() {
        let g = StageGame::new(vec![vec![0, 1, 2]], vec![vec![1.0], vec![3.0], vec![3.0]]).unwrap();
        let eq = nash_enumerate(&g).unwrap();
        assert_eq!(eq.len(), 2);
        assert!(eq.iter().all(|p| p.payoffs == vec![3.0]));
    }

    #[test]
    fn approximate_mode_reports_eps() {
        let a = vec![vec![0.0, -1.0, 2.0], vec![1.0, 0.0, -1.0], vec![-1.0, 1.0, 0.0]];
        let b: Vec<Vec<f64>> = a.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        let g = StageGame::bimatrix(&a, &b).unwrap();
        let res = nash_enumerate_with(
            &g,
            EnumerationMode::Approximate {
                target_eps: 1e-2,
                max_iter: 100_000,
            },
        )
        .unwrap();
        let eps = res.approximate_eps.unwrap();
        assert!(eps <= 1e-2);
        assert!((g.max_gain(&res.points[0].strategies) - eps).abs() < 1e-15);
    }

    #[test]
    fn approximate_mode_no_convergence() {
        let a = vec![vec![0.0, -1.0, 2.0], vec![1.0, 0.0, -1.0], vec![-1.0, 1.0, 0.0]];
        let b: Vec<Vec<f64>> = a.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        let g = StageGame::bimatrix(&a, &b).unwrap();
        let err = nash_enumerate_with(
            &g,
            EnumerationMode::Approximate {
                target_eps: 1e-12,
                max_iter: 100,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoConvergence { .. }));
    }

    #[test]
    fn discount_free_stage_game_is_the_stage_payoff() {
        let mut spec = constant_kernel_game();
        spec.discounts = vec![0.0, 0.0];
        let c = AggregateVector::for_spec(&spec);
        for s in 0..2 {
            let g = build_stage_game(&spec, s, &c, &[]).unwrap();
            assert_eq!(g.payoffs, spec.payoffs[s]);
        }
    }

    #[test]
    fn single_component_substitution() {
        let mut spec = constant_kernel_game();
        spec.discounts = vec![0.5, 0.5];
        spec.payoffs = vec![vec![vec![0.0, 0.0]; 4]; 2];
        let mut c = AggregateVector::for_spec(&spec);
        *c.get_mut(0, 0, 0) = 0.5;
        *c.get_mut(1, 0, 0) = 0.5;
        let g = build_stage_game(&spec, 0, &c, &[]).unwrap();
        assert!(g.payoffs.iter().flatten().all(|&u| (u - 0.25).abs() < 1e-15));
    }

    #[test]
    fn index_mismatch_is_invalid() {
        let spec = constant_kernel_game();
        let c = AggregateVector::zeros(2, 2, 1);
        assert!(matches!(
            build_stage_game(&spec, 0, &c, &[]),
            Err(Error::InvalidInput(_))
        ));
        let c = AggregateVector::for_spec(&spec);
        assert!(build_stage_game(&spec, 5, &c, &[]).is_err());
    }

    #[test]
    fn linear_solver_detects_singularity() {
        assert!(solve_linear(vec![vec![1.0, 2.0], vec![2.0, 4.0]], vec![1.0, 2.0]).is_none());
        let x = solve_linear(vec![vec![2.0, 1.0], vec![1.0, 3.0]], vec![3.0, 5.0]).unwrap();
        assert!(close(&x, &[0.8, 1.4], 1e-14));
    }
}
