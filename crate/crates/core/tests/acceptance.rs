//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::time::{Duration, Instant};

use num_traits::Zero;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stochgame_core::exact::{q, shifted_walsh_moments, sign_pattern_search, to_f64, Q};
use stochgame_core::game::{sunspot_extend, validate_game};
use stochgame_core::generators::{
    levy_defect_matrix, make_levy_kernel, make_noisy_game, random_noisy_params, random_nowak, random_payoffs,
    LevyParams,
};
use stochgame_core::kernel::{block_rank_profile, check_coarser, KernelMatrix};
use stochgame_core::measure::{half_split, purify_selection, RetainedSet, SplitSelection};
use stochgame_core::solver::{atom_fixed_point, atom_value_operator};
use stochgame_core::{
    build_stage_game, nash_enumerate, solve, AggregateVector, CandidateField, Cell, EquilibriumResult, Error,
    GridSpace, SimulationOptions, SolverOptions, StepFunction, StochasticGameSpec,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let mut all = true;
    let mut report = |n: usize, name: &str, o: Outcome| {
        all &= o.pass;
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n} {name}: {tag} ({})", o.detail);
    };

    report(1, "static reduction", static_reduction());
    let nowak = nowak_instances();
    report(2, "nowak family", nowak_outcome(&nowak));
    report(3, "purification exactness", purification());
    report(4, "contraction", contraction());
    report(5, "kernel structure", kernel_structure());
    report(6, "noisy games", noisy_games());
    report(7, "walsh system", walsh());
    report(8, "simulation cross-check", simulation(&nowak));
    report(9, "sunspot extension", sunspot(&nowak));

    if !all {
        std::process::exit(1);
    }
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn static_reduction() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_eps = 0.0f64;
    let mut mismatches = 0;
    for _ in 0..100 {
        let actions = [rng.gen_range(2..=3), rng.gen_range(2..=3)];
        let spec = match random_nowak(&mut rng, 4, 1, 1, &actions, 0.0) {
            Ok(s) => s,
            Err(e) => return outcome(false, format!("generator failed: {e}")),
        };
        let r = match solve(&spec, &SolverOptions::default()) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("solve failed: {e}")),
        };
        worst_eps = worst_eps.max(r.epsilon);
        let c = AggregateVector::for_spec(&spec);
        let v2 = r.atom_values(&spec);
        for (s, pieces) in r.cells.iter().enumerate() {
            let g = build_stage_game(&spec, s, &c, &v2).unwrap();
            let nash = nash_enumerate(&g).unwrap();
            for p in pieces {
                if !nash.iter().any(|n| sup_dist(&n.payoffs, &p.value) <= 1e-10) {
                    mismatches += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst_eps <= 1e-10 && mismatches == 0 && elapsed < Duration::from_secs(1),
        format!("max eps {worst_eps:.2e}, {mismatches} values off the Nash payoffs, {elapsed:.2?}"),
    )
}

struct NowakRun {
    seed: u64,
    spec: StochasticGameSpec,
    result: Option<EquilibriumResult>,
    elapsed: Duration,
}

fn nowak_instances() -> Vec<NowakRun> {
    (0..50u64)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let spec = random_nowak(&mut rng, 32, 2, 1, &[2, 2], 0.9).unwrap();
            let start = Instant::now();
            let opts = SolverOptions {
                seed,
                ..SolverOptions::default()
            };
            let result = solve(&spec, &opts).ok();
            NowakRun {
                seed,
                spec,
                result,
                elapsed: start.elapsed(),
            }
        })
        .collect()
}

fn nowak_ok(run: &NowakRun) -> bool {
    run.result
        .as_ref()
        .is_some_and(|r| r.epsilon <= 1e-6 && r.diagnostics.iterations <= 500 && r.diagnostics.restarts <= 3)
        && run.elapsed < Duration::from_secs(10)
}

fn nowak_outcome(runs: &[NowakRun]) -> Outcome {
    let ok = runs.iter().filter(|r| nowak_ok(r)).count();
    let worst = runs.iter().map(|r| r.elapsed).max().unwrap_or_default();
    let max_eps = runs
        .iter()
        .filter_map(|r| r.result.as_ref().map(|r| r.epsilon))
        .fold(0.0, f64::max);
    outcome(
        ok * 100 >= 95 * runs.len(),
        format!(
            "{ok}/{} certified, max eps {max_eps:.2e}, slowest {worst:.2?}",
            runs.len()
        ),
    )
}

fn purification() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut float_fail = 0;
    for _ in 0..1000 {
        if !float_instance(&mut rng) {
            float_fail += 1;
        }
    }
    let (mut agree, mut successes) = (0, 0);
    let total = 200;
    for t in 0..total {
        let (oracle, got) = exact_instance(&mut rng, t % 5 == 0);
        if oracle == got {
            agree += 1;
        }
        successes += oracle as usize;
    }
    outcome(
        float_fail == 0 && agree == total,
        format!(
            "{float_fail}/1000 float failures, oracle agreement {agree}/{total} ({successes} feasible, {} infeasible)",
            total - successes
        ),
    )
}

/// Random divisible instance; true when moments match to 1e-10 and every
/// piece is exactly a candidate.
fn float_instance(rng: &mut ChaCha8Rng) -> bool {
    let n = rng.gen_range(1..=12);
    let nc = rng.gen_range(1..=n);
    let dim = rng.gen_range(1..=3);
    let coarse: Vec<usize> = (0..n).map(|k| if k < nc { k } else { rng.gen_range(0..nc) }).collect();
    let cells = (0..n).map(|_| Cell::divisible(rng.gen_range(0.01..1.0))).collect();
    let space = GridSpace::new(cells, coarse).unwrap();
    let sets: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|_| {
            (0..rng.gen_range(1..=5))
                .map(|_| (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect())
                .collect()
        })
        .collect();
    let vprime: Vec<Vec<f64>> = sets
        .iter()
        .map(|set: &Vec<Vec<f64>>| {
            let w: Vec<f64> = set.iter().map(|_| rng.gen_range(0.0..1.0)).collect();
            let t: f64 = w.iter().sum::<f64>().max(1e-300);
            (0..dim)
                .map(|d| set.iter().zip(&w).map(|(c, x)| c[d] * x / t).sum())
                .collect()
        })
        .collect();
    let moments: Vec<StepFunction> = (0..rng.gen_range(1..=3))
        .map(|_| StepFunction::scalar((0..n).map(|_| rng.gen_range(0.0..4.0)).collect()).unwrap())
        .collect();
    let vprime = StepFunction::new(vprime).unwrap();
    let candidates = CandidateField::new(sets.clone()).unwrap();
    let Ok(sel) = purify_selection(&vprime, &candidates, &moments, &space) else {
        return false;
    };
    let members = (0..n).all(|k| sel.pieces(k).iter().all(|p| sets[k].contains(&p.value)));
    let want = SplitSelection::from_step(&vprime);
    let moments_match = std::iter::once(None).chain(moments.iter().map(Some)).all(|rho| {
        let a = sel.coarse_integrals(&space, rho);
        let b = want.coarse_integrals(&space, rho);
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .all(|(x, y)| (x - y).abs() <= 1e-10)
    });
    members && moments_match
}

/// Random instance on at most eight cells with dyadic data, so the float
/// path sees exactly the rationals the oracle sees. Returns (oracle says
/// feasible, purification succeeded).
fn exact_instance(rng: &mut ChaCha8Rng, single_atom: bool) -> (bool, bool) {
    let (n, nc) = if single_atom {
        (rng.gen_range(2..=4), 2)
    } else {
        let n = rng.gen_range(2..=8);
        (n, rng.gen_range(1..=2.min(n)))
    };
    let coarse: Vec<usize> = (0..n).map(|k| if k < nc { k } else { rng.gen_range(0..nc) }).collect();
    // masses in sixteenths, candidates integers, moments integers
    let mass_num: Vec<i64> = (0..n).map(|_| rng.gen_range(1..=4)).collect();
    let atomic: Vec<bool> = (0..n)
        .map(|k| if single_atom { k == 0 } else { rng.gen_bool(0.6) })
        .collect();
    // a lone atom in its own coarse cell: the G-atom case
    let coarse: Vec<usize> = if single_atom {
        (0..n).map(|k| if k == 0 { 0 } else { 1 }).collect()
    } else {
        coarse
    };
    let sets: Vec<Vec<i64>> = (0..n)
        .map(|_| {
            let mut s: Vec<i64> = (-2..=2).collect();
            s.shuffle(rng);
            s.truncate(rng.gen_range(1..=3));
            s.sort();
            s
        })
        .collect();
    let n_mom = rng.gen_range(0..=2);
    let rho: Vec<Vec<i64>> = (0..n_mom)
        .map(|_| (0..n).map(|_| rng.gen_range(0..=2)).collect())
        .collect();

    // vprime in quarters: a candidate, a twin-averaged assignment, or a
    // random hull point
    let mut vq: Vec<Q> = sets
        .iter()
        .map(|s| {
            let lo = s[0] * 4;
            let hi = s[s.len() - 1] * 4;
            q(rng.gen_range(lo..=hi), 4)
        })
        .collect();
    if !single_atom && rng.gen_bool(0.5) {
        let g: Vec<i64> = sets.iter().map(|s| *s.choose(rng).unwrap()).collect();
        vq = g.iter().map(|&v| q(v, 1)).collect();
        // average pairs of atomic cells that share coarse cell, mass and moments
        for a in 0..n {
            for b in a + 1..n {
                let twins = atomic[a]
                    && atomic[b]
                    && coarse[a] == coarse[b]
                    && mass_num[a] == mass_num[b]
                    && rho.iter().all(|r| r[a] == r[b]);
                if twins && rng.gen_bool(0.7) {
                    let m = (&vq[a] + &vq[b]) / q(2, 1);
                    vq[a] = m.clone();
                    vq[b] = m;
                }
            }
        }
    }
    if single_atom {
        vq[0] = q(1, 2);
    }

    let oracle = (0..nc).all(|e| {
        let cells: Vec<usize> = (0..n).filter(|&k| coarse[k] == e && atomic[k]).collect();
        exists_assignment(&cells, &sets, &mass_num, &rho, &vq)
    }) && (0..n).all(|k| atomic[k] || in_hull(&sets[k], &vq[k]));

    let cells = (0..n)
        .map(|k| {
            let m = mass_num[k] as f64 / 16.0;
            if atomic[k] {
                Cell::atomic(m)
            } else {
                Cell::divisible(m)
            }
        })
        .collect();
    let space = GridSpace::new(cells, coarse).unwrap();
    let vprime = StepFunction::scalar(vq.iter().map(to_f64).collect()).unwrap();
    let candidates = CandidateField::new(
        sets.iter()
            .map(|s| s.iter().map(|&v| vec![v as f64]).collect())
            .collect(),
    )
    .unwrap();
    let moments: Vec<StepFunction> = rho
        .iter()
        .map(|r| StepFunction::scalar(r.iter().map(|&v| v as f64).collect()).unwrap())
        .collect();
    let got = match purify_selection(&vprime, &candidates, &moments, &space) {
        Ok(_) => true,
        Err(Error::NoSelection { .. }) => false,
        Err(e) => panic!("unexpected purification error: {e}"),
    };
    (oracle, got)
}

fn in_hull(set: &[i64], v: &Q) -> bool {
    q(set[0], 1) <= *v && *v <= q(set[set.len() - 1], 1)
}

/// Exhaustive exact search for a candidate assignment of `cells` whose mass
/// and moment aggregates equal those of `v`.
fn exists_assignment(cells: &[usize], sets: &[Vec<i64>], mass: &[i64], rho: &[Vec<i64>], v: &[Q]) -> bool {
    let weights = |k: usize| -> Vec<Q> {
        std::iter::once(q(mass[k], 16))
            .chain(rho.iter().map(|r| q(mass[k] * r[k], 16)))
            .collect()
    };
    let mut target = vec![Q::zero(); rho.len() + 1];
    for &k in cells {
        for (t, w) in target.iter_mut().zip(weights(k)) {
            *t += w * &v[k];
        }
    }
    let mut choice = vec![0usize; cells.len()];
    loop {
        let mut agg = vec![Q::zero(); rho.len() + 1];
        for (c, &k) in choice.iter().zip(cells) {
            for (a, w) in agg.iter_mut().zip(weights(k)) {
                *a += w * q(sets[k][*c], 1);
            }
        }
        if agg == target {
            return true;
        }
        // odometer over candidate indices
        let mut pos = 0;
        loop {
            if pos == cells.len() {
                return false;
            }
            choice[pos] += 1;
            if choice[pos] < sets[cells[pos]].len() {
                break;
            }
            choice[pos] = 0;
            pos += 1;
        }
    }
}

fn contraction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_excess, mut iter_fail) = (f64::NEG_INFINITY, 0);
    let instances = 20;
    for _ in 0..instances {
        let spec = random_nowak(&mut rng, 8, 2, 3, &[2, 2], 0.9).unwrap();
        let beta = spec.max_discount();
        let k = spec.atoms().len();
        let c = AggregateVector::for_spec(&spec);
        let f2: Vec<Vec<Vec<f64>>> = (0..k)
            .map(|_| {
                (0..spec.players)
                    .map(|_| {
                        let p = rng.gen_range(0.0..=1.0);
                        vec![p, 1.0 - p]
                    })
                    .collect()
            })
            .collect();
        let random_v = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..k)
                .map(|_| (0..spec.players).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect()
        };
        let dist = |a: &[Vec<f64>], b: &[Vec<f64>]| sup_dist(&a.concat(), &b.concat());
        for _ in 0..100 {
            let (v, w) = (random_v(&mut rng), random_v(&mut rng));
            let pv = atom_value_operator(&spec, &f2, &c, &v).unwrap();
            let pw = atom_value_operator(&spec, &f2, &c, &w).unwrap();
            worst_excess = worst_excess.max(dist(&pv, &pw) / dist(&v, &w) - beta);
        }
        let zero = vec![vec![0.0; spec.players]; k];
        let (_, iters) = atom_fixed_point(&spec, &f2, &c, &zero, 1e-10).unwrap();
        let bound = if beta > 0.0 {
            (1e-10f64.ln() / beta.ln()).ceil() as usize + 1
        } else {
            1
        };
        if iters > bound {
            iter_fail += 1;
        }
    }
    outcome(
        worst_excess <= 1e-12 && iter_fail == 0,
        format!("max ratio - beta {worst_excess:.2e}, {iter_fail}/{instances} over the iteration bound"),
    )
}

fn kernel_structure() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for n in [8, 16, 32, 64] {
        let start = Instant::now();
        let p = LevyParams {
            alpha: 1.0,
            m: 1,
            n,
            block: n / 2,
        };
        let spec = make_levy_kernel(&p, None, vec![0.5; 5]).unwrap();
        let m = levy_defect_matrix(&spec);
        let ranks = block_rank_profile(&m, 1e-8).unwrap();
        let blocks = m.blocks();
        let full = ranks.iter().zip(&blocks).all(|(r, b)| b.is_empty() || *r == p.block);
        let fast = start.elapsed() < Duration::from_secs(1);
        pass &= full && fast;
        notes.push(format!("N={n} {ranks:?}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut coarse_bad = 0;
    for _ in 0..20 {
        let p = random_noisy_params(&mut rng, 3, 4, 4);
        let config = random_payoffs(&mut rng, 12, &[2, 2], 0.9);
        let g = make_noisy_game(&p, &config).unwrap();
        let nowak = random_nowak(&mut rng, 8, 2, 1, &[2, 2], 0.9).unwrap();
        let ext = sunspot_extend(&nowak, 2).unwrap();
        for m in [g.raw_kernel, KernelMatrix::from_spec(&ext)] {
            if block_rank_profile(&m, 1e-8).unwrap().iter().any(|&r| r > 1) {
                coarse_bad += 1;
            }
        }
    }
    let mut nowak_bad = 0;
    for j in 1..=4 {
        for _ in 0..5 {
            let spec = random_nowak(&mut rng, 16, j, 1, &[2, 2], 0.9).unwrap();
            let m = KernelMatrix::from_spec(&spec);
            if block_rank_profile(&m, 1e-8).unwrap().iter().any(|&r| r > j) {
                nowak_bad += 1;
            }
        }
    }
    pass &= coarse_bad == 0 && nowak_bad == 0;
    outcome(
        pass,
        format!(
            "levy {}; coarser kernels over rank 1: {coarse_bad}/40; nowak over rank J: {nowak_bad}/20",
            notes.join(" ")
        ),
    )
}

fn noisy_games() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut passed = 0;
    for _ in 0..100 {
        let h = rng.gen_range(2..=4);
        let r = rng.gen_range(2..=5);
        let p = random_noisy_params(&mut rng, h, r, 4);
        let config = random_payoffs(&mut rng, h * r, &[2, 2], 0.9);
        let g = make_noisy_game(&p, &config).unwrap();
        let space = &g.spec.space;
        let mut ok = check_coarser(&g.raw_kernel) && validate_game(&g.spec).is_pass();
        for _ in 0..20 {
            let mut entries = Vec::new();
            for k in 0..space.n_cells() {
                if rng.gen_bool(0.5) {
                    entries.push((k, space.mass(k) * rng.gen_range(0.05..=1.0)));
                }
            }
            if entries.is_empty() {
                entries.push((0, space.mass(0)));
            }
            let d = RetainedSet::new(space, &entries).unwrap();
            ok &= match half_split(&d, space) {
                Ok(split) => split
                    .coarse_integrals(space, None)
                    .iter()
                    .zip(d.by_coarse(space))
                    .all(|(a, b)| (a[0] - 0.5 * b).abs() <= 1e-12),
                Err(_) => false,
            };
        }
        passed += ok as usize;
    }
    outcome(passed == 100, format!("{passed}/100 draws"))
}

fn walsh() -> Outcome {
    let start = Instant::now();
    let n = 16;
    let space = GridSpace::new(vec![Cell::atomic(1.0 / n as f64); n], vec![0; n]).unwrap();
    let exact = shifted_walsh_moments(4);
    let moments: Vec<StepFunction> = exact
        .iter()
        .map(|row| StepFunction::scalar(row.iter().map(to_f64).collect()).unwrap())
        .collect();
    let vprime = StepFunction::scalar(vec![0.0; n]).unwrap();
    let candidates = CandidateField::uniform(n, vec![vec![-1.0], vec![1.0]]).unwrap();
    let purify_none = matches!(
        purify_selection(&vprime, &candidates, &moments, &space),
        Err(Error::NoSelection { .. })
    );
    let search = sign_pattern_search(&exact, &vec![Q::zero(); n]).unwrap();
    let elapsed = start.elapsed();
    outcome(
        purify_none && search.matching.is_none() && search.patterns == 1 << 16 && elapsed < Duration::from_secs(5),
        format!(
            "purify NoSelection: {purify_none}, {} patterns searched, match: {}, {elapsed:.2?}",
            search.patterns,
            search.matching.is_some()
        ),
    )
}

fn simulation(runs: &[NowakRun]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut checks, mut outside, mut worst_z) = (0, 0, 0.0f64);
    let (mut sum_z, mut sum_z2) = (0.0, 0.0);
    let mut identical = true;
    for run in runs {
        let Some(result) = &run.result else { continue };
        let states: Vec<usize> = (0..run.spec.n_states()).collect();
        for &s in states.choose_multiple(&mut rng, 3) {
            let opts = SimulationOptions {
                paths: 100_000,
                seed: run.seed,
                ..SimulationOptions::default()
            };
            let rep = stochgame_core::simulate_payoffs(&run.spec, result, (s, 0), &opts).unwrap();
            let reported = &result.cells[s][0].value;
            for i in 0..run.spec.players {
                let signed = (rep.mean[i] - reported[i]) / rep.std_error[i].max(f64::MIN_POSITIVE);
                let z = signed.abs();
                worst_z = worst_z.max(z);
                sum_z += signed;
                sum_z2 += signed * signed;
                checks += 1;
                if z > 3.0 {
                    outside += 1;
                }
            }
            if run.seed == runs[0].seed {
                let again = stochgame_core::simulate_payoffs(&run.spec, result, (s, 0), &opts).unwrap();
                identical &= serde_json::to_vec(&rep).unwrap() == serde_json::to_vec(&again).unwrap();
            }
        }
    }
    outcome(
        outside == 0 && identical && checks > 0,
        format!(
            "{outside}/{checks} outside 3 SE, max |z| {worst_z:.2}, mean z {:.3}, mean z^2 {:.3}, reruns identical: {identical}",
            sum_z / checks as f64,
            sum_z2 / checks as f64
        ),
    )
}

fn sunspot(runs: &[NowakRun]) -> Outcome {
    let (mut tried, mut ok) = (0, 0);
    let mut worst = 0.0f64;
    for run in runs {
        tried += 1;
        let Ok(ext) = sunspot_extend(&run.spec, 2) else {
            continue;
        };
        let report = validate_game(&ext);
        let coarser = check_coarser(&KernelMatrix::from_spec(&ext));
        let opts = SolverOptions {
            seed: run.seed,
            ..SolverOptions::default()
        };
        let eps = solve(&ext, &opts).map(|r| r.epsilon).unwrap_or(f64::INFINITY);
        worst = worst.max(eps);
        if report.is_pass() && report.no_g_atom && coarser && eps <= 1e-6 {
            ok += 1;
        }
    }
    outcome(
        ok == tried,
        format!("{ok}/{tried} extensions certified, max eps {worst:.2e}"),
    )
}
