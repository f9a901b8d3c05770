use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;

use stochgame_bench::{nowak, rng};
use stochgame_core::generators::{levy_defect_matrix, make_levy_kernel, LevyParams};
use stochgame_core::kernel::{block_rank_profile, DEFAULT_RANK_THRESHOLD};
use stochgame_core::measure::purify_selection;
use stochgame_core::{
    nash_enumerate, simulate_payoffs, solve, CandidateField, Cell, GridSpace, SimulationOptions, SolverOptions,
    StageGame, StepFunction,
};

fn bench_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    group.sample_size(20);
    for cells in [16, 32, 64] {
        let spec = nowak(7, cells, 2);
        group.bench_with_input(BenchmarkId::from_parameter(cells), &spec, |b, spec| {
            b.iter(|| solve(black_box(spec), &SolverOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn bench_nash(c: &mut Criterion) {
    let mut r = rng(1);
    let mut group = c.benchmark_group("nash_enumerate");
    for n in [2, 3, 4] {
        let mut m = || -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..n).map(|_| r.gen_range(-1.0..1.0)).collect())
                .collect()
        };
        let g = StageGame::bimatrix(&m(), &m()).unwrap();
        group.bench_with_input(BenchmarkId::new("bimatrix", n), &g, |b, g| {
            b.iter(|| nash_enumerate(black_box(g)).unwrap())
        });
    }
    let profiles = 8;
    let payoffs = (0..profiles)
        .map(|_| (0..3).map(|_| r.gen_range(-1.0..1.0)).collect())
        .collect();
    let g = StageGame::new(vec![vec![0, 1]; 3], payoffs).unwrap();
    group.bench_function("three_player", |b| b.iter(|| nash_enumerate(black_box(&g)).unwrap()));
    group.finish();
}

fn bench_purify(c: &mut Criterion) {
    let mut r = rng(2);
    let n = 256;
    let space = GridSpace::new(
        (0..n).map(|_| Cell::divisible(1.0 / n as f64)).collect(),
        (0..n).map(|k| k / 32).collect(),
    )
    .unwrap();
    let sets: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|_| {
            (0..4)
                .map(|_| vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)])
                .collect()
        })
        .collect();
    let vprime = StepFunction::new(
        sets.iter()
            .map(|s| {
                vec![
                    s.iter().map(|c| c[0]).sum::<f64>() / 4.0,
                    s.iter().map(|c| c[1]).sum::<f64>() / 4.0,
                ]
            })
            .collect(),
    )
    .unwrap();
    let candidates = CandidateField::new(sets).unwrap();
    let moments = vec![StepFunction::scalar((0..n).map(|_| r.gen_range(0.0..2.0)).collect()).unwrap()];
    c.bench_function("purify_256_cells", |b| {
        b.iter(|| purify_selection(black_box(&vprime), &candidates, &moments, &space).unwrap())
    });

    let atoms = 12;
    let space = GridSpace::new(vec![Cell::atomic(1.0 / atoms as f64); atoms], vec![0; atoms]).unwrap();
    let vprime = StepFunction::scalar(vec![0.0; atoms]).unwrap();
    let candidates = CandidateField::uniform(atoms, vec![vec![-1.0], vec![1.0]]).unwrap();
    c.bench_function("atomic_search_12_cells", |b| {
        b.iter(|| purify_selection(black_box(&vprime), &candidates, &[], &space).unwrap())
    });
}

fn bench_rank(c: &mut Criterion) {
    let mut group = c.benchmark_group("levy_block_rank");
    for n in [16, 64] {
        let spec = make_levy_kernel(
            &LevyParams {
                alpha: 1.0,
                m: 1,
                n,
                block: n / 2,
            },
            None,
            vec![0.5; 5],
        )
        .unwrap();
        let m = levy_defect_matrix(&spec);
        group.bench_with_input(BenchmarkId::from_parameter(n), &m, |b, m| {
            b.iter(|| block_rank_profile(black_box(m), DEFAULT_RANK_THRESHOLD).unwrap())
        });
    }
    group.finish();
}

fn bench_simulate(c: &mut Criterion) {
    let spec = nowak(7, 32, 2);
    let result = solve(&spec, &SolverOptions::default()).unwrap();
    let opts = SimulationOptions {
        paths: 10_000,
        ..SimulationOptions::default()
    };
    let mut group = c.benchmark_group("simulate");
    group.sample_size(20);
    group.bench_function("10k_paths", |b| {
        b.iter(|| simulate_payoffs(&spec, black_box(&result), (0, 0), &opts).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_solve,
    bench_nash,
    bench_purify,
    bench_rank,
    bench_simulate
);
criterion_main!(benches);
