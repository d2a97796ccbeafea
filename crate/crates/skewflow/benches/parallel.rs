//! Throughput of the per-fiber solve workload that dominates section
//! computation, through the data-parallel map versus a plain sequential
//! loop. With the `parallel` feature off both paths coincide; with it on
//! the gap is the rayon speedup on this box.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use skewflow::base_flow::RotationFlow;
use skewflow::coefficients::{QpFunction, TrigPoly, TrigTerm};
use skewflow::exec;
use skewflow::integrator::{solve, SolveOptions};
use skewflow::model::{DissipationProfile, ScalarModel};

fn bench_model() -> ScalarModel {
    let flow = RotationFlow::new(vec![0.618_033_988_749_894_9, 0.414_213_562_373_095_1]).unwrap();
    let a = QpFunction::Trig(
        TrigPoly::new(
            2,
            -0.5,
            vec![TrigTerm {
                k: vec![1, 0],
                amp_cos: 0.3,
                amp_sin: 0.0,
            }],
        )
        .unwrap(),
    );
    let b = QpFunction::Trig(
        TrigPoly::new(
            2,
            0.0,
            vec![TrigTerm {
                k: vec![0, 1],
                amp_cos: 0.0,
                amp_sin: 0.2,
            }],
        )
        .unwrap(),
    );
    let kappa = QpFunction::Trig(TrigPoly::constant(2, 1.0).unwrap());
    let dissipation = DissipationProfile {
        r1: -2.0,
        r2: 2.0,
        p: 2,
        kappa,
        kappa_min: 1.0,
    };
    ScalarModel::new(flow, a, b, dissipation).unwrap()
}

fn end_value(model: &ScalarModel, omega: &skewflow::base_flow::BasePoint) -> f64 {
    let opts = SolveOptions {
        tol: 1e-9,
        dense: false,
        ..SolveOptions::default()
    };
    solve(model, omega, 0.4, (0.0, 20.0), &opts)
        .map(|t| t.end_value())
        .unwrap_or(f64::NAN)
}

fn grid_solves(c: &mut Criterion) {
    let model = bench_model();
    let mut group = c.benchmark_group("grid_solves");
    group.sample_size(10);
    for per_axis in [4usize, 8] {
        let grid = model.flow.uniform_grid(per_axis).unwrap();
        group.bench_with_input(
            BenchmarkId::new("map_indexed", per_axis),
            &grid,
            |bench, grid| {
                bench.iter(|| {
                    let ends = exec::map_indexed(grid, |_, w| end_value(&model, w));
                    ends.iter().sum::<f64>()
                })
            },
        );
        group.bench_with_input(
            BenchmarkId::new("sequential", per_axis),
            &grid,
            |bench, grid| {
                bench.iter(|| {
                    let ends: Vec<f64> = grid.iter().map(|w| end_value(&model, w)).collect();
                    ends.iter().sum::<f64>()
                })
            },
        );
    }
    group.finish();
}

criterion_group!(benches, grid_solves);
criterion_main!(benches);
