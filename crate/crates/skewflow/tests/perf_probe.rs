use std::time::Instant;

use skewflow::base_flow::{BasePoint, RotationFlow};
use skewflow::coefficients::{build_rm_coefficient, QpFunction, RmOptions, TrigPoly};
use skewflow::integrator::{solve, SolveOptions};
use skewflow::model::{DissipationProfile, ScalarModel};

const GOLDEN: f64 = 0.618_033_988_749_894_9;
const SQRT2M1: f64 = 0.414_213_562_373_095_1;

#[test]
#[ignore]
fn probe_pinched_costs() {
    let flow = RotationFlow::new(vec![GOLDEN, SQRT2M1]).unwrap();
    let anchor = BasePoint::origin(2);
    let options = RmOptions {
        n_terms: 6,
        segment_times: Some(vec![16.0, 64.0, 256.0, 1024.0, 4096.0, 16384.0]),
        weights: Some(vec![5.0; 6]),
        delta_caps: Some(vec![
            f64::INFINITY,
            f64::INFINITY,
            f64::INFINITY,
            f64::INFINITY,
            3e-6,
            6e-7,
        ]),
        ..RmOptions::default()
    };
    let t0 = Instant::now();
    let (series, report) = build_rm_coefficient(&flow, &anchor, &options).unwrap();
    println!("build: {:?}", t0.elapsed());
    for term in &report.terms {
        println!(
            "  eps {:>8.5}  T {:>7}  delta {:.3e}  mass {:.3e}  h_anchor {}",
            term.epsilon, term.t_n, term.delta, term.mass_bound, term.h_at_anchor
        );
    }

    let a = QpFunction::BumpSeries(series.clone());
    println!("sup_bound(a) = {}", a.sup_bound());

    // A typical long view.
    let w = BasePoint::new(vec![0.37, 0.81]).unwrap();
    let t0 = Instant::now();
    let view = a.view(&w, &flow, -2048.0, 2048.0).unwrap();
    println!("view [-2048, 2048]: {:?}", t0.elapsed());

    let t0 = Instant::now();
    let mut acc = 0.0;
    for k in 0..100_000 {
        acc += view.eval(-2048.0 + k as f64 * 0.04);
    }
    println!("100k evals: {:?} (acc {acc})", t0.elapsed());

    let t0 = Instant::now();
    let mut acc = 0.0;
    for k in 0..10_000 {
        acc += view.cumulative(-2048.0 + k as f64 * 0.4);
    }
    println!("10k cumulative: {:?} (acc {acc})", t0.elapsed());

    // h-weighted statistics over a long window: distribution of the
    // primitive height field along an orbit.
    let t0 = Instant::now();
    let probe = a.view(&w, &flow, 0.0, 100_000.0).unwrap();
    println!("view [0, 1e5]: {:?}", t0.elapsed());
    let t0 = Instant::now();
    let mut hs = Vec::with_capacity(100_000);
    for k in 0..100_000 {
        hs.push(probe.cumulative(k as f64));
    }
    println!("1e5 primitive samples: {:?}", t0.elapsed());
    let h0: f64 = 0.0;
    let min = hs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = hs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!("primitive range over [0,1e5] from {h0}: [{min}, {max}]");
    // Histogram of h-tilde = -(P(t) - P(0)) + h(0) is not directly needed;
    // report quantiles of -P instead.
    let mut sorted = hs.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for q in [0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99] {
        let idx = ((sorted.len() - 1) as f64 * q) as usize;
        println!("  P quantile {q}: {}", sorted[idx]);
    }

    // Full model solve cost at horizon 2048.
    let kappa = QpFunction::Trig(TrigPoly::constant(2, 1.0).unwrap());
    let b = QpFunction::Trig(TrigPoly::constant(2, 0.0).unwrap());
    let model = ScalarModel::new(
        flow.clone(),
        a.clone(),
        b,
        DissipationProfile {
            r1: -1.0,
            r2: 1.0,
            p: 2,
            kappa,
            kappa_min: 1.0,
        },
    )
    .unwrap();
    let rho0 = model.rho0(0.5).unwrap();
    println!("rho0 = {rho0}");
    let back = flow.advance(&w, -2048.0);
    let t0 = Instant::now();
    let mut opts = SolveOptions::with_tol(1e-9);
    opts.dense = false;
    let traj = solve(&model, &back, rho0, (0.0, 2048.0), &opts).unwrap();
    println!(
        "solve horizon 2048: {:?} -> {}",
        t0.elapsed(),
        traj.end_value()
    );
}
