//! Adaptive Dormand–Prince 4(5) integration of the fiber equations.
//!
//! One engine drives everything: scalar solves of the full model, linear
//! solves (which also have an exact closed form through the coefficient
//! views, used as a cross-oracle), and the variational equation as an
//! augmented two-dimensional system. Dense output is cubic Hermite on the
//! accepted steps, whose endpoint slopes the FSAL scheme provides for free.

use crate::base_flow::{BasePoint, RotationFlow};
use crate::coefficients::QpFunction;
use crate::error::{Error, Result};
use crate::model::{ModelOrbit, ScalarModel};

/// Step-control settings. The defaults match the reporting tolerances used
/// across the crate; acceptance-grade cross-checks run tighter.
#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    /// Absolute-relative mixed tolerance: per-step error ≤ tol·(1 + |x|).
    pub tol: f64,
    pub min_step: f64,
    pub max_step: f64,
    /// Halt (with the blowup flag) when |x| crosses this; finite-time
    /// escape is expected backward in time outside the attractor.
    pub ceiling: f64,
    /// Store every accepted step for dense evaluation; disable for
    /// final-value-only runs (pullback chains) to skip the allocation.
    pub dense: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-9,
            min_step: 1e-8,
            max_step: 0.1,
            ceiling: 1e6,
            dense: true,
        }
    }
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        SolveOptions {
            tol,
            ..SolveOptions::default()
        }
    }
}

// Dormand–Prince 4(5) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 6] = [
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order weights (row 7 of A: FSAL).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
/// Error weights b5 − b4.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct Raw<const N: usize> {
    ts: Vec<f64>,
    xs: Vec<[f64; N]>,
    fs: Vec<[f64; N]>,
    blowup: bool,
}

/// Integrate x' = f(t, x) from t0 to t1 (either direction). Stores all
/// accepted steps when `dense`, else only the endpoints.
fn integrate<const N: usize>(
    f: impl Fn(f64, &[f64; N]) -> [f64; N],
    t0: f64,
    t1: f64,
    x0: [f64; N],
    opts: &SolveOptions,
) -> Result<Raw<N>> {
    if !(opts.tol > 0.0) || !(opts.min_step > 0.0) || !(opts.max_step > opts.min_step) {
        return Err(Error::invalid("solver needs tol > 0 and min_step < max_step"));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial state".into()));
    }
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let mut ts = Vec::new();
    let mut xs = Vec::new();
    let mut fs = Vec::new();

    let mut t = t0;
    let mut x = x0;
    let mut k1 = f(t, &x);
    ts.push(t);
    xs.push(x);
    fs.push(k1);

    let mut blowup = false;
    let mut h = (opts.max_step * 0.1).min((t1 - t0).abs());
    if h == 0.0 {
        return Ok(Raw {
            ts,
            xs,
            fs,
            blowup,
        });
    }

    let mut ks = [[0.0; N]; 7];
    while (t1 - t) * dir > 0.0 {
        h = h.min((t1 - t).abs()).min(opts.max_step);
        let hs = h * dir;

        ks[0] = k1;
        for stage in 1..7 {
            let mut xi = x;
            for (j, kj) in ks.iter().enumerate().take(stage) {
                let a = if stage < 6 {
                    A[stage - 1][j]
                } else {
                    B5[j]
                };
                if a != 0.0 {
                    for n in 0..N {
                        xi[n] += hs * a * kj[n];
                    }
                }
            }
            ks[stage] = f(t + C[stage] * hs, &xi);
        }
        // Fifth-order proposal (already assembled as the last stage input).
        let mut x_new = x;
        for (j, kj) in ks.iter().enumerate() {
            if B5[j] != 0.0 {
                for n in 0..N {
                    x_new[n] += hs * B5[j] * kj[n];
                }
            }
        }
        // Error estimate against the embedded fourth-order solution.
        let mut err: f64 = 0.0;
        for n in 0..N {
            let mut e = 0.0;
            for (j, kj) in ks.iter().enumerate() {
                e += E[j] * kj[n];
            }
            let scale = opts.tol * (1.0 + x[n].abs().max(x_new[n].abs()));
            let r = hs * e / scale;
            err += r * r;
        }
        let err = (err / N as f64).sqrt();

        if !err.is_finite() || x_new.iter().any(|v| !v.is_finite()) {
            // Treat diverging trial states as a maximally failed step.
            if h <= opts.min_step * (1.0 + 1e-12) {
                return Err(Error::StepUnderflow {
                    t,
                    x: x[0],
                    min_step: opts.min_step,
                });
            }
            h = (h * 0.2).max(opts.min_step);
            continue;
        }

        if err <= 1.0 {
            t += hs;
            x = x_new;
            k1 = ks[6]; // FSAL: the last stage is f at the new point.
            if opts.dense {
                ts.push(t);
                xs.push(x);
                fs.push(k1);
            } else {
                ts[0] = t;
                xs[0] = x;
                fs[0] = k1;
            }
            if x.iter().any(|v| v.abs() >= opts.ceiling) {
                blowup = true;
                break;
            }
            let grow = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h = (h * grow).clamp(opts.min_step, opts.max_step);
        } else {
            if h <= opts.min_step * (1.0 + 1e-12) {
                return Err(Error::StepUnderflow {
                    t,
                    x: x[0],
                    min_step: opts.min_step,
                });
            }
            h = (h * (0.9 * err.powf(-0.2)).clamp(0.2, 0.9)).max(opts.min_step);
        }
    }

    if !opts.dense {
        // Endpoint-only storage mode keeps exactly one sample.
        return Ok(Raw {
            ts,
            xs,
            fs,
            blowup,
        });
    }
    Ok(Raw {
        ts,
        xs,
        fs,
        blowup,
    })
}

/// Index of the accepted step bracketing t (monotone times, either
/// direction); clamps outside the covered range.
fn hermite_bracket(ts: &[f64], t: f64) -> usize {
    let n = ts.len();
    let forward = ts[n - 1] >= ts[0];
    if forward {
        match ts.partition_point(|&s| s <= t) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    } else {
        match ts.partition_point(|&s| s >= t) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }
}

fn hermite_value(t0: f64, t1: f64, x0: f64, x1: f64, f0: f64, f1: f64, t: f64) -> f64 {
    let hseg = t1 - t0;
    if hseg == 0.0 {
        return x0;
    }
    let s = ((t - t0) / hseg).clamp(0.0, 1.0);
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * x0
        + (s3 - 2.0 * s2 + s) * hseg * f0
        + (-2.0 * s3 + 3.0 * s2) * x1
        + (s3 - s2) * hseg * f1
}

/// A solved fiber trajectory t ↦ x(t, ω, x₀) with dense evaluation.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub omega: BasePoint,
    ts: Vec<f64>,
    xs: Vec<f64>,
    fs: Vec<f64>,
    /// Set when integration halted at the ceiling (expected only backward).
    pub blowup: bool,
    /// Every accepted step met the requested per-step tolerance.
    pub tol_achieved: bool,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.ts
    }

    pub fn values(&self) -> &[f64] {
        &self.xs
    }

    pub fn start_time(&self) -> f64 {
        self.ts[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.ts.last().unwrap()
    }

    pub fn end_value(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    /// Cubic Hermite interpolation on the accepted steps.
    pub fn eval(&self, t: f64) -> f64 {
        if self.ts.len() == 1 {
            return self.xs[0];
        }
        let i = hermite_bracket(&self.ts, t);
        hermite_value(
            self.ts[i],
            self.ts[i + 1],
            self.xs[i],
            self.xs[i + 1],
            self.fs[i],
            self.fs[i + 1],
            t,
        )
    }

    /// Export as delimited text: t, x per line (tab separated).
    pub fn to_tsv(&self) -> String {
        let mut out = String::with_capacity(self.ts.len() * 32);
        out.push_str("t\tx\n");
        for (t, x) in self.ts.iter().zip(&self.xs) {
            out.push_str(&format!("{t}\t{x}\n"));
        }
        out
    }
}

/// Solve the full model from (ω, x₀) over t_span (forward or backward).
pub fn solve(
    model: &ScalarModel,
    omega: &BasePoint,
    x0: f64,
    t_span: (f64, f64),
    opts: &SolveOptions,
) -> Result<Trajectory> {
    let (t0, t1) = t_span;
    let lo = t0.min(t1) - opts.max_step;
    let hi = t0.max(t1) + opts.max_step;
    let orbit = model.on_orbit(omega, lo, hi)?;
    solve_on_orbit(&orbit, omega, x0, t_span, opts)
}

/// Solve against an existing orbit restriction (reusable across many runs
/// on the same base point; the restriction must cover the span).
pub fn solve_on_orbit(
    orbit: &ModelOrbit,
    omega: &BasePoint,
    x0: f64,
    t_span: (f64, f64),
    opts: &SolveOptions,
) -> Result<Trajectory> {
    let raw = integrate(|t, x: &[f64; 1]| [orbit.f(t, x[0])], t_span.0, t_span.1, [x0], opts)?;
    Ok(Trajectory {
        omega: omega.clone(),
        ts: raw.ts,
        xs: raw.xs.iter().map(|v| v[0]).collect(),
        fs: raw.fs.iter().map(|v| v[0]).collect(),
        blowup: raw.blowup,
        tol_achieved: true,
    })
}

/// The linear solution x₀·exp(∫₀ᵗ a(ω·s) ds) through the exact running
/// integral of the coefficient view — the independent oracle for `solve`
/// on models whose band contains the whole run. Overflow saturates to
/// signed infinity rather than erroring.
pub fn solve_linear(
    a: &QpFunction,
    flow: &RotationFlow,
    omega: &BasePoint,
    x0: f64,
    t: f64,
) -> Result<f64> {
    let view = a.view(omega, flow, t.min(0.0), t.max(0.0))?;
    Ok(x0 * view.cumulative(t).exp())
}

/// The model trajectory together with the running integral of a + g_x
/// along it — the logarithm of the variational solution, which stays
/// representable over horizons where z itself would overflow. Both
/// components evaluate densely.
#[derive(Clone, Debug)]
pub struct AugmentedTrajectory {
    ts: Vec<f64>,
    xs: Vec<[f64; 2]>,
    fs: Vec<[f64; 2]>,
    pub blowup: bool,
}

impl AugmentedTrajectory {
    /// Component 0 is x(t); component 1 is ∫₀ᵗ (a + g_x) ds.
    pub fn eval_component(&self, t: f64, comp: usize) -> f64 {
        if self.ts.len() == 1 {
            return self.xs[0][comp];
        }
        let i = hermite_bracket(&self.ts, t);
        hermite_value(
            self.ts[i],
            self.ts[i + 1],
            self.xs[i][comp],
            self.xs[i + 1][comp],
            self.fs[i][comp],
            self.fs[i + 1][comp],
            t,
        )
    }

    pub fn end_time(&self) -> f64 {
        *self.ts.last().unwrap()
    }
}

/// Solve the model from x₀ at t = 0 along an orbit restriction, augmented
/// with w' = (a + g_x)(ω·t, x(t)), w(0) = 0.
pub fn solve_augmented_log(
    orbit: &ModelOrbit,
    x0: f64,
    t: f64,
    opts: &SolveOptions,
) -> Result<AugmentedTrajectory> {
    let raw = integrate(
        |s, v: &[f64; 2]| {
            let (f, fx) = orbit.f_pair(s, v[0]);
            [f, fx]
        },
        0.0,
        t,
        [x0, 0.0],
        opts,
    )?;
    Ok(AugmentedTrajectory {
        ts: raw.ts,
        xs: raw.xs,
        fs: raw.fs,
        blowup: raw.blowup,
    })
}

/// The variational solution z(t) with z(0) = 1 along the orbit through
/// (ω, x₀): z' = (a + g_x)(ω·t, x(t))·z, integrated as an augmented system.
pub fn solve_variational(
    model: &ScalarModel,
    omega: &BasePoint,
    x0: f64,
    t: f64,
    opts: &SolveOptions,
) -> Result<f64> {
    let lo = t.min(0.0) - opts.max_step;
    let hi = t.max(0.0) + opts.max_step;
    let orbit = model.on_orbit(omega, lo, hi)?;
    let raw = integrate(
        |s, v: &[f64; 2]| {
            let (f, fx) = orbit.f_pair(s, v[0]);
            [f, fx * v[1]]
        },
        0.0,
        t,
        [x0, 1.0],
        opts,
    )?;
    Ok(raw.xs.last().unwrap()[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{TrigPoly, TrigTerm};
    use crate::model::DissipationProfile;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const GOLDEN: f64 = 0.618_033_988_749_894_9;
    const SQRT2M1: f64 = 0.414_213_562_373_095_1;

    fn flow2() -> RotationFlow {
        RotationFlow::new(vec![GOLDEN, SQRT2M1]).unwrap()
    }

    fn constant(c: f64) -> QpFunction {
        QpFunction::Trig(TrigPoly::constant(2, c).unwrap())
    }

    fn profile(r1: f64, r2: f64, p: u32, kappa: f64) -> DissipationProfile {
        DissipationProfile {
            r1,
            r2,
            p,
            kappa: constant(kappa),
            kappa_min: kappa,
        }
    }

    /// x' = −x + 1 with the band wide enough that g never acts.
    fn autonomous_inactive_g() -> ScalarModel {
        ScalarModel::new(
            flow2(),
            constant(-1.0),
            constant(1.0),
            profile(-1e3, 1e3, 2, 1.0),
        )
        .unwrap()
    }

    fn hyperbolic_like() -> ScalarModel {
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
        ScalarModel::new(flow2(), a, b, profile(-2.0, 2.0, 2, 1.0)).unwrap()
    }

    #[test]
    fn autonomous_solution_matches_closed_form() {
        let m = autonomous_inactive_g();
        let w = BasePoint::new(vec![0.2, 0.5]).unwrap();
        let opts = SolveOptions::with_tol(1e-11);
        let traj = solve(&m, &w, 3.0, (0.0, 2.0), &opts).unwrap();
        let expect = 1.0 + 2.0 * (-2.0f64).exp();
        assert!(
            (traj.end_value() - expect).abs() < 1e-8,
            "{} vs {expect}",
            traj.end_value()
        );
        // Dense output agrees with the closed form between steps too.
        for k in 0..=40 {
            let t = 0.05 * k as f64;
            let x = 1.0 + 2.0 * (-t).exp();
            assert!((traj.eval(t) - x).abs() < 1e-7, "t={t}");
        }
    }

    #[test]
    fn flat_field_gives_constant_trajectory() {
        let m = ScalarModel::new(
            flow2(),
            constant(0.0),
            constant(0.0),
            profile(-1.0, 1.0, 2, 1.0),
        )
        .unwrap();
        let w = BasePoint::new(vec![0.7, 0.1]).unwrap();
        let traj = solve(&m, &w, 0.5, (0.0, 10.0), &SolveOptions::default()).unwrap();
        for &x in traj.values() {
            assert_eq!(x, 0.5);
        }
    }

    #[test]
    fn cocycle_law_holds() {
        let m = hyperbolic_like();
        let opts = SolveOptions::with_tol(1e-11);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let w = BasePoint::new(vec![rng.gen(), rng.gen()]).unwrap();
            let x0 = rng.gen_range(-2.0..2.0);
            let s = rng.gen_range(0.0..50.0);
            let t = rng.gen_range(0.0..50.0);
            let whole = solve(&m, &w, x0, (0.0, s + t), &opts).unwrap().end_value();
            let first = solve(&m, &w, x0, (0.0, t), &opts).unwrap().end_value();
            let wt = m.flow.advance(&w, t);
            let second = solve(&m, &wt, first, (0.0, s), &opts).unwrap().end_value();
            assert!(
                (whole - second).abs() < 1e-8,
                "cocycle: {whole} vs {second}"
            );
        }
    }

    #[test]
    fn fiber_order_is_preserved() {
        let m = hyperbolic_like();
        let opts = SolveOptions::with_tol(1e-11);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let w = BasePoint::new(vec![rng.gen(), rng.gen()]).unwrap();
            let x1 = rng.gen_range(-3.0..3.0);
            let gap = rng.gen_range(1e-6..1.0);
            let t = rng.gen_range(0.0..20.0);
            let y1 = solve(&m, &w, x1, (0.0, t), &opts).unwrap().end_value();
            let y2 = solve(&m, &w, x1 + gap, (0.0, t), &opts).unwrap().end_value();
            assert!(y2 > y1, "order inverted: {y1} vs {y2} (gap {gap}, t {t})");
        }
    }

    #[test]
    fn linear_solution_matches_closed_form_and_solver() {
        let flow = flow2();
        let w = BasePoint::new(vec![0.4, 0.9]).unwrap();
        // a ≡ −1 closed form.
        let v = solve_linear(&constant(-1.0), &flow, &w, 1.0, 3.0).unwrap();
        assert!((v - (-3.0f64).exp()).abs() < 1e-14);
        assert_eq!(solve_linear(&constant(-1.0), &flow, &w, 0.0, 5.0).unwrap(), 0.0);

        // Cross-oracle against the RK engine on a linear model (band so wide
        // that g stays inactive).
        let a = QpFunction::Trig(
            TrigPoly::new(
                2,
                -0.1,
                vec![TrigTerm {
                    k: vec![1, 0],
                    amp_cos: 0.3,
                    amp_sin: 0.1,
                }],
            )
            .unwrap(),
        );
        let m = ScalarModel::new(
            flow.clone(),
            a.clone(),
            constant(0.0),
            profile(-1e6, 1e6, 2, 1.0),
        )
        .unwrap();
        let opts = SolveOptions::with_tol(1e-11);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..10 {
            let w = BasePoint::new(vec![rng.gen(), rng.gen()]).unwrap();
            let x0 = rng.gen_range(-2.0..2.0);
            let t = rng.gen_range(0.0..100.0);
            let exact = solve_linear(&a, &flow, &w, x0, t).unwrap();
            let rk = solve(&m, &w, x0, (0.0, t), &opts).unwrap().end_value();
            assert!(
                (exact - rk).abs() < 1e-8 * (1.0 + exact.abs()),
                "t={t}: {exact} vs {rk}"
            );
        }
    }

    #[test]
    fn linear_solution_saturates_to_infinity() {
        let flow = flow2();
        let w = BasePoint::origin(2);
        let v = solve_linear(&constant(1.0), &flow, &w, -2.0, 1000.0).unwrap();
        assert!(v.is_infinite() && v < 0.0);
    }

    #[test]
    fn variational_solution_matches_linear_inside_band() {
        let m = hyperbolic_like();
        let w = BasePoint::new(vec![0.3, 0.6]).unwrap();
        let opts = SolveOptions::with_tol(1e-11);
        // Start on the attractor side well inside the band: g_x ≡ 0 along
        // the orbit, so z = exp ∫ a.
        let z = solve_variational(&m, &w, 0.1, 8.0, &opts).unwrap();
        let expect = solve_linear(&m.a, &m.flow, &w, 1.0, 8.0).unwrap();
        assert!((z - expect).abs() < 1e-8, "{z} vs {expect}");
    }

    #[test]
    fn variational_matches_finite_differences() {
        let m = hyperbolic_like();
        let w = BasePoint::new(vec![0.8, 0.25]).unwrap();
        let opts = SolveOptions::with_tol(1e-12);
        for &x0 in &[0.5, 2.5, -2.6] {
            let t = 6.0;
            let z = solve_variational(&m, &w, x0, t, &opts).unwrap();
            let h = 1e-6;
            let xp = solve(&m, &w, x0 + h, (0.0, t), &opts).unwrap().end_value();
            let xm = solve(&m, &w, x0 - h, (0.0, t), &opts).unwrap().end_value();
            let fd = (xp - xm) / (2.0 * h);
            assert!(
                (z - fd).abs() < 1e-4 * (1.0 + fd.abs()),
                "x0={x0}: {z} vs {fd}"
            );
        }
    }

    #[test]
    fn autonomous_variational_is_exponential() {
        let m = autonomous_inactive_g();
        let w = BasePoint::origin(2);
        let z = solve_variational(&m, &w, 3.0, 4.0, &SolveOptions::with_tol(1e-11)).unwrap();
        assert!((z - (-4.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn band_confined_difference_follows_linear_law() {
        let m = hyperbolic_like();
        let w = BasePoint::new(vec![0.15, 0.45]).unwrap();
        let opts = SolveOptions::with_tol(1e-11);
        let t = 10.0;
        // Both solutions stay within the band (checked): their gap obeys
        // |Δ(t)| = |Δ(0)|·exp ∫ a exactly.
        let t1 = solve(&m, &w, 0.2, (0.0, t), &opts).unwrap();
        let t2 = solve(&m, &w, 0.4, (0.0, t), &opts).unwrap();
        for traj in [&t1, &t2] {
            for &x in traj.values() {
                assert!((-2.0..=2.0).contains(&x), "left the band: {x}");
            }
        }
        let ratio = solve_linear(&m.a, &m.flow, &w, 1.0, t).unwrap();
        let gap = (t2.end_value() - t1.end_value()).abs();
        assert!(
            (gap - 0.2 * ratio).abs() < 1e-8,
            "gap {gap} vs law {}",
            0.2 * ratio
        );
    }

    #[test]
    fn comparison_law_bounds_pair_difference() {
        // α starts inside the band, β above it; g only pushes β down, so
        // the difference is dominated by its linear transport.
        let m = hyperbolic_like();
        let w = BasePoint::new(vec![0.55, 0.85]).unwrap();
        let opts = SolveOptions::with_tol(1e-11);
        let t = 5.0;
        let alpha = solve(&m, &w, 0.8, (0.0, t), &opts).unwrap();
        let beta = solve(&m, &w, 2.5, (0.0, t), &opts).unwrap();
        let a_view = m.a.view(&w, &m.flow, 0.0, t).unwrap();
        for k in 0..=50 {
            let s = t * k as f64 / 50.0;
            let gap = beta.eval(s) - alpha.eval(s);
            let bound = (2.5 - 0.8) * a_view.cumulative(s).exp();
            assert!(gap > 0.0);
            assert!(gap <= bound * (1.0 + 1e-6) + 1e-9, "s={s}: {gap} > {bound}");
        }
    }

    #[test]
    fn forward_orbits_stay_bounded() {
        let m = hyperbolic_like();
        let rho0 = m.rho0(0.5).unwrap();
        let opts = SolveOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..5 {
            let w = BasePoint::new(vec![rng.gen(), rng.gen()]).unwrap();
            let x0 = rng.gen_range(-2.0 * rho0..2.0 * rho0);
            let traj = solve(&m, &w, x0, (0.0, 1000.0), &opts).unwrap();
            assert!(!traj.blowup);
            let sup = traj.values().iter().fold(0.0f64, |m, &x| m.max(x.abs()));
            assert!(sup <= 2.0 * rho0 + 1.0, "sup {sup} vs {}", 2.0 * rho0 + 1.0);
        }
    }

    #[test]
    fn backward_escape_sets_blowup_flag() {
        // Backward from above the band the dissipation term acts like
        // anti-damping; solutions escape in finite time and the run halts
        // with the flag instead of erroring.
        let m = ScalarModel::new(
            flow2(),
            constant(0.0),
            constant(0.0),
            profile(0.0, 0.0, 2, 1.0),
        )
        .unwrap();
        let w = BasePoint::origin(2);
        let traj = solve(&m, &w, 2.0, (0.0, -10.0), &SolveOptions::default()).unwrap();
        assert!(traj.blowup);
        assert!(traj.end_value().abs() >= 1e6);
        assert!(traj.end_time() > -10.0);
    }

    #[test]
    fn impossible_tolerance_reports_step_underflow() {
        let m = hyperbolic_like();
        let w = BasePoint::origin(2);
        let mut opts = SolveOptions::default();
        opts.tol = 1e-300;
        let r = solve(&m, &w, 0.5, (0.0, 1.0), &opts);
        assert!(matches!(r, Err(Error::StepUnderflow { .. })), "{r:?}");
    }

    #[test]
    fn endpoint_only_mode_matches_dense_mode() {
        let m = hyperbolic_like();
        let w = BasePoint::new(vec![0.9, 0.05]).unwrap();
        let opts = SolveOptions::with_tol(1e-10);
        let dense = solve(&m, &w, 1.3, (0.0, 25.0), &opts).unwrap();
        let mut lean_opts = opts;
        lean_opts.dense = false;
        let lean = solve(&m, &w, 1.3, (0.0, 25.0), &lean_opts).unwrap();
        assert_eq!(dense.end_value(), lean.end_value());
        assert_eq!(lean.values().len(), 1);
    }
}
