//! The pullback attractor of the dissipative model: per-fiber cover pairs
//! by monotone pullback, grid sections with pinch statistics, regime
//! classification, and orbit clouds over minimal subsets.
//!
//! The covers α(ω) ≤ β(ω) bound every bounded solution through the fiber
//! over ω. Starting the pullback from ±ρ₀ makes the horizon sequence
//! monotone (the absorbing interval maps into itself), which both drives
//! convergence and gives a built-in integrity check: a non-monotone
//! sequence can only come from a bug or a broken model, never from slow
//! dynamics, so it fails hard while slow convergence is reported softly.

use serde::{Deserialize, Serialize};

use crate::base_flow::BasePoint;
use crate::coefficients::PrimitiveStats;
use crate::error::{Error, Result};
use crate::exec;
use crate::integrator::{solve_on_orbit, SolveOptions, Trajectory};
use crate::model::{ModelOrbit, ScalarModel};
use crate::spectrum::SpectrumEstimate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoverSign {
    /// Pullback from +ρ₀: the nonincreasing upper cover β.
    Upper,
    /// Pullback from −ρ₀: the nondecreasing lower cover α.
    Lower,
}

#[derive(Clone, Debug)]
pub struct PullbackOptions {
    /// Stop once a horizon doubling moves the value by less than this.
    pub tol: f64,
    /// Horizon cap for the doubling schedule 1, 2, 4, …; non-convergence
    /// within the cap is reported through `converged`, not an error.
    pub t_max: f64,
    /// Radius of the absorbing interval; computed from the model (margin
    /// 0.5) when absent.
    pub rho0: Option<f64>,
    pub solver: SolveOptions,
}

impl Default for PullbackOptions {
    fn default() -> Self {
        PullbackOptions {
            tol: 1e-6,
            t_max: 4096.0,
            rho0: None,
            solver: SolveOptions::with_tol(1e-11),
        }
    }
}

/// One cover value from a pullback run.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PullbackCover {
    pub value: f64,
    /// |y(2T) − y(T)| at the stopping horizon.
    pub residual: f64,
    pub horizon: f64,
    pub converged: bool,
}

/// Numerical slack granted to exact monotonicity/order relations: solver
/// error scaled to the values involved.
fn order_slack(tol: f64, magnitude: f64) -> f64 {
    (1e3 * tol).max(1e-9) * (1.0 + magnitude)
}

/// Pullback one cover at ω against an existing orbit restriction covering
/// [−t_max − max_step, max_step]. Reusing the restriction across the
/// doubling schedule (and across both signs) keeps long sections cheap.
pub fn pullback_on_orbit(
    orbit: &ModelOrbit,
    omega: &BasePoint,
    sign: CoverSign,
    rho0: f64,
    opts: &PullbackOptions,
) -> Result<PullbackCover> {
    if !(opts.tol > 0.0) || !(opts.t_max >= 2.0) || !(rho0 > 0.0) {
        return Err(Error::invalid("pullback needs tol > 0, t_max >= 2, rho0 > 0"));
    }
    let mut solver = opts.solver;
    solver.dense = false;
    let start = match sign {
        CoverSign::Upper => rho0,
        CoverSign::Lower => -rho0,
    };

    let mut y_prev = f64::NAN;
    let mut t_prev = 0.0;
    let mut t = 1.0;
    loop {
        let traj = solve_on_orbit(orbit, omega, start, (-t, 0.0), &solver)?;
        if traj.blowup {
            return Err(Error::Invariant(format!(
                "pullback run escaped the absorbing interval at horizon {t}"
            )));
        }
        let y = traj.end_value();
        let slack = order_slack(solver.tol, y.abs().max(rho0));
        if y.abs() > rho0 + slack {
            return Err(Error::Invariant(format!(
                "pullback value {y} outside the absorbing interval ±{rho0}"
            )));
        }
        if !y_prev.is_nan() {
            let drift = match sign {
                CoverSign::Upper => y - y_prev,
                CoverSign::Lower => y_prev - y,
            };
            // Each accepted step of either run can seed up to one local
            // error, so the exact-monotonicity allowance carries a budget
            // per step — at least (horizon / max_step) steps per run — with
            // a tenfold headroom, rather than a flat constant.
            let mono_slack = solver.tol
                * (1e3 + 10.0 * (t_prev + t) / solver.max_step)
                * (1.0 + y.abs().max(rho0));
            if drift > mono_slack {
                return Err(Error::Invariant(format!(
                    "pullback sequence not monotone at horizon {t}: moved by {drift:e} \
                     (allowance {mono_slack:e})"
                )));
            }
            let residual = (y - y_prev).abs();
            if residual < opts.tol {
                return Ok(PullbackCover {
                    value: y,
                    residual,
                    horizon: t,
                    converged: true,
                });
            }
            if t >= opts.t_max {
                return Ok(PullbackCover {
                    value: y,
                    residual,
                    horizon: t,
                    converged: false,
                });
            }
        }
        y_prev = y;
        t_prev = t;
        t = (2.0 * t).min(opts.t_max);
    }
}

/// Pullback one cover at ω, building the orbit restriction internally.
pub fn pullback_cover(
    model: &ScalarModel,
    omega: &BasePoint,
    sign: CoverSign,
    opts: &PullbackOptions,
) -> Result<PullbackCover> {
    let rho0 = match opts.rho0 {
        Some(r) => r,
        None => model.rho0(0.5)?,
    };
    let pad = opts.solver.max_step;
    let orbit = model.on_orbit(omega, -opts.t_max - pad, pad)?;
    pullback_on_orbit(&orbit, omega, sign, rho0, opts)
}

#[derive(Clone, Debug)]
pub struct SectionOptions {
    /// Grid resolution per torus axis.
    pub per_axis: usize,
    pub pullback: PullbackOptions,
    /// Gap below which a fiber counts as pinched (covers in contact).
    pub pinch_tol: f64,
}

impl Default for SectionOptions {
    fn default() -> Self {
        SectionOptions {
            per_axis: 32,
            pullback: PullbackOptions::default(),
            pinch_tol: 1e-6,
        }
    }
}

/// Cover pairs over a uniform grid of fibers, with per-point diagnostics
/// and aggregate pinch statistics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttractorSection {
    pub grid: Vec<BasePoint>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub residual_alpha: Vec<f64>,
    pub residual_beta: Vec<f64>,
    /// Per-sign stopping horizons: continuing the very runs that produced
    /// the covers (rather than re-doubling) is what makes invariance checks
    /// exact up to solver error.
    pub horizon_alpha: Vec<f64>,
    pub horizon_beta: Vec<f64>,
    /// Larger of the two stopping horizons per point.
    pub horizon: Vec<f64>,
    /// Both covers met the pullback tolerance.
    pub converged: Vec<bool>,
    /// Gap statistics over the grid.
    pub pinch_min: f64,
    pub pinch_mean: f64,
    pub pinch_max: f64,
    /// Points whose covers touch within pinch_tol.
    pub continuity_mask: Vec<bool>,
    pub pinch_tol: f64,
    pub rho0: f64,
}

impl AttractorSection {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn gap(&self, i: usize) -> f64 {
        self.beta[i] - self.alpha[i]
    }

    /// Delimited export: one row per grid point, coordinates first.
    pub fn to_csv(&self) -> String {
        let dim = self.grid.first().map_or(0, |w| w.dim());
        let mut out = String::new();
        for axis in 0..dim {
            out.push_str(&format!("theta{},", axis + 1));
        }
        out.push_str("alpha,beta,residual_alpha,residual_beta,horizon\n");
        for (i, w) in self.grid.iter().enumerate() {
            for c in w.coords() {
                out.push_str(&format!("{c},"));
            }
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.alpha[i], self.beta[i], self.residual_alpha[i], self.residual_beta[i], self.horizon[i]
            ));
        }
        out
    }
}

/// Compute the cover pair over a uniform fiber grid. One orbit restriction
/// per grid point serves both covers and every doubling horizon; points
/// run in parallel and collect in grid order.
pub fn section(model: &ScalarModel, opts: &SectionOptions) -> Result<AttractorSection> {
    let grid = model.flow.uniform_grid(opts.per_axis)?;
    let rho0 = match opts.pullback.rho0 {
        Some(r) => r,
        None => model.rho0(0.5)?,
    };
    let mut po = opts.pullback.clone();
    po.rho0 = Some(rho0);
    let pad = po.solver.max_step;

    let rows = exec::try_map_indexed(&grid, |_, w| -> Result<(PullbackCover, PullbackCover)> {
        let orbit = model.on_orbit(w, -po.t_max - pad, pad)?;
        let lower = pullback_on_orbit(&orbit, w, CoverSign::Lower, rho0, &po)?;
        let upper = pullback_on_orbit(&orbit, w, CoverSign::Upper, rho0, &po)?;
        let slack = order_slack(po.solver.tol, rho0);
        if lower.value > upper.value + slack {
            return Err(Error::Invariant(format!(
                "cover order inverted: alpha {} > beta {}",
                lower.value, upper.value
            )));
        }
        Ok((lower, upper))
    })?;

    let n = rows.len();
    let mut alpha = Vec::with_capacity(n);
    let mut beta = Vec::with_capacity(n);
    let mut residual_alpha = Vec::with_capacity(n);
    let mut residual_beta = Vec::with_capacity(n);
    let mut horizon_alpha = Vec::with_capacity(n);
    let mut horizon_beta = Vec::with_capacity(n);
    let mut horizon = Vec::with_capacity(n);
    let mut converged = Vec::with_capacity(n);
    let mut continuity_mask = Vec::with_capacity(n);
    let mut pinch_min = f64::INFINITY;
    let mut pinch_max = f64::NEG_INFINITY;
    let mut pinch_sum = 0.0;
    for (lower, upper) in &rows {
        let gap = upper.value - lower.value;
        alpha.push(lower.value);
        beta.push(upper.value);
        residual_alpha.push(lower.residual);
        residual_beta.push(upper.residual);
        horizon_alpha.push(lower.horizon);
        horizon_beta.push(upper.horizon);
        horizon.push(lower.horizon.max(upper.horizon));
        converged.push(lower.converged && upper.converged);
        continuity_mask.push(gap < opts.pinch_tol);
        pinch_min = pinch_min.min(gap);
        pinch_max = pinch_max.max(gap);
        pinch_sum += gap;
    }

    Ok(AttractorSection {
        grid,
        alpha,
        beta,
        residual_alpha,
        residual_beta,
        horizon_alpha,
        horizon_beta,
        horizon,
        converged,
        pinch_min,
        pinch_mean: pinch_sum / n as f64,
        pinch_max,
        continuity_mask,
        pinch_tol: opts.pinch_tol,
        rho0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegimeLabel {
    /// Negative spectrum: a single exponentially attracting graph.
    UniqueHyperbolic,
    /// Everywhere-separated covers bounding a family of copies of the base.
    Laminated,
    /// Covers in contact on a sizeable set while separated elsewhere.
    Pinched,
}

#[derive(Clone, Debug)]
pub struct RegimeThresholds {
    /// γ_sup below −margin counts as a uniformly negative spectrum.
    pub spectrum_margin: f64,
    /// Gap below this counts as cover contact.
    pub pinch_tol: f64,
    /// Gap above this counts as genuine separation.
    pub gap_threshold: f64,
    /// Allowed relative growth of the coefficient-primitive range across
    /// horizons while still counting as bounded.
    pub primitive_growth_tol: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        RegimeThresholds {
            spectrum_margin: 1e-3,
            pinch_tol: 1e-6,
            gap_threshold: 1e-3,
            primitive_growth_tol: 0.05,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegimeReport {
    pub label: RegimeLabel,
    /// Evidence was ambiguous or contradictory; the label is the nearest
    /// fit, not a determination.
    pub undecided: bool,
    pub gamma_inf: f64,
    pub gamma_sup: f64,
    pub min_gap: f64,
    pub mean_gap: f64,
    pub max_gap: f64,
    /// Primitive range (sup − inf over the sampled window) per horizon.
    pub primitive_ranges: Vec<f64>,
    pub primitive_bounded: bool,
    pub notes: String,
}

/// Combine section, spectrum, and primitive evidence into a regime label.
///
/// Decision order: a uniformly negative spectrum wins outright; otherwise
/// cover contact anywhere marks the pinched regime; otherwise an
/// everywhere-open gap together with a bounded coefficient primitive marks
/// the laminated regime. Anything else keeps the nearest label with the
/// undecided flag set.
pub fn classify(
    section: &AttractorSection,
    spectrum: &SpectrumEstimate,
    primitive: &[PrimitiveStats],
    thresholds: &RegimeThresholds,
) -> RegimeReport {
    let min_gap = section.pinch_min;
    let max_gap = section.pinch_max;
    let primitive_ranges: Vec<f64> = primitive
        .iter()
        .map(|p| (p.sup_forward - p.inf_forward).max(p.sup_backward - p.inf_backward))
        .collect();
    let primitive_bounded = primitive_ranges.len() >= 2 && {
        let first = primitive_ranges[0];
        let last = *primitive_ranges.last().unwrap();
        last <= first * (1.0 + thresholds.primitive_growth_tol)
    };

    let mut notes = String::new();
    let (label, undecided) = if spectrum.gamma_sup < -thresholds.spectrum_margin {
        let clash = min_gap > thresholds.gap_threshold;
        if clash {
            notes.push_str("negative spectrum but covers stay separated; ");
        }
        (RegimeLabel::UniqueHyperbolic, clash)
    } else if min_gap < thresholds.pinch_tol {
        let clash = max_gap <= thresholds.gap_threshold;
        if clash {
            notes.push_str("covers touch everywhere yet the spectrum is not negative; ");
        }
        (RegimeLabel::Pinched, clash)
    } else if min_gap > thresholds.gap_threshold && primitive_bounded {
        (RegimeLabel::Laminated, false)
    } else {
        if min_gap <= thresholds.gap_threshold {
            notes.push_str("minimum gap falls between the contact and separation thresholds; ");
            (RegimeLabel::Pinched, true)
        } else {
            notes.push_str("gap is open everywhere but primitive boundedness is unsupported; ");
            (RegimeLabel::Laminated, true)
        }
    };

    RegimeReport {
        label,
        undecided,
        gamma_inf: spectrum.gamma_inf,
        gamma_sup: spectrum.gamma_sup,
        min_gap,
        mean_gap: section.pinch_mean,
        max_gap,
        primitive_ranges,
        primitive_bounded,
        notes,
    }
}

/// Sample the orbit closure of a pinched fiber: transport the (unique)
/// attractor point over a contact fiber forward and record the cloud
/// (ω·t, x(t)). Over a minimal base this cloud fills the minimal subset
/// the attractor contains.
pub fn minimal_cover_sample(
    model: &ScalarModel,
    section: &AttractorSection,
    index: usize,
    t_orbit: f64,
    sample_step: f64,
    solver: &SolveOptions,
) -> Result<Vec<(BasePoint, f64)>> {
    if index >= section.len() {
        return Err(Error::invalid("grid index out of range"));
    }
    if !section.continuity_mask[index] {
        return Err(Error::invalid(
            "orbit sampling needs a contact fiber (gap within pinch_tol)",
        ));
    }
    if !(t_orbit > 0.0) || !(sample_step > 0.0) {
        return Err(Error::invalid("orbit sampling needs t_orbit > 0 and sample_step > 0"));
    }
    let omega = &section.grid[index];
    let x = 0.5 * (section.alpha[index] + section.beta[index]);
    orbit_cloud(model, omega, x, t_orbit, sample_step, solver)
}

/// Transport (ω, x₀) forward over [0, t_orbit], sampling (ω·t, x(t)) every
/// sample_step. Integrates in chunks so the dense storage stays bounded;
/// the base point of each chunk advances exactly (mod-1 wrap), so no drift
/// accumulates along the orbit.
pub fn orbit_cloud(
    model: &ScalarModel,
    omega: &BasePoint,
    x0: f64,
    t_orbit: f64,
    sample_step: f64,
    solver: &SolveOptions,
) -> Result<Vec<(BasePoint, f64)>> {
    if !(t_orbit > 0.0) || !(sample_step > 0.0) {
        return Err(Error::invalid("orbit sampling needs t_orbit > 0 and sample_step > 0"));
    }
    let mut solver = *solver;
    solver.dense = true;
    let chunk = 2048.0f64;
    let pad = solver.max_step;
    let mut samples = Vec::with_capacity((t_orbit / sample_step) as usize + 2);
    let mut x = x0;
    let mut k = 0u64; // global sample counter: sample times are k·step
    let mut t0 = 0.0;
    while t0 < t_orbit {
        let t1 = (t0 + chunk).min(t_orbit);
        let w0 = model.flow.advance(omega, t0);
        let orbit = model.on_orbit(&w0, -pad, t1 - t0 + pad)?;
        let traj = solve_on_orbit(&orbit, &w0, x, (0.0, t1 - t0), &solver)?;
        loop {
            let tk = k as f64 * sample_step;
            if tk >= t1 && t1 < t_orbit {
                break;
            }
            if tk > t_orbit {
                break;
            }
            samples.push((model.flow.advance(omega, tk), traj.eval(tk - t0)));
            k += 1;
            if tk >= t_orbit {
                break;
            }
        }
        x = traj.end_value();
        t0 = t1;
    }
    Ok(samples)
}

/// Transport a cover value forward by Δ along the fiber flow (helper for
/// invariance checks and the equilibria-family machinery).
pub fn transport(
    model: &ScalarModel,
    omega: &BasePoint,
    x: f64,
    delta: f64,
    solver: &SolveOptions,
) -> Result<Trajectory> {
    crate::integrator::solve(model, omega, x, (0.0, delta), solver)
}
