//! Chaos diagnostics: Li-Yorke pair classification, occupation densities of
//! the gap ratio, the η_c family of equilibria with transport residuals,
//! support sampling, and sensitivity probes.
//!
//! Everything here reports finite-horizon evidence for infinite-horizon
//! notions. The design rule is that a verdict is only issued when two
//! independent routes agree (integrated trajectories versus the exact
//! in-band gap law) or when only one route applies; anything ambiguous
//! stays UNDECIDED rather than rounding to the nearest story.

use serde::{Deserialize, Serialize};

use crate::attractor::{orbit_cloud, AttractorSection};
use crate::base_flow::{BasePoint, RotationFlow};
use crate::coefficients::QpFunction;
use crate::error::{Error, Result};
use crate::exec;
use crate::integrator::{solve_on_orbit, SolveOptions, Trajectory};
use crate::model::ScalarModel;

// ---------------------------------------------------------------------------
// Pair classification
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairClass {
    /// Gap stays bounded away from zero.
    Distal,
    /// Gap tends to zero.
    Asymptotic,
    /// Gap both collapses below the asymptotic threshold and recovers above
    /// the distal threshold within the tail window.
    LiYorke,
    Undecided,
}

#[derive(Clone, Copy, Debug)]
pub struct PairThresholds {
    /// Tail-minimum threshold as a fraction of the initial gap.
    pub asymptotic_fraction: f64,
    /// Tail-maximum threshold as a fraction of the initial gap; must exceed
    /// the asymptotic fraction at least tenfold so the two regimes cannot
    /// blur into each other.
    pub distal_fraction: f64,
    /// The tail window is [T·tail_fraction, T].
    pub tail_fraction: f64,
}

impl Default for PairThresholds {
    fn default() -> Self {
        PairThresholds {
            asymptotic_fraction: 1e-4,
            distal_fraction: 1e-1,
            tail_fraction: 0.5,
        }
    }
}

impl PairThresholds {
    fn validate(&self) -> Result<()> {
        if !(self.asymptotic_fraction > 0.0)
            || !(self.distal_fraction >= 10.0 * self.asymptotic_fraction)
        {
            return Err(Error::invalid(
                "pair thresholds need 0 < asymptotic_fraction and distal_fraction >= 10x",
            ));
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction < 1.0) {
            return Err(Error::invalid("tail_fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairVerdict {
    pub omega: BasePoint,
    pub x1: f64,
    pub x2: f64,
    /// Tail gap extremes from the primary route (the exact law when the
    /// pair is band-confined, otherwise the integrated trajectories).
    pub liminf_gap: f64,
    pub limsup_gap: f64,
    pub classification: PairClass,
    /// Both trajectories stayed inside [r₁, r₂], so the exact law applied.
    pub band_confined: bool,
    /// Tail gap extremes from the integrated trajectories (always present).
    pub traj_liminf_gap: f64,
    pub traj_limsup_gap: f64,
    /// Worst pointwise distance between the integrated gap and the law,
    /// and whether it stayed within the error-propagation envelope.
    pub mismatch_max: f64,
    pub cross_check_ok: bool,
    pub horizon: f64,
}

fn class_from(tail_min: f64, tail_max: f64, asym: f64, distal: f64) -> PairClass {
    if tail_min < asym && tail_max > distal {
        PairClass::LiYorke
    } else if tail_max < asym {
        PairClass::Asymptotic
    } else if tail_min > distal {
        PairClass::Distal
    } else {
        PairClass::Undecided
    }
}

/// Classify the asymptotic relation of the pair (x₁, x₂) over fiber ω at
/// horizon T.
///
/// Two routes run: both trajectories are integrated and their gap is
/// sampled, and — whenever both stay inside the band, where the dynamics
/// is linear in x — the exact law gap(t) = gap(0)·exp ∫₀ᵗ a is evaluated
/// through the coefficient's running integral. A verdict is issued when
/// the applicable routes agree; disagreement or straddled thresholds give
/// UNDECIDED.
pub fn classify_pair(
    model: &ScalarModel,
    omega: &BasePoint,
    x1: f64,
    x2: f64,
    t: f64,
    thresholds: &PairThresholds,
    solver: &SolveOptions,
) -> Result<PairVerdict> {
    thresholds.validate()?;
    if x1 == x2 {
        return Err(Error::invalid("pair classification needs distinct states"));
    }
    if !(t > 0.0) {
        return Err(Error::invalid("pair classification needs t > 0"));
    }
    let rho0 = model.rho0(0.5)?;
    if x1.abs() > rho0 || x2.abs() > rho0 {
        return Err(Error::invalid(
            "pair start states must lie in the absorbing interval",
        ));
    }
    let mut solver = *solver;
    solver.dense = true;

    let pad = solver.max_step;
    let orbit = model.on_orbit(omega, -pad, t + pad)?;
    let t1 = solve_on_orbit(&orbit, omega, x1, (0.0, t), &solver)?;
    let t2 = solve_on_orbit(&orbit, omega, x2, (0.0, t), &solver)?;
    if t1.blowup || t2.blowup {
        return Err(Error::Invariant(
            "pair trajectory escaped the ceiling on a forward run".into(),
        ));
    }

    let (r1, r2) = orbit.band();
    let in_band = |traj: &Trajectory| traj.values().iter().all(|&x| x >= r1 && x <= r2);
    let band_confined = in_band(&t1) && in_band(&t2);

    let gap0 = (x2 - x1).abs();
    let asym = thresholds.asymptotic_fraction * gap0;
    let distal = thresholds.distal_fraction * gap0;
    let tail_start = t * thresholds.tail_fraction;

    // Tail sample times: a uniform grid plus both trajectories' accepted
    // steps (gap extremes sit at step points or between nearby samples).
    let mut tail_ts: Vec<f64> = Vec::with_capacity(5000);
    let n = 4096;
    for k in 0..=n {
        tail_ts.push(tail_start + (t - tail_start) * k as f64 / n as f64);
    }
    for traj in [&t1, &t2] {
        for &s in traj.times() {
            if s >= tail_start && s <= t {
                tail_ts.push(s);
            }
        }
    }

    let mut traj_min = f64::INFINITY;
    let mut traj_max: f64 = 0.0;
    for &s in &tail_ts {
        let g = (t2.eval(s) - t1.eval(s)).abs();
        traj_min = traj_min.min(g);
        traj_max = traj_max.max(g);
    }
    let traj_class = class_from(traj_min, traj_max, asym, distal);

    if !band_confined {
        // The law does not apply; the integrated route alone decides.
        return Ok(PairVerdict {
            omega: omega.clone(),
            x1,
            x2,
            liminf_gap: traj_min,
            limsup_gap: traj_max,
            classification: traj_class,
            band_confined,
            traj_liminf_gap: traj_min,
            traj_limsup_gap: traj_max,
            mismatch_max: 0.0,
            cross_check_ok: true,
            horizon: t,
        });
    }

    // Exact-law route: tail extremes of gap(0)·exp P(t) over the same
    // window, sampled on the uniform grid plus the view's breakpoints.
    let view = model.a.view(omega, &model.flow, 0.0, t)?;
    let mut law_min = f64::INFINITY;
    let mut law_max: f64 = 0.0;
    {
        let mut visit = |s: f64| {
            let g = gap0 * view.cumulative(s).exp();
            law_min = law_min.min(g);
            law_max = law_max.max(g);
        };
        for k in 0..=n {
            visit(tail_start + (t - tail_start) * k as f64 / n as f64);
        }
        for s in view.breakpoints() {
            if s >= tail_start && s <= t {
                visit(s);
            }
        }
    }
    let law_class = class_from(law_min, law_max, asym, distal);

    // Pointwise cross-check over the whole run against the forward
    // error-propagation envelope: a local error seeded at time s is carried
    // to time t by exp(P(t) − P(s)) ≤ exp(P(t) − min P), and up to one such
    // error lands per accepted step, so the allowance scales with the step
    // count, the largest state seen so far, and the running drawup of P.
    let n_steps = t1.times().len() + t2.times().len();
    let mut mismatch_max: f64 = 0.0;
    let mut cross_check_ok = true;
    {
        let m = 2048;
        let mut run_min_p: f64 = 0.0;
        let mut run_sup_x: f64 = x1.abs().max(x2.abs());
        for k in 0..=m {
            let s = t * k as f64 / m as f64;
            let p = view.cumulative(s);
            run_min_p = run_min_p.min(p);
            let g_law = gap0 * p.exp();
            let v1 = t1.eval(s);
            let v2 = t2.eval(s);
            run_sup_x = run_sup_x.max(v1.abs()).max(v2.abs());
            let mismatch = ((v2 - v1).abs() - g_law).abs();
            mismatch_max = mismatch_max.max(mismatch);
            let envelope = (100 + n_steps) as f64
                * solver.tol
                * (1.0 + run_sup_x)
                * (p - run_min_p).exp();
            if mismatch > envelope {
                cross_check_ok = false;
            }
        }
    }

    let classification = if !cross_check_ok || law_class != traj_class {
        PairClass::Undecided
    } else {
        law_class
    };

    Ok(PairVerdict {
        omega: omega.clone(),
        x1,
        x2,
        liminf_gap: law_min,
        limsup_gap: law_max,
        classification,
        band_confined,
        traj_liminf_gap: traj_min,
        traj_limsup_gap: traj_max,
        mismatch_max,
        cross_check_ok,
        horizon: t,
    })
}

// ---------------------------------------------------------------------------
// Occupation densities of the gap ratio
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityReport {
    pub omega: BasePoint,
    pub epsilon: f64,
    pub horizon: f64,
    pub step: f64,
    /// Lebesgue-measure estimates of [0,T] ∩ {r ≤ ε} and [0,T] ∩ {r ≥ 1−ε}
    /// (cell-weighted counts on the shared sampling; they sum to ≤ T).
    pub measure_low: f64,
    pub measure_high: f64,
    pub density_low: f64,
    pub density_high: f64,
    /// Running densities at the checkpoint times, measuring over [0, T'].
    pub checkpoints: Vec<f64>,
    pub running_low: Vec<f64>,
    pub running_high: Vec<f64>,
    /// Largest wait between consecutive visits (T when no visit at all) —
    /// the relative-density probe for each set.
    pub largest_gap_low: f64,
    pub largest_gap_high: f64,
    /// Halving the step moved a measure by more than 2%.
    pub step_warning: bool,
    /// The ratio reached magnitudes suggesting the reference fiber sits
    /// where the positive primitive degenerates.
    pub off_support: bool,
}

const OFF_SUPPORT_RATIO: f64 = 1e8;

/// Occupation statistics of r(t) = exp ∫₀ᵗ a over [0, T]: the low set
/// {r ≤ ε}, the high set {r ≥ 1−ε}, their running densities, and the
/// largest-wait probes. The ratio is evaluated through the exact running
/// integral; the step only discretizes the occupation measure.
pub fn density_report(
    a: &QpFunction,
    flow: &RotationFlow,
    omega: &BasePoint,
    epsilon: f64,
    t: f64,
    step: f64,
) -> Result<DensityReport> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid("density_report needs epsilon in (0, 1)"));
    }
    if !(t > 0.0) || !(step > 0.0) || step > t {
        return Err(Error::invalid("density_report needs 0 < step <= t"));
    }
    let view = a.view(omega, flow, 0.0, t)?;

    let measures = |step: f64| -> Result<(f64, f64)> {
        let n = (t / step).floor() as usize;
        let mut low = 0.0;
        let mut high = 0.0;
        for k in 0..=n {
            let s = (k as f64 * step).min(t);
            // Cell weights partition [0, T] exactly so measures stay in range.
            let w = if k == 0 || k == n {
                step / 2.0
            } else {
                step
            };
            let r = view.cumulative(s).exp();
            let in_low = r <= epsilon;
            let in_high = r >= 1.0 - epsilon;
            if epsilon < 0.5 && in_low && in_high {
                return Err(Error::Invariant(
                    "low and high occupation sets intersected below epsilon 1/2".into(),
                ));
            }
            if in_low {
                low += w;
            }
            if in_high {
                high += w;
            }
        }
        Ok((low, high))
    };

    // Main pass: measures, running densities, largest waits, support probe.
    let n = (t / step).floor() as usize;
    let checkpoint_every = (n / 2048).max(1);
    let mut low = 0.0;
    let mut high = 0.0;
    let mut checkpoints = Vec::new();
    let mut running_low = Vec::new();
    let mut running_high = Vec::new();
    let mut last_low: Option<f64> = None;
    let mut last_high: Option<f64> = None;
    let mut gap_low: f64 = 0.0;
    let mut gap_high: f64 = 0.0;
    let mut any_low = false;
    let mut any_high = false;
    let mut sup_r: f64 = 0.0;
    for k in 0..=n {
        let s = (k as f64 * step).min(t);
        let w = if k == 0 || k == n { step / 2.0 } else { step };
        let r = view.cumulative(s).exp();
        sup_r = sup_r.max(r);
        if r <= epsilon {
            low += w;
            if let Some(prev) = last_low {
                gap_low = gap_low.max(s - prev);
            }
            last_low = Some(s);
            any_low = true;
        }
        if r >= 1.0 - epsilon {
            high += w;
            if let Some(prev) = last_high {
                gap_high = gap_high.max(s - prev);
            }
            last_high = Some(s);
            any_high = true;
        }
        if k > 0 && (k % checkpoint_every == 0 || k == n) {
            checkpoints.push(s);
            running_low.push(low / s);
            running_high.push(high / s);
        }
    }
    if !any_low {
        gap_low = t;
    }
    if !any_high {
        gap_high = t;
    }

    // Aliasing guard: the occupation measure must be stable under halving.
    let (low_h, high_h) = measures(step / 2.0)?;
    let moved = |m: f64, mh: f64| {
        let scale = m.abs().max(mh.abs());
        scale > 0.0 && (m - mh).abs() > 0.02 * scale
    };
    let step_warning = moved(low, low_h) || moved(high, high_h);

    Ok(DensityReport {
        omega: omega.clone(),
        epsilon,
        horizon: t,
        step,
        measure_low: low,
        measure_high: high,
        density_low: low / t,
        density_high: high / t,
        checkpoints,
        running_low,
        running_high,
        largest_gap_low: gap_low,
        largest_gap_high: gap_high,
        step_warning,
        off_support: sup_r > OFF_SUPPORT_RATIO,
    })
}

// ---------------------------------------------------------------------------
// The η_c family
// ---------------------------------------------------------------------------

/// Grid indices whose covers lie in the band at ω and whose transported
/// covers stay in the band along [0, window] — the sampled stand-in for
/// the full-measure set where the attractor is governed by the in-band
/// linear dynamics.
///
/// Confinement is judged up to each fiber's recorded pullback residual
/// (amplified tenfold for drift during the window), not to solver
/// precision: extremal covers touch the band edges tangentially, so a
/// cover that has converged to within δ legitimately overshoots by up to
/// δ at a touch, and demanding more than the covers' own accuracy would
/// empty the proxy set on exactly the sections it exists to describe.
pub fn omega_l_proxy(
    model: &ScalarModel,
    section: &AttractorSection,
    window: f64,
    solver: &SolveOptions,
) -> Result<Vec<usize>> {
    if !(window > 0.0) {
        return Err(Error::invalid("proxy window must be positive"));
    }
    let (r1, r2) = (model.dissipation.r1, model.dissipation.r2);
    let base_slack = 1e-9 * (1.0 + section.rho0);
    let mut solver = *solver;
    solver.dense = true;
    let flags = exec::try_map_indexed(&section.grid, |i, w| -> Result<bool> {
        let slack =
            base_slack + 10.0 * (section.residual_alpha[i] + section.residual_beta[i]);
        let (al, be) = (section.alpha[i], section.beta[i]);
        if !(al >= r1 - slack && be <= r2 + slack) {
            return Ok(false);
        }
        let pad = solver.max_step;
        let orbit = model.on_orbit(w, -pad, window + pad)?;
        for x0 in [al, be] {
            let traj = solve_on_orbit(&orbit, w, x0, (0.0, window), &solver)?;
            if traj
                .values()
                .iter()
                .any(|&x| x < r1 - slack || x > r2 + slack)
            {
                return Ok(false);
            }
        }
        Ok(true)
    })?;
    Ok(flags
        .iter()
        .enumerate()
        .filter_map(|(i, &q)| q.then_some(i))
        .collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EtaTransportReport {
    pub delta: f64,
    pub c_values: Vec<f64>,
    /// Grid indices that passed the band-confinement proxy for [0, Δ].
    pub qualifying: Vec<usize>,
    /// residuals[c-index][qualifying-index].
    pub residuals: Vec<Vec<f64>>,
    pub max_residual: Vec<f64>,
}

/// Transport the interpolated equilibria η_c = c·α + (1−c)·β by Δ and
/// compare against the covers at the advanced fiber.
///
/// The advanced covers continue the very pullback runs that produced the
/// section (same backward horizons per sign, integrated Δ further), so on
/// a qualifying fiber — where the transported segment stays in the band
/// and the flow is affine in x — the residual measures invariance of the
/// family at solver scale, not pullback convergence rates.
pub fn eta_family_transport(
    model: &ScalarModel,
    section: &AttractorSection,
    c_values: &[f64],
    delta: f64,
    solver: &SolveOptions,
) -> Result<EtaTransportReport> {
    if c_values.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::invalid("c values must lie in [0, 1]"));
    }
    if !(delta > 0.0) {
        return Err(Error::invalid("transport span must be positive"));
    }
    let qualifying = omega_l_proxy(model, section, delta, solver)?;
    let rho0 = section.rho0;
    let mut solver = *solver;
    solver.dense = false;

    let per_point = exec::try_map_indexed(&qualifying, |_, &i| -> Result<Vec<f64>> {
        let w = &section.grid[i];
        let (t_lo, t_up) = (section.horizon_alpha[i], section.horizon_beta[i]);
        let pad = solver.max_step;
        let orbit = model.on_orbit(w, -t_lo.max(t_up) - pad, delta + pad)?;
        let lower = solve_on_orbit(&orbit, w, -rho0, (-t_lo, delta), &solver)?.end_value();
        let upper = solve_on_orbit(&orbit, w, rho0, (-t_up, delta), &solver)?.end_value();
        let mut out = Vec::with_capacity(c_values.len());
        for &c in c_values {
            let eta = c * section.alpha[i] + (1.0 - c) * section.beta[i];
            let moved = solve_on_orbit(&orbit, w, eta, (0.0, delta), &solver)?.end_value();
            let eta_adv = c * lower + (1.0 - c) * upper;
            out.push((moved - eta_adv).abs());
        }
        Ok(out)
    })?;

    let mut residuals = vec![Vec::with_capacity(qualifying.len()); c_values.len()];
    for row in &per_point {
        for (ci, &r) in row.iter().enumerate() {
            residuals[ci].push(r);
        }
    }
    let max_residual = residuals
        .iter()
        .map(|rs| rs.iter().copied().fold(0.0f64, f64::max))
        .collect();
    Ok(EtaTransportReport {
        delta,
        c_values: c_values.to_vec(),
        qualifying,
        residuals,
        max_residual,
    })
}

// ---------------------------------------------------------------------------
// Support sampling
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct SupportOptions {
    /// Grid index of the recurrence target; defaults to the first
    /// continuity-mask point of the section.
    pub witness_center: Option<usize>,
    /// Base-distance ball that counts as a recurrence.
    pub witness_radius: f64,
    pub solver: SolveOptions,
}

impl Default for SupportOptions {
    fn default() -> Self {
        SupportOptions {
            witness_center: None,
            witness_radius: 0.05,
            solver: SolveOptions::with_tol(1e-11),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SupportSample {
    pub c: f64,
    pub seed: BasePoint,
    pub sample_step: f64,
    /// The orbit cloud approximating the support of the η_c orbit closure.
    pub cloud: Vec<(BasePoint, f64)>,
    pub witness_center: Option<BasePoint>,
    /// Cloud indices whose base point recurs into the witness ball.
    pub hits: Vec<usize>,
    /// The hit closest to the witness center.
    pub witness: Option<usize>,
}

/// Sample the orbit closure of (ω̄, η_c(ω̄)): transport forward over
/// [0, t_orbit], record the cloud, and collect recurrences into a ball
/// around a cover-contact fiber (where the cloud's section must be
/// near-degenerate if the attractor equals the sampled support).
pub fn support_sample(
    model: &ScalarModel,
    section: &AttractorSection,
    c: f64,
    seed_index: usize,
    t_orbit: f64,
    sample_step: f64,
    opts: &SupportOptions,
) -> Result<SupportSample> {
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::invalid("c must lie in [0, 1]"));
    }
    if seed_index >= section.len() {
        return Err(Error::invalid("seed index out of range"));
    }
    let (r1, r2) = (model.dissipation.r1, model.dissipation.r2);
    let slack = 1e-9 * (1.0 + section.rho0);
    if section.alpha[seed_index] < r1 - slack || section.beta[seed_index] > r2 + slack {
        return Err(Error::invalid(
            "support seed needs band-interior covers (outside the proxy set)",
        ));
    }
    let seed = section.grid[seed_index].clone();
    let eta = c * section.alpha[seed_index] + (1.0 - c) * section.beta[seed_index];
    let cloud = orbit_cloud(model, &seed, eta, t_orbit, sample_step, &opts.solver)?;

    let center_index = match opts.witness_center {
        Some(i) => {
            if i >= section.len() {
                return Err(Error::invalid("witness index out of range"));
            }
            Some(i)
        }
        None => section.continuity_mask.iter().position(|&m| m),
    };
    let (witness_center, hits, witness) = match center_index {
        None => (None, Vec::new(), None),
        Some(ci) => {
            let center = section.grid[ci].clone();
            let mut hits = Vec::new();
            let mut best: Option<(usize, f64)> = None;
            for (k, (w, _)) in cloud.iter().enumerate() {
                let d = w.torus_distance(&center);
                if d <= opts.witness_radius {
                    hits.push(k);
                    if best.map_or(true, |(_, bd)| d < bd) {
                        best = Some((k, d));
                    }
                }
            }
            (Some(center), hits, best.map(|(k, _)| k))
        }
    };

    Ok(SupportSample {
        c,
        seed,
        sample_step,
        cloud,
        witness_center,
        hits,
        witness,
    })
}

/// Time average of an observable over an orbit cloud (uniform sampling
/// makes the plain mean the Birkhoff average).
pub fn cloud_average<F>(cloud: &[(BasePoint, f64)], observable: F) -> f64
where
    F: Fn(&BasePoint, f64) -> f64,
{
    if cloud.is_empty() {
        return f64::NAN;
    }
    cloud.iter().map(|(w, x)| observable(w, *x)).sum::<f64>() / cloud.len() as f64
}

// ---------------------------------------------------------------------------
// Sensitivity probes
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub delta: f64,
    pub sup_gap_plus: f64,
    pub sup_gap_minus: f64,
    /// Best separation achieved by either perturbation sign.
    pub sup_gap: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SensitivityTable {
    pub omega: BasePoint,
    pub x: f64,
    pub horizon: f64,
    pub rows: Vec<SensitivityRow>,
    /// Per ε: every probed δ achieved separation > ε.
    pub sensitive: Vec<(f64, bool)>,
}

/// Perturb x by ±δ for each δ in the grid and record the largest fiber gap
/// reached over [0, T]; a point is ε-sensitive when every δ achieves a gap
/// beyond ε.
pub fn sensitivity_probe(
    model: &ScalarModel,
    omega: &BasePoint,
    x: f64,
    eps_grid: &[f64],
    delta_grid: &[f64],
    t: f64,
    solver: &SolveOptions,
) -> Result<SensitivityTable> {
    if !(t > 0.0) {
        return Err(Error::invalid("sensitivity probe needs t > 0"));
    }
    if delta_grid.iter().any(|d| *d < 0.0) {
        return Err(Error::invalid("perturbations must be nonnegative"));
    }
    let mut solver = *solver;
    solver.dense = true;
    let pad = solver.max_step;
    let orbit = model.on_orbit(omega, -pad, t + pad)?;
    let base = solve_on_orbit(&orbit, omega, x, (0.0, t), &solver)?;

    let sup_gap_against = |x0: f64| -> Result<f64> {
        if x0 == x {
            return Ok(0.0);
        }
        let traj = solve_on_orbit(&orbit, omega, x0, (0.0, t), &solver)?;
        let mut sup: f64 = 0.0;
        let n = 4096;
        for k in 0..=n {
            let s = t * k as f64 / n as f64;
            sup = sup.max((traj.eval(s) - base.eval(s)).abs());
        }
        for &s in traj.times() {
            sup = sup.max((traj.eval(s) - base.eval(s)).abs());
        }
        Ok(sup)
    };

    let rows = exec::try_map_indexed(delta_grid, |_, &delta| -> Result<SensitivityRow> {
        let plus = sup_gap_against(x + delta)?;
        let minus = sup_gap_against(x - delta)?;
        Ok(SensitivityRow {
            delta,
            sup_gap_plus: plus,
            sup_gap_minus: minus,
            sup_gap: plus.max(minus),
        })
    })?;

    let sensitive = eps_grid
        .iter()
        .map(|&eps| {
            (
                eps,
                !rows.is_empty() && rows.iter().all(|r| r.sup_gap > eps),
            )
        })
        .collect();

    Ok(SensitivityTable {
        omega: omega.clone(),
        x,
        horizon: t,
        rows,
        sensitive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attractor::{section, CoverSign, PullbackOptions, SectionOptions};
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

    fn profile(r1: f64, r2: f64, kappa: f64) -> DissipationProfile {
        DissipationProfile {
            r1,
            r2,
            p: 2,
            kappa: constant(kappa),
            kappa_min: kappa,
        }
    }

    fn sine_shape(amp: f64) -> QpFunction {
        QpFunction::Trig(
            TrigPoly::new(
                2,
                0.0,
                vec![TrigTerm {
                    k: vec![1, 0],
                    amp_cos: 0.0,
                    amp_sin: amp,
                }],
            )
            .unwrap(),
        )
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
        ScalarModel::new(flow2(), a, b, profile(-2.0, 2.0, 1.0)).unwrap()
    }

    /// Zero-mean a with a bounded primitive: gap oscillates, never decays.
    fn oscillating_model(amp: f64, band: f64) -> ScalarModel {
        let flow = flow2();
        let a = sine_shape(amp).derivative_along(&flow).unwrap();
        ScalarModel::new(flow, a, constant(0.0), profile(-band, band, 1.0)).unwrap()
    }

    #[test]
    fn contracting_pairs_are_asymptotic() {
        let m = hyperbolic_like();
        let w = BasePoint::new(vec![0.3, 0.8]).unwrap();
        let v = classify_pair(
            &m,
            &w,
            0.1,
            0.4,
            200.0,
            &PairThresholds::default(),
            &SolveOptions::with_tol(1e-11),
        )
        .unwrap();
        assert_eq!(v.classification, PairClass::Asymptotic);
        assert!(v.band_confined);
        assert!(v.cross_check_ok, "mismatch {}", v.mismatch_max);
        assert!(v.limsup_gap < 1e-4 * 0.3);
    }

    #[test]
    fn bounded_oscillation_pairs_are_distal() {
        let m = oscillating_model(0.4, 5.0);
        let w = BasePoint::new(vec![0.2, 0.6]).unwrap();
        let v = classify_pair(
            &m,
            &w,
            0.5,
            1.5,
            500.0,
            &PairThresholds::default(),
            &SolveOptions::with_tol(1e-11),
        )
        .unwrap();
        assert_eq!(v.classification, PairClass::Distal);
        assert!(v.band_confined);
        // The law says the gap stays within e^{±2·max|h|} of its start.
        assert!(v.liminf_gap >= 1.0 * (-0.8f64).exp() - 1e-9);
        assert!(v.limsup_gap <= 1.0 * (0.8f64).exp() + 1e-9);
    }

    #[test]
    fn deep_oscillation_pairs_are_li_yorke() {
        // Gap ratio exp(A·sin(2πθ₁(t)) − A·sin(2πθ₁(0))): starting at the
        // sine peak θ₁ = 1/4 makes it sweep [e^{−2A}, 1], so the gap dips
        // below the asymptotic threshold and recovers past the distal one
        // within the tail.
        let m = oscillating_model(6.0, 16.0);
        let w = BasePoint::new(vec![0.25, 0.1]).unwrap();
        let v = classify_pair(
            &m,
            &w,
            0.5,
            1.5,
            200.0,
            &PairThresholds::default(),
            &SolveOptions::with_tol(1e-11),
        )
        .unwrap();
        assert_eq!(v.classification, PairClass::LiYorke);
        assert!(v.band_confined);
        assert!(v.liminf_gap < 1e-4);
        assert!(v.limsup_gap > 0.1);
    }

    #[test]
    fn mid_scale_decay_stays_undecided() {
        // x' = −x over a horizon chosen so the tail gap sits strictly
        // between the asymptotic and distal thresholds.
        let m = ScalarModel::new(
            flow2(),
            constant(-1.0),
            constant(0.0),
            profile(-1e3, 1e3, 1.0),
        )
        .unwrap();
        let w = BasePoint::origin(2);
        let v = classify_pair(
            &m,
            &w,
            0.0,
            1.0,
            6.0,
            &PairThresholds::default(),
            &SolveOptions::with_tol(1e-11),
        )
        .unwrap();
        assert_eq!(v.classification, PairClass::Undecided);
        assert!(v.liminf_gap > 1e-4 && v.limsup_gap < 0.1);
    }

    #[test]
    fn threshold_separation_is_enforced() {
        let m = hyperbolic_like();
        let w = BasePoint::origin(2);
        let bad = PairThresholds {
            asymptotic_fraction: 0.05,
            distal_fraction: 0.1,
            tail_fraction: 0.5,
        };
        assert!(classify_pair(&m, &w, 0.1, 0.2, 10.0, &bad, &SolveOptions::default()).is_err());
    }

    #[test]
    fn flat_ratio_occupies_only_the_high_set() {
        let flow = flow2();
        let w = BasePoint::origin(2);
        let rep = density_report(&constant(0.0), &flow, &w, 0.2, 100.0, 0.01).unwrap();
        assert_eq!(rep.measure_low, 0.0);
        assert!((rep.measure_high - 100.0).abs() < 1e-9);
        assert!((rep.density_high - 1.0).abs() < 1e-12);
        assert_eq!(rep.largest_gap_low, 100.0); // no visit marker
        assert!(rep.largest_gap_high <= 0.01 + 1e-12);
        assert!(!rep.step_warning);
        assert!(!rep.off_support);
    }

    #[test]
    fn pure_decay_matches_the_closed_form_split() {
        let flow = flow2();
        let w = BasePoint::origin(2);
        let eps = 0.2f64;
        let t = 50.0;
        let step = 0.001;
        let rep = density_report(&constant(-1.0), &flow, &w, eps, t, step).unwrap();
        // Low set [ln(1/ε), T], high set [0, ln(1/(1−ε))].
        let expect_low = t - (1.0 / eps).ln();
        let expect_high = (1.0 / (1.0 - eps)).ln();
        assert!((rep.measure_low - expect_low).abs() < 2.0 * step);
        assert!((rep.measure_high - expect_high).abs() < 2.0 * step);
        // Running density of the low set climbs toward 1.
        let last = *rep.running_low.last().unwrap();
        assert!(last > 0.9 && last <= 1.0);
    }

    #[test]
    fn occupation_measures_are_monotone_in_epsilon() {
        let flow = flow2();
        let a = sine_shape(1.0).derivative_along(&flow).unwrap();
        let w = BasePoint::new(vec![0.4, 0.7]).unwrap();
        let mut prev_low = -1.0;
        let mut prev_high = -1.0;
        for eps in [0.05, 0.1, 0.2, 0.4] {
            let rep = density_report(&a, &flow, &w, eps, 200.0, 0.01).unwrap();
            assert!(rep.measure_low >= prev_low);
            assert!(rep.measure_high >= prev_high);
            assert!(rep.measure_low + rep.measure_high <= 200.0 + 1e-9);
            prev_low = rep.measure_low;
            prev_high = rep.measure_high;
        }
    }

    #[test]
    fn eta_family_is_invariant_on_the_proxy_set() {
        let m = hyperbolic_like();
        let s = section(
            &m,
            &SectionOptions {
                per_axis: 3,
                pullback: PullbackOptions {
                    tol: 1e-9,
                    t_max: 256.0,
                    rho0: None,
                    solver: SolveOptions::with_tol(1e-11),
                },
                pinch_tol: 1e-6,
            },
        )
        .unwrap();
        let rep = eta_family_transport(
            &m,
            &s,
            &[0.0, 0.25, 0.5, 0.75, 1.0],
            1.0,
            &SolveOptions::with_tol(1e-11),
        )
        .unwrap();
        // The attractor graph lies well inside the band here, so every grid
        // point qualifies and all residuals collapse to solver scale.
        assert_eq!(rep.qualifying.len(), 9);
        for (ci, max_r) in rep.max_residual.iter().enumerate() {
            assert!(*max_r < 1e-6, "c = {}: residual {}", rep.c_values[ci], max_r);
        }
    }

    #[test]
    fn support_cloud_recurs_and_rides_the_graph() {
        let m = hyperbolic_like();
        let s = section(
            &m,
            &SectionOptions {
                per_axis: 3,
                pullback: PullbackOptions {
                    tol: 1e-8,
                    t_max: 256.0,
                    rho0: None,
                    solver: SolveOptions::with_tol(1e-11),
                },
                pinch_tol: 1e-6,
            },
        )
        .unwrap();
        let opts = SupportOptions {
            witness_center: Some(0),
            witness_radius: 0.25,
            solver: SolveOptions::with_tol(1e-11),
        };
        let sample = support_sample(&m, &s, 0.5, 4, 400.0, 0.5, &opts).unwrap();
        assert_eq!(sample.cloud.len(), 801);
        assert!(!sample.hits.is_empty());
        let wi = sample.witness.unwrap();
        assert!(sample.hits.contains(&wi));
        let (wb, _) = &sample.cloud[wi];
        assert!(wb.torus_distance(sample.witness_center.as_ref().unwrap()) <= 0.25);
        // All η_c coincide on a collapsed section: for c = 0.5 the cloud is
        // the attractor graph itself; spot-check against pullback values.
        let po = PullbackOptions {
            tol: 1e-9,
            t_max: 256.0,
            rho0: None,
            solver: SolveOptions::with_tol(1e-11),
        };
        for (w, x) in sample.cloud.iter().rev().take(3) {
            let direct = crate::attractor::pullback_cover(&m, w, CoverSign::Upper, &po).unwrap();
            assert!((x - direct.value).abs() < 1e-6);
        }
    }

    #[test]
    fn cloud_averages_agree_across_seeds() {
        // Ergodicity proxy: Birkhoff averages of an observable along the
        // attractor orbit from different seeds converge to the same value.
        let m = hyperbolic_like();
        let s = section(
            &m,
            &SectionOptions {
                per_axis: 3,
                pullback: PullbackOptions {
                    tol: 1e-8,
                    t_max: 256.0,
                    rho0: None,
                    solver: SolveOptions::with_tol(1e-11),
                },
                pinch_tol: 1e-6,
            },
        )
        .unwrap();
        let opts = SupportOptions::default();
        let obs = |_: &BasePoint, x: f64| x * x;
        let c0 = support_sample(&m, &s, 0.5, 0, 2000.0, 0.25, &opts).unwrap();
        let c1 = support_sample(&m, &s, 0.5, 5, 2000.0, 0.25, &opts).unwrap();
        let a0 = cloud_average(&c0.cloud, obs);
        let a1 = cloud_average(&c1.cloud, obs);
        assert!((a0 - a1).abs() < 2e-2, "{a0} vs {a1}");
    }

    #[test]
    fn stable_regime_shows_no_sensitivity() {
        let m = hyperbolic_like();
        let w = BasePoint::new(vec![0.7, 0.2]).unwrap();
        let table = sensitivity_probe(
            &m,
            &w,
            0.1,
            &[0.5],
            &[0.0, 1e-3, 1e-2],
            100.0,
            &SolveOptions::with_tol(1e-11),
        )
        .unwrap();
        assert_eq!(table.rows[0].sup_gap, 0.0); // δ = 0 exactly
        for row in &table.rows[1..] {
            // Perturbations only ever contract: κ from the decay fit of
            // this coefficient is ≈ e^{0.6·2} at worst; 3× covers it.
            assert!(row.sup_gap <= 3.0 * row.delta, "{row:?}");
            assert!(row.sup_gap > 0.0);
        }
        assert!(!table.sensitive[0].1);
    }

    #[test]
    fn oscillating_regime_separates_small_perturbations() {
        // From the sine trough θ₁ = 3/4 a perturbation is amplified by up
        // to e^{2A} = e^{10} somewhere in the window: separation beyond 0.5
        // for every δ ≥ 1e-4.
        let m = oscillating_model(5.0, 1e4);
        let w = BasePoint::new(vec![0.75, 0.35]).unwrap();
        let table = sensitivity_probe(
            &m,
            &w,
            0.0,
            &[0.5],
            &[1e-4, 1e-3, 1e-2],
            200.0,
            &SolveOptions::with_tol(1e-11),
        )
        .unwrap();
        assert!(table.sensitive[0].1, "{:?}", table.rows);
    }

    #[test]
    fn scrambled_pairs_never_classify_distal_or_asymptotic() {
        // Fiber pairs drawn inside a deep-oscillation band model, seeded at
        // the sine peak so the ratio sweeps [e^{−2A}, 1]: each pair is
        // Li-Yorke or undecided, never settled.
        let m = oscillating_model(6.0, 16.0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let w = BasePoint::new(vec![0.25, 0.13]).unwrap();
        let mut li_yorke = 0;
        for _ in 0..6 {
            let x1: f64 = rng.gen_range(-1.0..1.0);
            let x2: f64 = rng.gen_range(-1.0..1.0);
            if (x1 - x2).abs() < 1e-3 {
                continue;
            }
            let v = classify_pair(
                &m,
                &w,
                x1,
                x2,
                200.0,
                &PairThresholds::default(),
                &SolveOptions::with_tol(1e-11),
            )
            .unwrap();
            assert!(
                v.classification == PairClass::LiYorke
                    || v.classification == PairClass::Undecided,
                "{:?}",
                v.classification
            );
            if v.classification == PairClass::LiYorke {
                li_yorke += 1;
            }
        }
        assert!(li_yorke >= 4, "only {li_yorke} Li-Yorke verdicts");
    }
}
