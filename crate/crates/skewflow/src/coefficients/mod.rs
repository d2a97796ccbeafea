//! Quasi-periodic coefficients on the torus and their exact orbit
//! restrictions.
//!
//! Every coefficient class knows how to restrict itself to an orbit
//! t ↦ f(ω·t) with a closed-form (or piecewise-exact) running integral.
//! All integral quantities downstream — exponential propagators, primitive
//! envelopes, spectra — are built on those restrictions instead of generic
//! quadrature, which is what keeps the razor-thin tube terms honest.

pub mod bump;
pub mod trig;

use serde::{Deserialize, Serialize};

pub use bump::{
    build_rm_coefficient, tube_mass_bound, BumpOrbitView, BumpSeries, BumpTerm, RmBuildReport,
    RmOptions, RmTermReport,
};
pub use trig::{TrigOrbitView, TrigPoly, TrigTerm};

use crate::base_flow::{BasePoint, RotationFlow};
use crate::error::{Error, Result};

/// A scalar quasi-periodic function on the torus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "def", rename_all = "kebab-case")]
pub enum QpFunction {
    /// Finite trigonometric polynomial.
    Trig(TrigPoly),
    /// Bump-tube series (zero mean by construction).
    BumpSeries(BumpSeries),
    /// Pointwise sum of other coefficients.
    Sum(Vec<QpFunction>),
}

impl QpFunction {
    pub fn dim(&self) -> usize {
        match self {
            QpFunction::Trig(p) => p.dim(),
            QpFunction::BumpSeries(s) => s.dim(),
            QpFunction::Sum(parts) => parts.first().map_or(0, |p| p.dim()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            QpFunction::Trig(_) => Ok(()),
            QpFunction::BumpSeries(s) => s.validate(),
            QpFunction::Sum(parts) => {
                if parts.is_empty() {
                    return Err(Error::invalid("sum coefficient needs at least one part"));
                }
                let d = parts[0].dim();
                for p in parts {
                    p.validate()?;
                    if p.dim() != d {
                        return Err(Error::invalid("sum coefficient with mixed dimensions"));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, omega: &BasePoint) -> f64 {
        match self {
            QpFunction::Trig(p) => p.eval(omega),
            QpFunction::BumpSeries(s) => s.eval(omega),
            QpFunction::Sum(parts) => parts.iter().map(|p| p.eval(omega)).sum(),
        }
    }

    /// Mean against the invariant (Haar) measure. Exact by structure: the
    /// constant term for trig polynomials, zero for the telescoping bump
    /// series, additive over sums.
    pub fn mean(&self) -> f64 {
        match self {
            QpFunction::Trig(p) => p.mean(),
            QpFunction::BumpSeries(s) => s.mean(),
            QpFunction::Sum(parts) => parts.iter().map(|p| p.mean()).sum(),
        }
    }

    /// Rigorous uniform bound on |f|.
    pub fn sup_bound(&self) -> f64 {
        match self {
            QpFunction::Trig(p) => p.sup_bound(),
            QpFunction::BumpSeries(s) => s.sup_bound(),
            QpFunction::Sum(parts) => parts.iter().map(|p| p.sup_bound()).sum(),
        }
    }

    /// Rigorous bound f ≤ upper_bound everywhere.
    pub fn upper_bound(&self) -> f64 {
        match self {
            QpFunction::Trig(p) => p.upper_bound(),
            QpFunction::BumpSeries(s) => s.upper_bound(),
            QpFunction::Sum(parts) => parts.iter().map(|p| p.upper_bound()).sum(),
        }
    }

    /// Rigorous bound f ≥ lower_bound everywhere.
    pub fn lower_bound(&self) -> f64 {
        match self {
            QpFunction::Trig(p) => p.lower_bound(),
            QpFunction::BumpSeries(s) => s.lower_bound(),
            QpFunction::Sum(parts) => parts.iter().map(|p| p.lower_bound()).sum(),
        }
    }

    /// t ↦ ∇f(ω·t)·ρ as a coefficient, where it exists in closed form.
    pub fn derivative_along(&self, flow: &RotationFlow) -> Result<QpFunction> {
        match self {
            QpFunction::Trig(p) => Ok(QpFunction::Trig(p.derivative_along(flow)?)),
            QpFunction::BumpSeries(_) => Err(Error::invalid(
                "bump series has no closed-form derivative along the flow",
            )),
            QpFunction::Sum(parts) => Ok(QpFunction::Sum(
                parts
                    .iter()
                    .map(|p| p.derivative_along(flow))
                    .collect::<Result<_>>()?,
            )),
        }
    }

    /// Restrict to the orbit of ω over [t_lo, t_hi]. The view evaluates
    /// f(ω·t) and its exact running integral; bump-series views are only
    /// valid inside the requested window.
    pub fn view(
        &self,
        omega: &BasePoint,
        flow: &RotationFlow,
        t_lo: f64,
        t_hi: f64,
    ) -> Result<OrbitView> {
        if self.dim() != flow.dim() || omega.dim() != flow.dim() {
            return Err(Error::invalid("coefficient/flow/point dimension mismatch"));
        }
        match self {
            QpFunction::Trig(p) => Ok(OrbitView::Trig(p.orbit_view(omega, flow)?)),
            QpFunction::BumpSeries(s) => {
                if s.freqs != flow.freqs() {
                    return Err(Error::invalid(
                        "bump series built for a different frequency vector",
                    ));
                }
                Ok(OrbitView::Bumps(s.view(omega, t_lo, t_hi)?))
            }
            QpFunction::Sum(parts) => Ok(OrbitView::Sum(
                parts
                    .iter()
                    .map(|p| p.view(omega, flow, t_lo, t_hi))
                    .collect::<Result<_>>()?,
            )),
        }
    }
}

/// The restriction of a coefficient to one orbit: t ↦ f(ω·t) with its exact
/// running integral.
#[derive(Clone, Debug)]
pub enum OrbitView {
    Trig(TrigOrbitView),
    Bumps(BumpOrbitView),
    Sum(Vec<OrbitView>),
}

impl OrbitView {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            OrbitView::Trig(v) => v.eval(t),
            OrbitView::Bumps(v) => v.eval(t),
            OrbitView::Sum(parts) => parts.iter().map(|v| v.eval(t)).sum(),
        }
    }

    /// ∫₀ᵗ f(ω·s) ds.
    pub fn cumulative(&self, t: f64) -> f64 {
        match self {
            OrbitView::Trig(v) => v.cumulative(t),
            OrbitView::Bumps(v) => v.cumulative(t),
            OrbitView::Sum(parts) => parts.iter().map(|v| v.cumulative(t)).sum(),
        }
    }

    /// ∫_{t1}^{t2} f(ω·s) ds.
    pub fn cumulative_between(&self, t1: f64, t2: f64) -> f64 {
        match self {
            OrbitView::Trig(v) => v.cumulative(t2) - v.cumulative(t1),
            OrbitView::Bumps(v) => v.cumulative_between(t1, t2),
            OrbitView::Sum(parts) => parts.iter().map(|v| v.cumulative_between(t1, t2)).sum(),
        }
    }

    /// Points inside the view window where the restriction switches between
    /// smooth pieces (empty for trig polynomials).
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            OrbitView::Trig(_) => Vec::new(),
            OrbitView::Bumps(v) => v.breakpoints(),
            OrbitView::Sum(parts) => {
                let mut pts: Vec<f64> = parts.iter().flat_map(|v| v.breakpoints()).collect();
                pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
                pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-11 * (1.0 + a.abs()));
                pts
            }
        }
    }

    /// Shortest oscillation period among trig modes, if any: a sensible
    /// default sampling scale for this restriction.
    pub fn min_period(&self) -> Option<f64> {
        match self {
            OrbitView::Trig(v) => v.min_period(),
            OrbitView::Bumps(_) => None,
            OrbitView::Sum(parts) => parts
                .iter()
                .filter_map(|v| v.min_period())
                .min_by(|a, b| a.partial_cmp(b).unwrap()),
        }
    }
}

/// Window statistics of the primitive P(t) = ∫₀ᵗ a(ω·s) ds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PrimitiveStats {
    pub horizon: f64,
    /// sup / inf of P over [0, T].
    pub sup_forward: f64,
    pub inf_forward: f64,
    /// sup / inf of P over [−T, 0].
    pub sup_backward: f64,
    pub inf_backward: f64,
    /// min over [−T, T] of exp(−P(t)): the largest admissible uniform decay
    /// constant witnessed on this window. Nonincreasing as T grows.
    pub h_a_estimate: f64,
    /// Set when halving the sampling step moves an extremum noticeably: the
    /// requested step is too coarse for this coefficient and window.
    pub step_refinement_warning: bool,
}

/// Scan the primitive of `a` along the orbit of ω over [−horizon, horizon].
///
/// P is evaluated through the exact running integral of the orbit view (not
/// accumulated sample-by-sample), so the step only controls how finely the
/// extremum search scans; a half-step re-scan flags coarse requests instead
/// of failing.
pub fn primitive_stats(
    a: &QpFunction,
    flow: &RotationFlow,
    omega: &BasePoint,
    horizon: f64,
    step: f64,
) -> Result<PrimitiveStats> {
    if !(horizon > 0.0) || !(step > 0.0) {
        return Err(Error::invalid("primitive stats need horizon > 0 and step > 0"));
    }
    let view = a.view(omega, flow, -horizon, horizon)?;
    let mut cuts = view.breakpoints();
    cuts.retain(|&t| t > -horizon && t < horizon);

    let scan = |step: f64| -> (f64, f64, f64, f64) {
        let n = (2.0 * horizon / step).ceil() as usize;
        let mut sup_f = f64::NEG_INFINITY;
        let mut inf_f = f64::INFINITY;
        let mut sup_b = f64::NEG_INFINITY;
        let mut inf_b = f64::INFINITY;
        let mut visit = |t: f64| {
            let p = view.cumulative(t);
            if t >= 0.0 {
                sup_f = sup_f.max(p);
                inf_f = inf_f.min(p);
            }
            if t <= 0.0 {
                sup_b = sup_b.max(p);
                inf_b = inf_b.min(p);
            }
        };
        for k in 0..=n {
            visit(-horizon + k as f64 * step);
        }
        visit(horizon);
        visit(0.0);
        for &t in &cuts {
            visit(t);
        }
        (sup_f, inf_f, sup_b, inf_b)
    };

    let coarse = scan(step);
    let fine = scan(0.5 * step);
    // "Too coarse" means halving the step moved an extremum by a material
    // fraction of the primitive's range on this window.
    let range = fine.0.max(fine.2) - fine.1.min(fine.3);
    let tol = 1e-9f64.max(1e-3 * range);
    let moved = |a: f64, b: f64| (a - b).abs() > tol;
    let warning = moved(coarse.0, fine.0)
        || moved(coarse.1, fine.1)
        || moved(coarse.2, fine.2)
        || moved(coarse.3, fine.3);

    let (sup_forward, inf_forward, sup_backward, inf_backward) = fine;
    let sup_all = sup_forward.max(sup_backward);
    Ok(PrimitiveStats {
        horizon,
        sup_forward,
        inf_forward,
        sup_backward,
        inf_backward,
        h_a_estimate: (-sup_all).exp(),
        step_refinement_warning: warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOLDEN: f64 = 0.618_033_988_749_894_9;
    const SQRT2M1: f64 = 0.414_213_562_373_095_1;

    fn flow2() -> RotationFlow {
        RotationFlow::new(vec![GOLDEN, SQRT2M1]).unwrap()
    }

    fn sample_trig() -> QpFunction {
        QpFunction::Trig(
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
        )
    }

    #[test]
    fn sum_view_matches_parts() {
        let flow = flow2();
        let f = QpFunction::Sum(vec![sample_trig(), sample_trig()]);
        let p = BasePoint::new(vec![0.3, 0.8]).unwrap();
        let view = f.view(&p, &flow, -10.0, 10.0).unwrap();
        for k in 0..=100 {
            let t = -10.0 + 0.2 * k as f64;
            let expect = 2.0 * sample_trig().eval(&flow.advance(&p, t));
            assert!((view.eval(t) - expect).abs() < 1e-12);
        }
        assert!((f.mean() - -1.0).abs() < 1e-15);
        assert!((f.sup_bound() - 1.6).abs() < 1e-12);
    }

    #[test]
    fn view_rejects_mismatched_frequencies() {
        let flow = flow2();
        let other = RotationFlow::new(vec![0.3, 0.7]).unwrap();
        let series = BumpSeries {
            freqs: other.freqs().to_vec(),
            terms: vec![],
        };
        let f = QpFunction::BumpSeries(series);
        let p = BasePoint::origin(2);
        assert!(f.view(&p, &flow, 0.0, 1.0).is_err());
    }

    #[test]
    fn serde_roundtrip_through_toml() {
        let f = QpFunction::Sum(vec![
            sample_trig(),
            QpFunction::BumpSeries(BumpSeries {
                freqs: vec![GOLDEN, SQRT2M1],
                terms: vec![BumpTerm {
                    anchor: vec![0.0, 0.0],
                    t_n: 4.0,
                    delta: 0.05,
                    weight: 1.0,
                    q: 2,
                }],
            }),
        ]);
        #[derive(serde::Serialize, serde::Deserialize)]
        struct Wrap {
            f: QpFunction,
        }
        let text = toml::to_string(&Wrap { f: f.clone() }).unwrap();
        let back: Wrap = toml::from_str(&text).unwrap();
        assert_eq!(back.f, f);
    }

    #[test]
    fn primitive_stats_match_closed_form() {
        // a = d/dt [0.4·sin(2πθ₁)] along the flow: P(t) is exactly
        // 0.4·(sin(2πθ₁(t)) − sin(2πθ₁(0))), so every statistic is known.
        let flow = flow2();
        let shape = QpFunction::Trig(
            TrigPoly::new(
                2,
                0.0,
                vec![TrigTerm {
                    k: vec![1, 0],
                    amp_cos: 0.0,
                    amp_sin: 0.4,
                }],
            )
            .unwrap(),
        );
        let a = shape.derivative_along(&flow).unwrap();
        let p = BasePoint::new(vec![0.1, 0.6]).unwrap();
        let stats = primitive_stats(&a, &flow, &p, 50.0, 0.01).unwrap();
        let base = 0.4 * (std::f64::consts::TAU * 0.1).sin();
        // Horizon 50 covers many periods of θ₁, so sup ≈ 0.4 − base and
        // inf ≈ −0.4 − base.
        assert!((stats.sup_forward - (0.4 - base)).abs() < 1e-4);
        assert!((stats.inf_forward - (-0.4 - base)).abs() < 1e-4);
        assert!((stats.h_a_estimate - (-(0.4 - base)).exp()).abs() < 1e-4);
        assert!(!stats.step_refinement_warning);
    }

    #[test]
    fn primitive_envelope_is_monotone_in_horizon() {
        let flow = flow2();
        let a = sample_trig();
        let p = BasePoint::new(vec![0.25, 0.33]).unwrap();
        let mut prev = f64::INFINITY;
        for horizon in [5.0, 10.0, 20.0, 40.0] {
            let stats = primitive_stats(&a, &flow, &p, horizon, 0.05).unwrap();
            assert!(
                stats.h_a_estimate <= prev + 1e-12,
                "envelope grew at horizon {horizon}"
            );
            prev = stats.h_a_estimate;
        }
    }

    #[test]
    fn coarse_step_raises_refinement_warning() {
        // An oscillatory primitive (period ≈ 1.6) scanned at step 3 aliases
        // badly; the half-step re-scan must notice.
        let flow = flow2();
        let shape = QpFunction::Trig(
            TrigPoly::new(
                2,
                0.0,
                vec![TrigTerm {
                    k: vec![1, 0],
                    amp_cos: 0.0,
                    amp_sin: 0.4,
                }],
            )
            .unwrap(),
        );
        let a = shape.derivative_along(&flow).unwrap();
        let p = BasePoint::new(vec![0.0, 0.0]).unwrap();
        let stats = primitive_stats(&a, &flow, &p, 20.0, 3.0).unwrap();
        assert!(stats.step_refinement_warning);
    }
}
