//! Real trigonometric polynomials on the d-torus.
//!
//! Along an orbit ω·t every term becomes a sinusoid in t with rate 2π·k·ρ,
//! so both the restriction t ↦ f(ω·t) and its running integral have closed
//! forms; the integral is the exact-primitive oracle the rest of the library
//! leans on.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::base_flow::{BasePoint, RotationFlow};
use crate::error::{Error, Result};

/// One real Fourier mode: amp_cos·cos(2π k·θ) + amp_sin·sin(2π k·θ).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub k: Vec<i64>,
    pub amp_cos: f64,
    pub amp_sin: f64,
}

/// A finite real trigonometric polynomial; `constant` is the (cached) mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigPoly {
    dim: usize,
    constant: f64,
    terms: Vec<TrigTerm>,
}

impl TrigPoly {
    pub fn new(dim: usize, constant: f64, terms: Vec<TrigTerm>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("trig polynomial needs dimension >= 1"));
        }
        if !constant.is_finite() {
            return Err(Error::invalid("trig polynomial constant must be finite"));
        }
        for term in &terms {
            if term.k.len() != dim {
                return Err(Error::invalid(format!(
                    "wave vector {:?} does not match dimension {dim}",
                    term.k
                )));
            }
            if term.k.iter().all(|&k| k == 0) {
                return Err(Error::invalid(
                    "zero wave vector not allowed as a term; fold it into the constant",
                ));
            }
            if !term.amp_cos.is_finite() || !term.amp_sin.is_finite() {
                return Err(Error::invalid("trig amplitudes must be finite"));
            }
        }
        Ok(TrigPoly {
            dim,
            constant,
            terms,
        })
    }

    pub fn constant(dim: usize, c: f64) -> Result<Self> {
        TrigPoly::new(dim, c, Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[TrigTerm] {
        &self.terms
    }

    /// The mean over the torus: exactly the constant Fourier coefficient.
    pub fn mean(&self) -> f64 {
        self.constant
    }

    /// Rigorous bound for sup |f|: |constant| + Σ amplitude moduli.
    pub fn sup_bound(&self) -> f64 {
        self.constant.abs() + self.oscillation_bound()
    }

    /// Rigorous bound f ≤ constant + Σ amplitude moduli.
    pub fn upper_bound(&self) -> f64 {
        self.constant + self.oscillation_bound()
    }

    /// Rigorous bound f ≥ constant − Σ amplitude moduli.
    pub fn lower_bound(&self) -> f64 {
        self.constant - self.oscillation_bound()
    }

    fn oscillation_bound(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| t.amp_cos.hypot(t.amp_sin))
            .sum::<f64>()
    }

    pub fn eval(&self, omega: &BasePoint) -> f64 {
        debug_assert_eq!(omega.dim(), self.dim);
        let mut acc = self.constant;
        for term in &self.terms {
            let phase: f64 = TAU
                * term
                    .k
                    .iter()
                    .zip(omega.coords())
                    .map(|(&k, &c)| k as f64 * c)
                    .sum::<f64>();
            acc += term.amp_cos * phase.cos() + term.amp_sin * phase.sin();
        }
        acc
    }

    /// a(ω) = d/dt f(ω·t)|_{t=0} = ∇f(ω)·ρ, again a trig polynomial. The
    /// result admits `self` as a continuous primitive by construction.
    pub fn derivative_along(&self, flow: &RotationFlow) -> Result<TrigPoly> {
        if flow.dim() != self.dim {
            return Err(Error::invalid("flow dimension mismatch"));
        }
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let rate: f64 = TAU
                    * t.k
                        .iter()
                        .zip(flow.freqs())
                        .map(|(&k, &f)| k as f64 * f)
                        .sum::<f64>();
                // d/dt [ac·cos(φ+rt) + as·sin(φ+rt)] = −ac·r·sin + as·r·cos
                TrigTerm {
                    k: t.k.clone(),
                    amp_cos: t.amp_sin * rate,
                    amp_sin: -t.amp_cos * rate,
                }
            })
            .collect();
        TrigPoly::new(self.dim, 0.0, terms)
    }

    /// Precompute the restriction t ↦ f(ω·t).
    pub fn orbit_view(&self, omega: &BasePoint, flow: &RotationFlow) -> Result<TrigOrbitView> {
        if flow.dim() != self.dim || omega.dim() != self.dim {
            return Err(Error::invalid("dimension mismatch in orbit view"));
        }
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let phase: f64 = TAU
                    * t.k
                        .iter()
                        .zip(omega.coords())
                        .map(|(&k, &c)| k as f64 * c)
                        .sum::<f64>();
                let rate: f64 = TAU
                    * t.k
                        .iter()
                        .zip(flow.freqs())
                        .map(|(&k, &f)| k as f64 * f)
                        .sum::<f64>();
                ViewTerm {
                    rate,
                    phase,
                    amp_cos: t.amp_cos,
                    amp_sin: t.amp_sin,
                }
            })
            .collect();
        Ok(TrigOrbitView {
            constant: self.constant,
            terms,
        })
    }
}

#[derive(Clone, Debug)]
struct ViewTerm {
    rate: f64,
    phase: f64,
    amp_cos: f64,
    amp_sin: f64,
}

/// The restriction of a trig polynomial to one orbit: f(ω·t) as an explicit
/// almost-periodic function of t with exact running integral.
#[derive(Clone, Debug)]
pub struct TrigOrbitView {
    constant: f64,
    terms: Vec<ViewTerm>,
}

impl TrigOrbitView {
    pub fn eval(&self, t: f64) -> f64 {
        let mut acc = self.constant;
        for term in &self.terms {
            let arg = term.phase + term.rate * t;
            acc += term.amp_cos * arg.cos() + term.amp_sin * arg.sin();
        }
        acc
    }

    /// ∫₀ᵗ f(ω·s) ds in closed form.
    pub fn cumulative(&self, t: f64) -> f64 {
        let mut acc = self.constant * t;
        for term in &self.terms {
            if term.rate == 0.0 {
                // Resonant mode constant along this orbit.
                acc += (term.amp_cos * term.phase.cos() + term.amp_sin * term.phase.sin()) * t;
            } else {
                let arg = term.phase + term.rate * t;
                acc += term.amp_cos * (arg.sin() - term.phase.sin()) / term.rate;
                acc += term.amp_sin * (term.phase.cos() - arg.cos()) / term.rate;
            }
        }
        acc
    }

    /// Shortest oscillation period among the modes, if any mode moves.
    pub fn min_period(&self) -> Option<f64> {
        self.terms
            .iter()
            .filter(|t| t.rate != 0.0)
            .map(|t| TAU / t.rate.abs())
            .min_by(|a, b| a.partial_cmp(b).unwrap())
    }
}
