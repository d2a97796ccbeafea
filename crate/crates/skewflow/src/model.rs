//! The scalar skew-product model
//!
//!     x' = a(ω·t)·x + b(ω·t) + g(ω·t, x),
//!
//! where g vanishes on a dead band [r₁, r₂] and pushes back toward the band
//! with a power law outside it. The band makes the dynamics linear wherever
//! the interesting structure lives, while the power-law tails guarantee a
//! bounded global attractor regardless of the coefficients.

use serde::{Deserialize, Serialize};

use crate::base_flow::{BasePoint, RotationFlow};
use crate::coefficients::{OrbitView, QpFunction};
use crate::error::{Error, Result};

/// Outside-band dissipation
///
///     g(ω, x) = κ(ω)·(r₁ − x)^p  for x < r₁,
///               0                 for x ∈ [r₁, r₂],
///               −κ(ω)·(x − r₂)^p  for x > r₂,
///
/// with p ≥ 2 and κ ≥ κ_min > 0. g is C¹ in x (p ≥ 2 kills the derivative
/// at the band edges, also when r₁ = r₂), g·sign pattern pushes into the
/// band, and g_x ≤ 0 everywhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissipationProfile {
    pub r1: f64,
    pub r2: f64,
    pub p: u32,
    pub kappa: QpFunction,
    /// Declared positive lower bound for κ; spot-checked at model build.
    pub kappa_min: f64,
}

impl DissipationProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.r1 <= self.r2) {
            return Err(Error::invalid("dissipation band needs r1 <= r2"));
        }
        if self.p < 2 {
            return Err(Error::invalid("dissipation exponent needs p >= 2"));
        }
        if !(self.kappa_min > 0.0) {
            return Err(Error::invalid("dissipation needs kappa_min > 0"));
        }
        self.kappa.validate()
    }

    /// g given the local κ value.
    pub fn g(&self, kappa: f64, x: f64) -> f64 {
        if x < self.r1 {
            kappa * (self.r1 - x).powi(self.p as i32)
        } else if x > self.r2 {
            -kappa * (x - self.r2).powi(self.p as i32)
        } else {
            0.0
        }
    }

    /// ∂g/∂x given the local κ value; ≤ 0 everywhere.
    pub fn g_x(&self, kappa: f64, x: f64) -> f64 {
        let p = self.p as f64;
        if x < self.r1 {
            -p * kappa * (self.r1 - x).powi(self.p as i32 - 1)
        } else if x > self.r2 {
            -p * kappa * (x - self.r2).powi(self.p as i32 - 1)
        } else {
            0.0
        }
    }
}

/// The full model: coefficients, dissipation, and the driving rotation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalarModel {
    pub flow: RotationFlow,
    pub a: QpFunction,
    pub b: QpFunction,
    pub dissipation: DissipationProfile,
}

impl ScalarModel {
    /// Validates dimensions and coefficient structure, and spot-checks the
    /// declared κ ≥ κ_min on a coarse grid — a modeling error worth failing
    /// on early rather than discovering as a wrong attractor.
    pub fn new(
        flow: RotationFlow,
        a: QpFunction,
        b: QpFunction,
        dissipation: DissipationProfile,
    ) -> Result<Self> {
        let d = flow.dim();
        a.validate()?;
        b.validate()?;
        dissipation.validate()?;
        if a.dim() != d || b.dim() != d || dissipation.kappa.dim() != d {
            return Err(Error::invalid("coefficient dimensions do not match the flow"));
        }
        let per_axis = match d {
            1 => 64,
            2 => 16,
            _ => 8,
        };
        for point in flow.uniform_grid(per_axis)? {
            let k = dissipation.kappa.eval(&point);
            if k < dissipation.kappa_min - 1e-12 {
                return Err(Error::invalid(format!(
                    "kappa at {:?} is {k}, below the declared minimum {}",
                    point.coords(),
                    dissipation.kappa_min
                )));
            }
        }
        Ok(ScalarModel {
            flow,
            a,
            b,
            dissipation,
        })
    }

    /// Right-hand side F(ω, x) and fiber derivative F_x(ω, x) = a(ω) + g_x.
    /// F_x ≤ a(ω) everywhere since g_x ≤ 0.
    pub fn field(&self, omega: &BasePoint, x: f64) -> (f64, f64) {
        let a = self.a.eval(omega);
        let b = self.b.eval(omega);
        let kappa = self.dissipation.kappa.eval(omega);
        (
            a * x + b + self.dissipation.g(kappa, x),
            a + self.dissipation.g_x(kappa, x),
        )
    }

    /// Certified absorbing radius: the smallest ρ on the 0.25-grid with
    ///
    ///     κ_min·(ρ − r₂)^p > sup(a)·ρ + sup(b)   (field negative at +ρ) and
    ///     κ_min·(ρ + r₁)^p > sup(a)·ρ − inf(b)   (field positive at −ρ),
    ///
    /// using the rigorous coefficient bounds, plus the margin. Every forward
    /// orbit enters [−ρ₀, ρ₀] and stays.
    pub fn rho0(&self, margin: f64) -> Result<f64> {
        if !(margin > 0.0) {
            return Err(Error::invalid("rho0 needs margin > 0"));
        }
        let ub_a = self.a.upper_bound();
        let ub_b = self.b.upper_bound();
        let lb_b = self.b.lower_bound();
        let km = self.dissipation.kappa_min;
        let p = self.dissipation.p as i32;
        let (r1, r2) = (self.dissipation.r1, self.dissipation.r2);
        let start = r2.max(-r1).max(0.0);
        let mut rho = (start / 0.25).floor() * 0.25 + 0.25;
        for _ in 0..400_000 {
            let above = rho > r2 && km * (rho - r2).powi(p) > ub_a * rho + ub_b;
            let below = -rho < r1 && km * (rho + r1).powi(p) > ub_a * rho - lb_b;
            if above && below {
                return Ok(rho + margin);
            }
            rho += 0.25;
        }
        Err(Error::Invariant(
            "absorbing radius search did not terminate".into(),
        ))
    }

    /// Restrict the model to the orbit of ω over [t_lo, t_hi]: all three
    /// coefficients as orbit views, ready for integration.
    pub fn on_orbit(&self, omega: &BasePoint, t_lo: f64, t_hi: f64) -> Result<ModelOrbit> {
        Ok(ModelOrbit {
            a: self.a.view(omega, &self.flow, t_lo, t_hi)?,
            b: self.b.view(omega, &self.flow, t_lo, t_hi)?,
            kappa: self.dissipation.kappa.view(omega, &self.flow, t_lo, t_hi)?,
            r1: self.dissipation.r1,
            r2: self.dissipation.r2,
            p: self.dissipation.p,
        })
    }
}

/// The model restricted to one orbit: t ↦ F(ω·t, x) and its x-derivative.
#[derive(Clone, Debug)]
pub struct ModelOrbit {
    pub a: OrbitView,
    pub b: OrbitView,
    pub kappa: OrbitView,
    r1: f64,
    r2: f64,
    p: u32,
}

impl ModelOrbit {
    pub fn band(&self) -> (f64, f64) {
        (self.r1, self.r2)
    }

    pub fn f(&self, t: f64, x: f64) -> f64 {
        self.f_pair(t, x).0
    }

    pub fn f_x(&self, t: f64, x: f64) -> f64 {
        self.f_pair(t, x).1
    }

    /// (F, F_x) with the coefficient views evaluated once.
    pub fn f_pair(&self, t: f64, x: f64) -> (f64, f64) {
        let a = self.a.eval(t);
        let b = self.b.eval(t);
        let p = self.p as i32;
        let (g, g_x) = if x < self.r1 {
            let k = self.kappa.eval(t);
            let s = self.r1 - x;
            (k * s.powi(p), -(p as f64) * k * s.powi(p - 1))
        } else if x > self.r2 {
            let k = self.kappa.eval(t);
            let s = x - self.r2;
            (-k * s.powi(p), -(p as f64) * k * s.powi(p - 1))
        } else {
            (0.0, 0.0)
        };
        (a * x + b + g, a + g_x)
    }
}
