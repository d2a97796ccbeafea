//! Minimal base flow: rotations on the d-torus.
//!
//! The driving dynamics is the linear flow ω·t = ω + tρ (mod 1) on T^d. For
//! rationally independent (1, ρ₁, …, ρ_d) the flow is minimal and uniquely
//! ergodic with Lebesgue-Haar as its only invariant measure, which is what
//! makes Birkhoff averages along a single orbit trustworthy estimates of
//! space averages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reduce an angle to [0, 1).
#[inline]
pub fn wrap_unit(x: f64) -> f64 {
    let y = x - x.floor();
    // x slightly below an integer can round the difference up to exactly 1.0.
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

/// A point ω on the d-torus; every coordinate lies in [0, 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasePoint {
    coords: Vec<f64>,
}

impl BasePoint {
    /// Build a point from arbitrary finite angles; coordinates are wrapped.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("base point needs d >= 1 coordinates"));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("base point coordinates must be finite"));
        }
        Ok(BasePoint {
            coords: coords.into_iter().map(wrap_unit).collect(),
        })
    }

    /// The origin of T^d.
    pub fn origin(d: usize) -> Self {
        BasePoint {
            coords: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Distance to another point in the flat torus metric (euclidean over
    /// per-coordinate circle distances).
    pub fn torus_distance(&self, other: &BasePoint) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| {
                let d = wrap_unit(a - b);
                let d = d.min(1.0 - d);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Certificate returned by [`RotationFlow::check_minimality`].
///
/// `worst_k`/`worst_k0` describe the integer relation k0 + k·ρ with the
/// smallest residual found in the search box; `minimal` is false when that
/// residual is below the tolerance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MinimalityCertificate {
    pub minimal: bool,
    pub k_max: i64,
    pub tol: f64,
    pub worst_k: Vec<i64>,
    pub worst_k0: i64,
    pub worst_residual: f64,
}

/// The linear flow σ_t(ω) = ω + tρ mod 1 on the d-torus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationFlow {
    freqs: Vec<f64>,
}

impl RotationFlow {
    pub fn new(freqs: Vec<f64>) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::invalid("rotation flow needs d >= 1 frequencies"));
        }
        if freqs.iter().any(|f| !f.is_finite()) {
            return Err(Error::invalid("frequencies must be finite"));
        }
        Ok(RotationFlow { freqs })
    }

    pub fn dim(&self) -> usize {
        self.freqs.len()
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    /// Euclidean speed |ρ| of the orbit through the torus.
    pub fn speed(&self) -> f64 {
        self.freqs.iter().map(|f| f * f).sum::<f64>().sqrt()
    }

    /// ω·t, computed in one step from the stored point (never iterated), so
    /// long-horizon drift is a single rounding of t·ρ per coordinate.
    pub fn advance(&self, omega: &BasePoint, t: f64) -> BasePoint {
        debug_assert_eq!(omega.dim(), self.dim());
        BasePoint {
            coords: omega
                .coords
                .iter()
                .zip(&self.freqs)
                .map(|(c, f)| wrap_unit(c + t * f))
                .collect(),
        }
    }

    /// Search integer vectors 0 < |k|∞ ≤ K_max (and the implied k0 =
    /// −round(k·ρ), also restricted to |k0| ≤ K_max) for relations
    /// k0 + k·ρ ≈ 0. The flow is minimal exactly when no such relation exists.
    pub fn check_minimality(&self, k_max: i64, tol: f64) -> MinimalityCertificate {
        let d = self.dim();
        let mut worst_residual = f64::INFINITY;
        let mut worst_k = vec![0i64; d];
        let mut worst_k0 = 0i64;

        // Odometer over the box [-K, K]^d ordered by |k|∞ so the reported
        // witness is a smallest offending relation.
        for radius in 1..=k_max {
            let mut k = vec![-radius; d];
            loop {
                if k.iter().map(|v| v.abs()).max() == Some(radius) {
                    // Canonical sign: first nonzero entry positive.
                    if k.iter().find(|&&v| v != 0).map_or(false, |&v| v > 0) {
                        let dot: f64 = k
                            .iter()
                            .zip(&self.freqs)
                            .map(|(&ki, &fi)| ki as f64 * fi)
                            .sum();
                        let k0 = -dot.round();
                        if k0.abs() <= k_max as f64 {
                            let residual = (k0 + dot).abs();
                            if residual < worst_residual {
                                worst_residual = residual;
                                worst_k.copy_from_slice(&k);
                                worst_k0 = k0 as i64;
                            }
                        }
                    }
                }
                // Advance the odometer; break when it wraps.
                let mut i = 0;
                loop {
                    if i == d {
                        break;
                    }
                    k[i] += 1;
                    if k[i] > radius {
                        k[i] = -radius;
                        i += 1;
                    } else {
                        break;
                    }
                }
                if i == d {
                    break;
                }
            }
            // A found relation cannot be beaten by larger radii in any way
            // that matters for the verdict; stop early once below tolerance.
            if worst_residual < tol {
                break;
            }
        }

        MinimalityCertificate {
            minimal: worst_residual >= tol,
            k_max,
            tol,
            worst_k,
            worst_k0,
            worst_residual,
        }
    }

    /// Like [`check_minimality`] but turning failure into an error, for
    /// constructions that require a minimal base.
    pub fn require_minimal(&self, k_max: i64, tol: f64) -> Result<MinimalityCertificate> {
        let cert = self.check_minimality(k_max, tol);
        if cert.minimal {
            Ok(cert)
        } else {
            Err(Error::NotMinimal {
                k0: cert.worst_k0,
                k: cert.worst_k.clone(),
                residual: cert.worst_residual,
            })
        }
    }

    /// Uniform n-per-axis product grid on the torus (n^d points, includes the
    /// origin). Ordering is row-major in the last coordinate fastest.
    pub fn uniform_grid(&self, n_per_axis: usize) -> Result<Vec<BasePoint>> {
        if n_per_axis == 0 {
            return Err(Error::invalid("grid needs n_per_axis >= 1"));
        }
        let d = self.dim();
        let total = n_per_axis
            .checked_pow(d as u32)
            .ok_or_else(|| Error::invalid("grid size overflows"))?;
        let mut grid = Vec::with_capacity(total);
        let mut idx = vec![0usize; d];
        loop {
            grid.push(BasePoint {
                coords: idx.iter().map(|&i| i as f64 / n_per_axis as f64).collect(),
            });
            let mut i = d;
            loop {
                if i == 0 {
                    return Ok(grid);
                }
                i -= 1;
                idx[i] += 1;
                if idx[i] < n_per_axis {
                    break;
                }
                idx[i] = 0;
                if i == 0 {
                    return Ok(grid);
                }
            }
        }
    }
}

/// (1/T)·∫₀ᵀ f(ω·s) ds by composite Simpson with the given step (the step is
/// shrunk so an even number of intervals covers [0, T] exactly).
///
/// For minimal rotations this converges to ∫ f dm as T grows (unique
/// ergodicity); the quadrature error itself is O(step⁴) for smooth f.
pub fn birkhoff_average<F>(
    f: F,
    omega: &BasePoint,
    flow: &RotationFlow,
    horizon: f64,
    step: f64,
) -> Result<f64>
where
    F: Fn(&BasePoint) -> f64,
{
    if !(horizon > 0.0) {
        return Err(Error::invalid("birkhoff_average needs horizon > 0"));
    }
    if !(step > 0.0) {
        return Err(Error::invalid("birkhoff_average needs step > 0"));
    }
    let n_half = ((horizon / (2.0 * step)).ceil() as usize).max(1);
    let n = 2 * n_half;
    let h = horizon / n as f64;
    let eval = |i: usize| -> Result<f64> {
        let v = f(&flow.advance(omega, i as f64 * h));
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!(
                "birkhoff_average integrand at t = {}",
                i as f64 * h
            )))
        }
    };
    let mut acc = eval(0)? + eval(n)?;
    for i in 1..n {
        acc += eval(i)? * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    Ok(acc * h / 3.0 / horizon)
}
