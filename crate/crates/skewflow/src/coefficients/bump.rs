//! Bump-series coefficients: the constructive class with zero mean, no
//! continuous primitive, and backward primitives bounded on a full-measure
//! set but unbounded along one excluded orbit.
//!
//! Each term is a Urysohn-style tube function c_n around the anchor orbit
//! segment {ω₀·s : s ∈ [0, T_n]}, and the coefficient is
//!
//!     a(ω) = −Σ_n λ_n · (c_n(ω·T_n) − c_n(ω)) / T_n,
//!
//! whose running integral telescopes to −Σ λ_n (h_n(ω·t) − h_n(ω)) with
//! h_n(ω) = (1/T_n)·∫₀^{T_n} c_n(ω·s) ds ∈ [0, 1] and h_n(ω₀) = 1.
//!
//! Because the tubes are razor-thin for large n, generic quadrature cannot
//! see them. The machinery here is exact instead: along any orbit the tube
//! distance is piecewise described by lattice "passes" (the orbit line runs
//! parallel to the anchor segment, so each near-miss produces a plateau of
//! duration exactly T_n flanked by two short ramps), and c_n along the orbit
//! is the upper envelope of the per-pass profiles. All breakpoints
//! (ramp edges, plateau edges, pairwise envelope crossings) have closed
//! forms, and the running integral is assembled per smooth piece with
//! Gauss-Legendre panels, giving machine-accurate primitives over windows of
//! millions of time units.

use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use crate::base_flow::{wrap_unit, BasePoint, MinimalityCertificate, RotationFlow};
use crate::error::{Error, Result};

const MAX_DIM: usize = 8;

/// Profile (1 − s)₊^q.
#[inline]
fn profile(s: f64, q: u32) -> f64 {
    if s >= 1.0 {
        0.0
    } else {
        (1.0 - s).powi(q as i32)
    }
}

/// One tube term of the series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpTerm {
    /// Anchor ω₀ of the orbit segment the tube surrounds.
    pub anchor: Vec<f64>,
    /// Segment length T_n in time units.
    pub t_n: f64,
    /// Tube radius δ_n in torus distance.
    pub delta: f64,
    /// Series weight λ_n (applied with the −1/T_n factor in the assembly).
    pub weight: f64,
    /// Profile exponent q ≥ 1.
    pub q: u32,
}

/// The assembled coefficient a = −Σ λ_n·(c_n(ω·T_n) − c_n(ω))/T_n.
///
/// The frequency vector the tubes were built along is stored with the terms:
/// tube geometry is meaningless under any other flow, and consumers must use
/// a matching rotation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpSeries {
    pub freqs: Vec<f64>,
    pub terms: Vec<BumpTerm>,
}

// ---------------------------------------------------------------------------
// Gauss-Legendre nodes (computed once; deterministic).
// ---------------------------------------------------------------------------

fn legendre_value_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// 16-point Gauss-Legendre rule on [-1, 1]: (nodes, weights).
fn gl16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = 16usize;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..60 {
                let (p, d) = legendre_value_deriv(n, x);
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_value_deriv(n, x);
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * d * d);
        }
        (nodes, weights)
    })
}

/// ∫ profile(√(r² + v²x²)/δ) dx over [x_lo, x_hi] with 0 ≤ x_lo ≤ x_hi.
///
/// The integrand is analytic except for a curvature spike at x ≈ r/v, so the
/// panels are refined geometrically around that scale.
fn integrate_radial(r: f64, v: f64, delta: f64, q: u32, x_lo: f64, x_hi: f64) -> f64 {
    if x_hi <= x_lo {
        return 0.0;
    }
    let (nodes, weights) = gl16();
    let mut cuts = vec![x_lo, x_hi];
    if r > 0.0 {
        let scale = r / v;
        let mut c = 0.5 * scale;
        while c < x_hi {
            if c > x_lo {
                cuts.push(c);
            }
            c *= 4.0;
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut acc = 0.0;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        let mut panel = 0.0;
        for (x, wt) in nodes.iter().zip(weights) {
            let u = mid + half * x;
            let d = (r * r + v * v * u * u).sqrt();
            panel += wt * profile(d / delta, q);
        }
        acc += panel * half;
    }
    acc
}

// ---------------------------------------------------------------------------
// Passes: lattice near-misses of the orbit line against one tube.
// ---------------------------------------------------------------------------

/// A lattice copy of the anchor segment near the lifted orbit line. For
/// orbit parameter s the tube distance is r on the plateau [s0, s0 + T_n]
/// and √(r² + v²·off²) on the ramps (off = distance of s from the plateau).
#[derive(Clone, Copy, Debug)]
struct Pass {
    s0: f64,
    r: f64,
}

/// Enumerate all passes whose support intersects [eval_lo, eval_hi].
///
/// Walks the closest-approach parameter in steps of 0.45/|ρ| Euclidean
/// displacement; the nearest lattice copy at each sample is found by
/// per-coordinate rounding, which cannot miss a pass because any copy within
/// the tube radius is within 0.26 of some sample, well under the rounding
/// cell's half-width.
fn scan_passes(
    vdiff: &[f64],
    freqs: &[f64],
    speed: f64,
    t_n: f64,
    delta: f64,
    eval_lo: f64,
    eval_hi: f64,
) -> Vec<Pass> {
    let d = freqs.len();
    debug_assert!(d <= MAX_DIM);
    let w_max = delta / speed;
    let tau_lo = eval_lo - t_n - w_max - 1.0;
    let tau_hi = eval_hi + w_max + 1.0;
    let step = 0.45 / speed;
    let n_steps = ((tau_hi - tau_lo) / step).ceil() as usize + 1;

    let speed2 = speed * speed;
    let mut hits: Vec<([i64; MAX_DIM], f64, f64)> = Vec::new();
    let mut last_m: Option<[i64; MAX_DIM]> = None;

    for k in 0..=n_steps {
        let tau = tau_lo + k as f64 * step;
        let mut m = [0i64; MAX_DIM];
        let mut e = [0.0f64; MAX_DIM];
        for i in 0..d {
            let di = vdiff[i] + tau * freqs[i];
            let mi = di.round();
            m[i] = mi as i64;
            e[i] = di - mi;
        }
        if last_m == Some(m) {
            continue;
        }
        let mut edot = 0.0;
        let mut e2 = 0.0;
        for i in 0..d {
            edot += e[i] * freqs[i];
            e2 += e[i] * e[i];
        }
        let r2 = (e2 - edot * edot / speed2).max(0.0);
        if r2 < delta * delta {
            let s0 = tau - edot / speed2;
            if s0 >= tau_lo - 1.0 && s0 <= tau_hi + 1.0 {
                hits.push((m, s0, r2.sqrt()));
                last_m = Some(m);
            }
        }
    }

    // Deduplicate by lattice vector (the same copy is seen at every sample
    // along its plateau), then order by plateau start and cull passes whose
    // support misses the evaluation window.
    hits.sort_by(|a, b| a.0.cmp(&b.0));
    hits.dedup_by(|a, b| a.0 == b.0);
    let mut passes: Vec<Pass> = hits
        .into_iter()
        .map(|(_, s0, r)| Pass { s0, r })
        .filter(|p| {
            let w = ((delta * delta - p.r * p.r).max(0.0)).sqrt() / speed;
            p.s0 + t_n + w > eval_lo && p.s0 - w < eval_hi
        })
        .collect();
    passes.sort_by(|a, b| a.s0.partial_cmp(&b.s0).unwrap());
    passes
}

// ---------------------------------------------------------------------------
// Per-term trace: the upper envelope of pass profiles along the orbit.
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
struct TermTrace {
    t_n: f64,
    delta: f64,
    q: u32,
    speed: f64,
    lo: f64,
    hi: f64,
    passes: Vec<Pass>,
    /// Segment starts (sorted); segment i spans [seg_lo[i], seg_lo[i+1]).
    seg_lo: Vec<f64>,
    /// Active pass per segment (-1: c ≡ 0 there).
    seg_pass: Vec<i32>,
    /// ∫ c from `lo` to seg_lo[i].
    seg_cum: Vec<f64>,
    cum_hi: f64,
}

#[derive(Clone, Copy, PartialEq)]
enum Piece {
    InRamp,
    Plateau,
    OutRamp,
}

impl TermTrace {
    fn pass_w(&self, p: &Pass) -> f64 {
        ((self.delta * self.delta - p.r * p.r).max(0.0)).sqrt() / self.speed
    }

    fn piece_at(&self, p: &Pass, s: f64) -> (Piece, f64) {
        if s < p.s0 {
            (Piece::InRamp, p.s0 - s)
        } else if s > p.s0 + self.t_n {
            (Piece::OutRamp, s - p.s0 - self.t_n)
        } else {
            (Piece::Plateau, 0.0)
        }
    }

    fn dist_at(&self, p: &Pass, s: f64) -> f64 {
        let (_, off) = self.piece_at(p, s);
        (p.r * p.r + self.speed * self.speed * off * off).sqrt()
    }

    fn c_of_pass(&self, p: &Pass, s: f64) -> f64 {
        profile(self.dist_at(p, s) / self.delta, self.q)
    }

    fn new(passes: Vec<Pass>, lo: f64, hi: f64, t_n: f64, delta: f64, q: u32, speed: f64) -> Self {
        let mut trace = TermTrace {
            t_n,
            delta,
            q,
            speed,
            lo,
            hi,
            passes,
            seg_lo: Vec::new(),
            seg_pass: Vec::new(),
            seg_cum: Vec::new(),
            cum_hi: 0.0,
        };
        trace.build_envelope();
        trace.build_cumulative();
        trace
    }

    fn build_envelope(&mut self) {
        let mut cuts: Vec<f64> = vec![self.lo, self.hi];
        let n = self.passes.len();
        let push = |cuts: &mut Vec<f64>, x: f64| {
            if x > self.lo && x < self.hi {
                cuts.push(x);
            }
        };
        for i in 0..n {
            let p = self.passes[i];
            let w = self.pass_w(&p);
            push(&mut cuts, p.s0 - w);
            push(&mut cuts, p.s0);
            push(&mut cuts, p.s0 + self.t_n);
            push(&mut cuts, p.s0 + self.t_n + w);
        }
        // Pairwise envelope crossings among overlapping passes.
        let w_cap = self.delta / self.speed;
        for i in 0..n {
            let pi = self.passes[i];
            let wi = self.pass_w(&pi);
            let (ai, ei) = (pi.s0 - wi, pi.s0 + self.t_n + wi);
            for j in (i + 1)..n {
                let pj = self.passes[j];
                if pj.s0 - w_cap > ei {
                    break;
                }
                let wj = self.pass_w(&pj);
                let (aj, ej) = (pj.s0 - wj, pj.s0 + self.t_n + wj);
                let olo = ai.max(aj);
                let ohi = ei.min(ej);
                if ohi <= olo {
                    continue;
                }
                // Split the overlap at the passes' internal boundaries so
                // both distances are single quadratic/constant pieces.
                let mut bounds = vec![olo, ohi];
                for b in [
                    pi.s0,
                    pi.s0 + self.t_n,
                    pj.s0,
                    pj.s0 + self.t_n,
                ] {
                    if b > olo && b < ohi {
                        bounds.push(b);
                    }
                }
                bounds.sort_by(|a, b| a.partial_cmp(b).unwrap());
                for cell in bounds.windows(2) {
                    let (clo, chi) = (cell[0], cell[1]);
                    if chi <= clo {
                        continue;
                    }
                    let mid = 0.5 * (clo + chi);
                    let (ki, oi) = self.piece_at(&pi, mid);
                    let (kj, oj) = self.piece_at(&pj, mid);
                    let _ = (oi, oj);
                    let center = |p: &Pass, k: Piece| match k {
                        Piece::InRamp => Some(p.s0),
                        Piece::OutRamp => Some(p.s0 + self.t_n),
                        Piece::Plateau => None,
                    };
                    let v2 = self.speed * self.speed;
                    let roots: Vec<f64> = match (center(&pi, ki), center(&pj, kj)) {
                        (None, None) => Vec::new(),
                        (None, Some(sj)) => {
                            let rhs = (pi.r * pi.r - pj.r * pj.r) / v2;
                            if rhs >= 0.0 {
                                let d = rhs.sqrt();
                                vec![sj - d, sj + d]
                            } else {
                                Vec::new()
                            }
                        }
                        (Some(si), None) => {
                            let rhs = (pj.r * pj.r - pi.r * pi.r) / v2;
                            if rhs >= 0.0 {
                                let d = rhs.sqrt();
                                vec![si - d, si + d]
                            } else {
                                Vec::new()
                            }
                        }
                        (Some(si), Some(sj)) => {
                            if si == sj {
                                Vec::new()
                            } else {
                                vec![
                                    0.5 * (si + sj)
                                        + (pj.r * pj.r - pi.r * pi.r)
                                            / (2.0 * v2 * (sj - si)),
                                ]
                            }
                        }
                    };
                    for root in roots {
                        if root > clo && root < chi {
                            push(&mut cuts, root);
                        }
                    }
                }
            }
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-11 * (1.0 + a.abs()));

        // Assign the argmax pass per segment by midpoint evaluation: with all
        // crossings in the cut set, the winner is constant on each segment.
        let w_cap = self.delta / self.speed;
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if hi <= lo {
                continue;
            }
            let mid = 0.5 * (lo + hi);
            let from = self
                .passes
                .partition_point(|p| p.s0 < mid - self.t_n - w_cap);
            let mut best = -1i32;
            let mut best_c = 0.0f64;
            for (idx, p) in self.passes.iter().enumerate().skip(from) {
                if p.s0 > mid + w_cap {
                    break;
                }
                let c = self.c_of_pass(p, mid);
                if c > best_c {
                    best_c = c;
                    best = idx as i32;
                }
            }
            self.seg_lo.push(lo);
            self.seg_pass.push(best);
        }
        if self.seg_lo.is_empty() {
            self.seg_lo.push(self.lo);
            self.seg_pass.push(-1);
        }
    }

    /// Integral of the envelope over [seg start, s] for one segment.
    fn piece_integral(&self, seg: usize, s_from: f64, s_to: f64) -> f64 {
        if s_to <= s_from {
            return 0.0;
        }
        let pid = self.seg_pass[seg];
        if pid < 0 {
            return 0.0;
        }
        let p = self.passes[pid as usize];
        let mid = 0.5 * (s_from + s_to);
        match self.piece_at(&p, mid).0 {
            Piece::Plateau => profile(p.r / self.delta, self.q) * (s_to - s_from),
            Piece::InRamp => integrate_radial(
                p.r,
                self.speed,
                self.delta,
                self.q,
                p.s0 - s_to,
                p.s0 - s_from,
            ),
            Piece::OutRamp => {
                let c = p.s0 + self.t_n;
                integrate_radial(p.r, self.speed, self.delta, self.q, s_from - c, s_to - c)
            }
        }
    }

    fn build_cumulative(&mut self) {
        let n = self.seg_lo.len();
        self.seg_cum = Vec::with_capacity(n);
        let mut acc = 0.0f64;
        let mut comp = 0.0f64; // Kahan compensation
        for i in 0..n {
            self.seg_cum.push(acc);
            let hi = if i + 1 < n { self.seg_lo[i + 1] } else { self.hi };
            let x = self.piece_integral(i, self.seg_lo[i], hi) - comp;
            let t = acc + x;
            comp = (t - acc) - x;
            acc = t;
        }
        self.cum_hi = acc;
    }

    fn seg_index(&self, s: f64) -> usize {
        self.seg_lo.partition_point(|&x| x <= s).saturating_sub(1)
    }

    /// c_n(ω·s).
    fn c(&self, s: f64) -> f64 {
        debug_assert!(
            s >= self.lo - 1e-9 && s <= self.hi + 1e-9,
            "trace query {s} outside [{}, {}]",
            self.lo,
            self.hi
        );
        let seg = self.seg_index(s);
        let pid = self.seg_pass[seg];
        if pid < 0 {
            0.0
        } else {
            self.c_of_pass(&self.passes[pid as usize], s)
        }
    }

    /// ∫ c over [lo, s].
    fn cum(&self, s: f64) -> f64 {
        let s = s.clamp(self.lo, self.hi);
        let seg = self.seg_index(s);
        self.seg_cum[seg] + self.piece_integral(seg, self.seg_lo[seg], s)
    }

    /// Segment boundaries (the breakpoints of the envelope).
    fn breakpoints(&self) -> &[f64] {
        &self.seg_lo
    }
}

// ---------------------------------------------------------------------------
// Orbit view of the full series.
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
struct TermOrbit {
    lambda: f64,
    t_n: f64,
    trace: TermTrace,
    /// ∫₀^{T_n} c_n(ω·s) ds, i.e. T_n·h_n(ω), cached for the primitive.
    h0_t: f64,
}

/// The restriction of a bump series to one orbit over [t_lo, t_hi], with the
/// exact running integral of a and the exact per-term h_n along the orbit.
#[derive(Clone, Debug)]
pub struct BumpOrbitView {
    t_lo: f64,
    t_hi: f64,
    has_origin: bool,
    terms: Vec<TermOrbit>,
}

impl BumpOrbitView {
    pub fn range(&self) -> (f64, f64) {
        (self.t_lo, self.t_hi)
    }

    /// a(ω·t).
    pub fn eval(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for term in &self.terms {
            acc -= term.lambda / term.t_n * (term.trace.c(t + term.t_n) - term.trace.c(t));
        }
        acc
    }

    /// ∫_{t1}^{t2} a(ω·s) ds, exact up to the Gauss-Legendre panels.
    pub fn cumulative_between(&self, t1: f64, t2: f64) -> f64 {
        let mut acc = 0.0;
        for term in &self.terms {
            let h2 = term.trace.cum(t2 + term.t_n) - term.trace.cum(t2);
            let h1 = term.trace.cum(t1 + term.t_n) - term.trace.cum(t1);
            acc -= term.lambda / term.t_n * (h2 - h1);
        }
        acc
    }

    /// ∫₀ᵗ a(ω·s) ds. Requires 0 ∈ [t_lo, t_hi].
    pub fn cumulative(&self, t: f64) -> f64 {
        debug_assert!(self.has_origin, "cumulative anchored at 0 needs 0 in range");
        let mut acc = 0.0;
        for term in &self.terms {
            let ht = term.trace.cum(t + term.t_n) - term.trace.cum(t);
            acc -= term.lambda / term.t_n * (ht - term.h0_t);
        }
        acc
    }

    /// h_n(ω·t) ∈ [0, 1] for one term.
    pub fn h_term(&self, n: usize, t: f64) -> f64 {
        let term = &self.terms[n];
        (term.trace.cum(t + term.t_n) - term.trace.cum(t)) / term.t_n
    }

    /// Σ λ_n·h_n(ω·t): the weighted primitive-height along the orbit.
    pub fn h_weighted(&self, t: f64) -> f64 {
        (0..self.terms.len())
            .map(|n| self.terms[n].lambda * self.h_term(n, t))
            .sum()
    }

    /// Breakpoints of a(ω·t) inside [t_lo, t_hi] (ramp and plateau edges of
    /// both the direct and the T_n-shifted tube traces), sorted.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts = Vec::new();
        for term in &self.terms {
            for &s in term.trace.breakpoints() {
                if s > self.t_lo && s < self.t_hi {
                    pts.push(s);
                }
                let shifted = s - term.t_n;
                if shifted > self.t_lo && shifted < self.t_hi {
                    pts.push(shifted);
                }
            }
        }
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-11 * (1.0 + a.abs()));
        pts
    }
}

impl BumpSeries {
    pub fn dim(&self) -> usize {
        self.freqs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || d > MAX_DIM {
            return Err(Error::invalid("bump series needs 1 <= d <= 8"));
        }
        if self.freqs.iter().any(|f| !f.is_finite()) || self.speed() == 0.0 {
            return Err(Error::invalid("bump series needs finite, nonzero frequencies"));
        }
        for (i, t) in self.terms.iter().enumerate() {
            if t.anchor.len() != d {
                return Err(Error::invalid(format!("term {i}: anchor dimension mismatch")));
            }
            if !(t.t_n > 0.0) || !(t.delta > 0.0) || !(t.weight >= 0.0) || t.q < 1 {
                return Err(Error::invalid(format!(
                    "term {i}: needs T_n > 0, delta > 0, weight >= 0, q >= 1"
                )));
            }
            if t.delta >= 0.5 {
                return Err(Error::invalid(format!(
                    "term {i}: tube radius {} too large for the torus",
                    t.delta
                )));
            }
        }
        Ok(())
    }

    pub fn speed(&self) -> f64 {
        self.freqs.iter().map(|f| f * f).sum::<f64>().sqrt()
    }

    /// The mean of the series is exactly zero: every b_n is a difference of
    /// the invariant-measure-preserving shift of c_n by T_n, so its integral
    /// telescopes away.
    pub fn mean(&self) -> f64 {
        0.0
    }

    /// Rigorous sup bound: |a| ≤ Σ λ_n/T_n·sup|c_n(·T_n) − c_n| ≤ Σ λ_n/T_n.
    pub fn sup_bound(&self) -> f64 {
        self.terms.iter().map(|t| t.weight / t.t_n).sum()
    }

    /// Rigorous upper bound (the series is symmetric: ±Σ λ_n/T_n).
    pub fn upper_bound(&self) -> f64 {
        self.sup_bound()
    }

    pub fn lower_bound(&self) -> f64 {
        -self.sup_bound()
    }

    /// Pointwise tube function c_n(ω) of one term: profile of the torus
    /// distance from ω to the anchor segment, by closest-approach scan along
    /// the segment.
    pub fn c_eval(&self, term: usize, omega: &BasePoint) -> f64 {
        let t = &self.terms[term];
        let d = self.dim();
        let speed = self.speed();
        let speed2 = speed * speed;
        let step = 0.45 / speed;
        let n_steps = (t.t_n / step).ceil() as usize + 1;
        let mut best_d2 = f64::INFINITY;
        for k in 0..=n_steps {
            let w = (k as f64 * step).min(t.t_n);
            let mut e = [0.0f64; MAX_DIM];
            for i in 0..d {
                let di = omega.coords()[i] - t.anchor[i] - w * self.freqs[i];
                e[i] = di - di.round();
            }
            let mut edot = 0.0;
            let mut e2 = 0.0;
            for i in 0..d {
                edot += e[i] * self.freqs[i];
                e2 += e[i] * e[i];
            }
            let r2 = (e2 - edot * edot / speed2).max(0.0);
            // Local minimizer along the segment parameter, clamped to [0, T].
            let w_star = w + edot / speed2;
            let excess = if w_star < 0.0 {
                -w_star
            } else if w_star > t.t_n {
                w_star - t.t_n
            } else {
                0.0
            };
            let d2 = r2 + speed2 * excess * excess;
            if d2 < best_d2 {
                best_d2 = d2;
            }
        }
        profile(best_d2.sqrt() / t.delta, t.q)
    }

    /// a(ω) pointwise. Prefer [`BumpSeries::view`] in hot loops.
    pub fn eval(&self, omega: &BasePoint) -> f64 {
        let mut acc = 0.0;
        for (n, t) in self.terms.iter().enumerate() {
            let advanced = BasePoint::new(
                omega
                    .coords()
                    .iter()
                    .zip(&self.freqs)
                    .map(|(c, f)| wrap_unit(c + t.t_n * f))
                    .collect(),
            )
            .expect("advance of a valid point");
            acc -= t.weight / t.t_n * (self.c_eval(n, &advanced) - self.c_eval(n, omega));
        }
        acc
    }

    /// Build the exact orbit restriction over [t_lo, t_hi].
    pub fn view(&self, omega: &BasePoint, t_lo: f64, t_hi: f64) -> Result<BumpOrbitView> {
        if omega.dim() != self.dim() {
            return Err(Error::invalid("dimension mismatch in bump view"));
        }
        if !(t_hi >= t_lo) {
            return Err(Error::invalid("bump view needs t_hi >= t_lo"));
        }
        let speed = self.speed();
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let vdiff: Vec<f64> = omega
                    .coords()
                    .iter()
                    .zip(&t.anchor)
                    .map(|(c, a)| c - a)
                    .collect();
                // c_n is needed on [t_lo, t_hi + T_n] (direct + shifted copy).
                let lo = t_lo;
                let hi = t_hi + t.t_n;
                let passes = scan_passes(&vdiff, &self.freqs, speed, t.t_n, t.delta, lo, hi);
                let trace = TermTrace::new(passes, lo, hi, t.t_n, t.delta, t.q, speed);
                let h0_t = if t_lo <= 0.0 && t_hi >= 0.0 {
                    trace.cum(t.t_n) - trace.cum(0.0)
                } else {
                    0.0
                };
                TermOrbit {
                    lambda: t.weight,
                    t_n: t.t_n,
                    trace,
                    h0_t,
                }
            })
            .collect();
        Ok(BumpOrbitView {
            t_lo,
            t_hi,
            has_origin: t_lo <= 0.0 && t_hi >= 0.0,
            terms,
        })
    }
}

// ---------------------------------------------------------------------------
// Mass bounds and the budgeted builder.
// ---------------------------------------------------------------------------

/// Upper bound for ∫ c dm for a tube of radius δ and profile exponent q
/// around a curve of length L in T^d (subadditive over self-overlaps, so
/// always an upper bound). In d = 1 the "tube" contains the segment itself,
/// which already has positive measure — the reason the construction needs
/// d ≥ 2.
pub fn tube_mass_bound(d: usize, curve_len: f64, delta: f64, q: u32) -> Result<f64> {
    let qf = q as f64;
    let bound = match d {
        1 => curve_len.min(1.0) + 2.0 * delta / (qf + 1.0),
        2 => curve_len * 2.0 * delta / (qf + 1.0) + std::f64::consts::PI * delta * delta,
        3 => {
            curve_len * 2.0 * std::f64::consts::PI * delta * delta / ((qf + 1.0) * (qf + 2.0))
                + 4.0 / 3.0 * std::f64::consts::PI * delta.powi(3)
        }
        _ => {
            return Err(Error::invalid(
                "tube mass bound implemented for d <= 3 (build in d = 2 or 3)",
            ))
        }
    };
    Ok(bound.min(1.0))
}

/// Options for [`build_rm_coefficient`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RmOptions {
    pub n_terms: usize,
    /// Mass budgets ε_n; default 2^{-n}.
    pub epsilons: Option<Vec<f64>>,
    /// Segment lengths T_n; default 2/ε_n (the minimum the construction
    /// allows). Longer segments spread the primitive growth across horizons.
    pub segment_times: Option<Vec<f64>>,
    /// Weights λ_n; default 1.
    pub weights: Option<Vec<f64>>,
    /// Optional hard caps on the tube radii (below the budget-derived radii).
    pub delta_caps: Option<Vec<f64>>,
    /// Profile exponent; default 2.
    pub q: u32,
    /// Fraction of the budget left unused by the radius search; default 0.1.
    pub slack: f64,
    pub bisect_iters: u32,
    pub k_max: i64,
    pub minimality_tol: f64,
}

impl Default for RmOptions {
    fn default() -> Self {
        RmOptions {
            n_terms: 6,
            epsilons: None,
            segment_times: None,
            weights: None,
            delta_caps: None,
            q: 2,
            slack: 0.1,
            bisect_iters: 40,
            k_max: 50,
            minimality_tol: 1e-10,
        }
    }
}

/// Per-term record of what the builder achieved.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RmTermReport {
    pub epsilon: f64,
    pub t_n: f64,
    pub delta: f64,
    pub mass_bound: f64,
    pub weight: f64,
    pub h_at_anchor: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RmBuildReport {
    pub minimality: MinimalityCertificate,
    pub terms: Vec<RmTermReport>,
}

/// Build the bump-series coefficient: for each n, the largest tube radius
/// whose mass bound meets the budget ε_n (with slack), bisected then capped.
/// Fails when the budget is unreachable — in particular always in d = 1,
/// where the anchor segment itself has measure min(1, T_n·|ρ|) > ε_n.
pub fn build_rm_coefficient(
    flow: &RotationFlow,
    anchor: &BasePoint,
    options: &RmOptions,
) -> Result<(BumpSeries, RmBuildReport)> {
    if options.n_terms == 0 {
        return Err(Error::invalid("rm build needs n_terms >= 1"));
    }
    if anchor.dim() != flow.dim() {
        return Err(Error::invalid("anchor dimension mismatch"));
    }
    if !(options.slack > 0.0 && options.slack < 1.0) {
        return Err(Error::invalid("slack must lie in (0, 1)"));
    }
    let minimality = flow.require_minimal(options.k_max, options.minimality_tol)?;

    let d = flow.dim();
    let speed = flow.speed();
    let n = options.n_terms;
    let epsilons: Vec<f64> = match &options.epsilons {
        Some(e) => e.clone(),
        None => (1..=n).map(|i| 0.5f64.powi(i as i32)).collect(),
    };
    let times: Vec<f64> = match &options.segment_times {
        Some(t) => t.clone(),
        None => epsilons.iter().map(|e| 2.0 / e).collect(),
    };
    let weights: Vec<f64> = match &options.weights {
        Some(w) => w.clone(),
        None => vec![1.0; n],
    };
    if epsilons.len() != n || times.len() != n || weights.len() != n {
        return Err(Error::invalid("epsilons/segment_times/weights must have n_terms entries"));
    }
    if let Some(caps) = &options.delta_caps {
        if caps.len() != n {
            return Err(Error::invalid("delta_caps must have n_terms entries"));
        }
    }
    for (i, (&e, &t)) in epsilons.iter().zip(&times).enumerate() {
        if !(e > 0.0 && e < 1.0) {
            return Err(Error::invalid(format!("term {i}: epsilon must lie in (0,1)")));
        }
        if t < 2.0 / e - 1e-9 {
            return Err(Error::invalid(format!(
                "term {i}: segment time {t} below the 2/epsilon floor {}",
                2.0 / e
            )));
        }
    }

    let mut terms = Vec::with_capacity(n);
    let mut reports = Vec::with_capacity(n);
    for i in 0..n {
        let eps = epsilons[i];
        let t_n = times[i];
        let curve_len = t_n * speed;
        let target = (1.0 - options.slack) * eps;
        // Bisection on the monotone mass bound.
        let mut lo = 0.0f64;
        let mut hi = 0.25f64;
        if tube_mass_bound(d, curve_len, hi, options.q)? <= target {
            lo = hi;
        } else {
            for _ in 0..options.bisect_iters {
                let mid = 0.5 * (lo + hi);
                if tube_mass_bound(d, curve_len, mid, options.q)? <= target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        let mut delta = lo;
        if let Some(caps) = &options.delta_caps {
            delta = delta.min(caps[i]);
        }
        let mass = tube_mass_bound(d, curve_len, delta, options.q)?;
        if delta <= 0.0 || mass > eps {
            return Err(Error::MassBudget {
                term: i,
                achieved: mass,
                budget: eps,
                iterations: options.bisect_iters,
            });
        }
        terms.push(BumpTerm {
            anchor: anchor.coords().to_vec(),
            t_n,
            delta,
            weight: weights[i],
            q: options.q,
        });
        reports.push(RmTermReport {
            epsilon: eps,
            t_n,
            delta,
            mass_bound: mass,
            weight: weights[i],
            h_at_anchor: f64::NAN, // filled below from the exact trace
        });
    }

    let series = BumpSeries {
        freqs: flow.freqs().to_vec(),
        terms,
    };
    series.validate()?;

    // h_n(ω₀) must be exactly 1: the anchor segment lies inside its own tube
    // at distance zero, so the plateau value 1 fills the whole window.
    let horizon = series.terms.iter().map(|t| t.t_n).fold(0.0, f64::max);
    let view = series.view(anchor, 0.0, horizon)?;
    for (i, report) in reports.iter_mut().enumerate() {
        report.h_at_anchor = view.h_term(i, 0.0);
        if (report.h_at_anchor - 1.0).abs() > 1e-9 {
            return Err(Error::Invariant(format!(
                "term {i}: h_n at the anchor is {} (expected 1)",
                report.h_at_anchor
            )));
        }
    }

    Ok((
        series,
        RmBuildReport {
            minimality,
            terms: reports,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOLDEN: f64 = 0.618_033_988_749_894_9;
    const SQRT2M1: f64 = 0.414_213_562_373_095_1;

    fn flow2() -> RotationFlow {
        RotationFlow::new(vec![GOLDEN, SQRT2M1]).unwrap()
    }

    fn small_series() -> BumpSeries {
        // Two fat, short tubes: easy for independent quadrature.
        BumpSeries {
            freqs: vec![GOLDEN, SQRT2M1],
            terms: vec![
                BumpTerm {
                    anchor: vec![0.0, 0.0],
                    t_n: 4.0,
                    delta: 0.05,
                    weight: 1.0,
                    q: 2,
                },
                BumpTerm {
                    anchor: vec![0.0, 0.0],
                    t_n: 16.0,
                    delta: 0.02,
                    weight: 0.5,
                    q: 2,
                },
            ],
        }
    }

    #[test]
    fn c_is_one_on_anchor_segment_and_zero_far() {
        let s = small_series();
        let flow = flow2();
        let anchor = BasePoint::origin(2);
        for k in 0..=8 {
            let w = k as f64 / 8.0 * 4.0;
            let p = flow.advance(&anchor, w);
            assert!((s.c_eval(0, &p) - 1.0).abs() < 1e-12, "on-segment at w={w}");
        }
        // A point verified to stay farther than the tube radius from the
        // whole segment (including the ramp margin).
        let far = BasePoint::new(vec![0.5, 0.5]).unwrap();
        let mut min_d = f64::INFINITY;
        for k in -200..=4200 {
            let w = k as f64 / 1000.0;
            let q = flow.advance(&anchor, w);
            min_d = min_d.min(far.torus_distance(&q));
        }
        assert!(min_d > 0.06, "test point too close: {min_d}");
        assert_eq!(s.c_eval(0, &far), 0.0);
    }

    #[test]
    fn view_matches_pointwise_eval() {
        let s = small_series();
        let flow = flow2();
        let p = BasePoint::new(vec![0.21, 0.77]).unwrap();
        let view = s.view(&p, -30.0, 30.0).unwrap();
        for k in 0..=600 {
            let t = -30.0 + k as f64 * 0.1;
            let direct = s.eval(&flow.advance(&p, t));
            let fast = view.eval(t);
            assert!(
                (direct - fast).abs() < 1e-10,
                "t={t}: direct {direct} vs view {fast}"
            );
        }
    }

    #[test]
    fn cumulative_matches_fine_simpson() {
        let s = small_series();
        let p = BasePoint::new(vec![0.21, 0.77]).unwrap();
        let view = s.view(&p, -5.0, 25.0).unwrap();
        // Composite Simpson on the view itself (independent of the piecewise
        // integral assembly), fine enough to resolve the fat ramps.
        let (t0, t1) = (-5.0, 22.0);
        let n = 1 << 17;
        let h = (t1 - t0) / n as f64;
        let mut acc = view.eval(t0) + view.eval(t1);
        for i in 1..n {
            acc += view.eval(t0 + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let simpson = acc * h / 3.0;
        let exact = view.cumulative_between(t0, t1);
        assert!(
            (exact - simpson).abs() < 1e-8,
            "exact {exact} vs simpson {simpson}"
        );
    }

    #[test]
    fn primitive_telescopes_to_weighted_h() {
        let s = small_series();
        let p = BasePoint::new(vec![0.4, 0.9]).unwrap();
        let view = s.view(&p, -40.0, 40.0).unwrap();
        for k in 0..=80 {
            let t = -40.0 + k as f64;
            let lhs = view.cumulative(t);
            let rhs = -(view.h_weighted(t) - view.h_weighted(0.0));
            assert!((lhs - rhs).abs() < 1e-10, "t={t}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn h_term_lies_in_unit_interval() {
        let s = small_series();
        let p = BasePoint::new(vec![0.13, 0.58]).unwrap();
        let view = s.view(&p, -100.0, 100.0).unwrap();
        for k in 0..=400 {
            let t = -100.0 + k as f64 * 0.5;
            for n in 0..2 {
                let h = view.h_term(n, t);
                assert!((-1e-12..=1.0 + 1e-12).contains(&h), "h_{n}({t}) = {h}");
            }
        }
    }

    #[test]
    fn builder_meets_budget_and_anchors_h_at_one() {
        let flow = flow2();
        let anchor = BasePoint::origin(2);
        let options = RmOptions {
            n_terms: 3,
            ..RmOptions::default()
        };
        let (series, report) = build_rm_coefficient(&flow, &anchor, &options).unwrap();
        assert_eq!(series.terms.len(), 3);
        for (i, term) in report.terms.iter().enumerate() {
            assert!(term.mass_bound <= term.epsilon, "term {i} over budget");
            assert!((term.h_at_anchor - 1.0).abs() < 1e-12);
            assert!(series.terms[i].t_n >= 2.0 / term.epsilon - 1e-9);
        }
    }

    #[test]
    fn builder_rejects_rational_flow() {
        let flow = RotationFlow::new(vec![1.0, 0.5]).unwrap();
        let anchor = BasePoint::origin(2);
        let r = build_rm_coefficient(&flow, &anchor, &RmOptions::default());
        assert!(matches!(r, Err(Error::NotMinimal { .. })));
    }

    #[test]
    fn builder_fails_budget_in_dimension_one() {
        let flow = RotationFlow::new(vec![GOLDEN]).unwrap();
        let anchor = BasePoint::origin(1);
        let r = build_rm_coefficient(&flow, &anchor, &RmOptions::default());
        assert!(matches!(r, Err(Error::MassBudget { .. })), "{r:?}");
    }

    #[test]
    fn anchor_orbit_primitive_grows_with_horizon() {
        // Along the excluded orbit the backward primitive must pick up
        // roughly λ_n per segment scale; with default weights 1 and three
        // terms the sup over [-T, 0] at T ≫ T_3 approaches 3.
        let flow = flow2();
        let anchor = BasePoint::origin(2);
        let options = RmOptions {
            n_terms: 3,
            ..RmOptions::default()
        };
        let (series, _) = build_rm_coefficient(&flow, &anchor, &options).unwrap();
        let view = series.view(&anchor, -64.0, 0.0).unwrap();
        // sup over t in [-T, 0] of ∫₀ᵗ a = sup of −(h̃(t) − h̃(0)); at the
        // anchor h̃(0) = Σ λ_n, and h̃ decays towards 0 backward in time.
        let mut sup = f64::NEG_INFINITY;
        for k in 0..=640 {
            let t = -64.0 + k as f64 * 0.1;
            sup = sup.max(view.cumulative(t));
        }
        assert!(sup > 1.5, "backward primitive sup only {sup}");
    }

    #[test]
    fn mass_bound_is_a_true_upper_bound_on_fat_tube() {
        // Direct 2-d grid quadrature of c against the strip bound.
        let s = small_series();
        let flow = flow2();
        let n = 400usize;
        let mut mass = 0.0;
        for i in 0..n {
            for j in 0..n {
                let p = BasePoint::new(vec![i as f64 / n as f64, j as f64 / n as f64]).unwrap();
                mass += s.c_eval(0, &p);
            }
        }
        mass /= (n * n) as f64;
        let bound = tube_mass_bound(2, 4.0 * flow.speed(), 0.05, 2).unwrap();
        assert!(
            mass <= bound * 1.02,
            "grid mass {mass} exceeds bound {bound}"
        );
        assert!(mass > 0.2 * bound, "grid mass {mass} suspiciously small vs {bound}");
    }
}
