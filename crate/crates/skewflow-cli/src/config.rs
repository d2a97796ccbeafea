//! Experiment configuration: a flat TOML document with one table per
//! concern. Keys carry their unit in the name (`_time` for flow time,
//! `_abs` for absolute tolerances, `_fraction` for ratios), every numeric
//! parameter has a validated range, and unknown keys are rejected so a typo
//! cannot silently fall back to a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Where the model comes from: a named preset or a model document on disk.
/// Exactly one of the two must be set.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRef {
    /// One of `hyperbolic`, `laminated`, `pinched`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Path to a TOML document holding a full serialized model
    /// (flow, coefficients, dissipation), resolved relative to the config
    /// file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    /// Mixed absolute/relative step tolerance: per step, error ≤ tol·(1+|x|).
    pub tol_abs: f64,
    pub min_step_time: f64,
    pub max_step_time: f64,
    /// |x| above this aborts the solve as a blow-up.
    pub ceiling_abs: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            tol_abs: 1e-9,
            min_step_time: 1e-8,
            max_step_time: 0.1,
            ceiling_abs: 1e6,
        }
    }
}

impl SolverSection {
    fn validate(&self, errs: &mut Vec<String>) {
        check_range(errs, "solver.tol_abs", self.tol_abs, 1e-14, 1e-2);
        check_range(errs, "solver.min_step_time", self.min_step_time, 1e-300, 1.0);
        check_range(errs, "solver.max_step_time", self.max_step_time, 1e-6, 1e3);
        if self.min_step_time >= self.max_step_time {
            errs.push("solver.min_step_time must be below solver.max_step_time".into());
        }
        check_range(errs, "solver.ceiling_abs", self.ceiling_abs, 1.0, 1e12);
    }

    pub fn to_options(self) -> skewflow::integrator::SolveOptions {
        skewflow::integrator::SolveOptions {
            tol: self.tol_abs,
            min_step: self.min_step_time,
            max_step: self.max_step_time,
            ceiling: self.ceiling_abs,
            dense: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    /// Fiber grid resolution per torus axis (d = 2 ⇒ per_axis² points).
    pub per_axis: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { per_axis: 32 }
    }
}

impl GridSection {
    fn validate(&self, errs: &mut Vec<String>) {
        if !(2..=512).contains(&self.per_axis) {
            errs.push(format!(
                "grid.per_axis is {}, outside [2, 512]",
                self.per_axis
            ));
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PullbackSection {
    /// Stop once a horizon doubling moves the cover by less than this.
    pub tol_abs: f64,
    /// Horizon cap for the doubling schedule 1, 2, 4, …
    pub horizon_max_time: f64,
    /// Gap below this counts the fiber as a cover-contact point.
    pub pinch_tol_abs: f64,
    /// Step tolerance for the pullback solves (tighter than the general
    /// solver because cover values feed difference-based residuals).
    pub solver_tol_abs: f64,
}

impl Default for PullbackSection {
    fn default() -> Self {
        PullbackSection {
            tol_abs: 1e-6,
            horizon_max_time: 4096.0,
            pinch_tol_abs: 1e-6,
            solver_tol_abs: 1e-11,
        }
    }
}

impl PullbackSection {
    fn validate(&self, errs: &mut Vec<String>) {
        check_range(errs, "pullback.tol_abs", self.tol_abs, 1e-13, 1.0);
        check_range(
            errs,
            "pullback.horizon_max_time",
            self.horizon_max_time,
            1.0,
            1e7,
        );
        check_range(errs, "pullback.pinch_tol_abs", self.pinch_tol_abs, 1e-13, 1.0);
        check_range(errs, "pullback.solver_tol_abs", self.solver_tol_abs, 1e-14, 1e-2);
    }

    pub fn to_options(self, solver: SolverSection) -> skewflow::attractor::PullbackOptions {
        let mut sol = solver.to_options();
        sol.tol = self.solver_tol_abs;
        skewflow::attractor::PullbackOptions {
            tol: self.tol_abs,
            t_max: self.horizon_max_time,
            rho0: None,
            solver: sol,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    /// Finite-time sweep horizons; empty means the exact structural mean.
    pub sweep_horizon_times: Vec<f64>,
    pub sweep_samples_per_axis: usize,
    /// Orbit-sampling dichotomy test over [−T, T].
    pub dichotomy_horizon_time: f64,
    pub dichotomy_samples_per_axis: usize,
    /// exp ∫ a within this cap over the window counts as a bounded orbit.
    pub dichotomy_cap_abs: f64,
    /// Finite-time exponents within ±margin of zero stay undecided.
    pub dichotomy_margin: f64,
    /// Optional fiber Lyapunov exponent along an attractor orbit.
    pub exponent_enabled: bool,
    pub exponent_horizon_time: f64,
    pub exponent_burn_in_time: f64,
    pub exponent_tol_abs: f64,
    /// Grid index whose cover value seeds the exponent orbit.
    pub exponent_seed_index: usize,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        SpectrumSection {
            sweep_horizon_times: Vec::new(),
            sweep_samples_per_axis: 8,
            dichotomy_horizon_time: 256.0,
            dichotomy_samples_per_axis: 4,
            dichotomy_cap_abs: 1e9,
            dichotomy_margin: 1e-3,
            exponent_enabled: false,
            exponent_horizon_time: 800.0,
            exponent_burn_in_time: 100.0,
            exponent_tol_abs: 0.02,
            exponent_seed_index: 0,
        }
    }
}

impl SpectrumSection {
    fn validate(&self, errs: &mut Vec<String>) {
        for (i, &t) in self.sweep_horizon_times.iter().enumerate() {
            check_range(errs, &format!("spectrum.sweep_horizon_times[{i}]"), t, 1e-3, 1e7);
        }
        if !(2..=256).contains(&self.sweep_samples_per_axis) {
            errs.push("spectrum.sweep_samples_per_axis must lie in [2, 256]".into());
        }
        check_range(
            errs,
            "spectrum.dichotomy_horizon_time",
            self.dichotomy_horizon_time,
            1.0,
            1e6,
        );
        if !(2..=64).contains(&self.dichotomy_samples_per_axis) {
            errs.push("spectrum.dichotomy_samples_per_axis must lie in [2, 64]".into());
        }
        check_range(errs, "spectrum.dichotomy_cap_abs", self.dichotomy_cap_abs, 1.0 + 1e-9, 1e300);
        check_range(errs, "spectrum.dichotomy_margin", self.dichotomy_margin, 1e-12, 1.0);
        check_range(
            errs,
            "spectrum.exponent_horizon_time",
            self.exponent_horizon_time,
            1.0,
            1e6,
        );
        check_range(
            errs,
            "spectrum.exponent_burn_in_time",
            self.exponent_burn_in_time,
            0.0,
            1e6,
        );
        check_range(errs, "spectrum.exponent_tol_abs", self.exponent_tol_abs, 1e-9, 1.0);
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegimeSection {
    /// Gap above this counts as genuine cover separation.
    pub gap_threshold_abs: f64,
    /// γ_sup below −margin counts as a uniformly negative spectrum.
    pub spectrum_margin: f64,
    /// Allowed relative growth of the primitive range across horizons.
    pub primitive_growth_tol: f64,
    /// Horizons for the coefficient-primitive boundedness probe.
    pub primitive_horizon_times: Vec<f64>,
    pub primitive_step_time: f64,
}

impl Default for RegimeSection {
    fn default() -> Self {
        RegimeSection {
            gap_threshold_abs: 1e-3,
            spectrum_margin: 1e-3,
            primitive_growth_tol: 0.05,
            primitive_horizon_times: vec![64.0, 128.0, 256.0],
            primitive_step_time: 0.05,
        }
    }
}

impl RegimeSection {
    fn validate(&self, errs: &mut Vec<String>) {
        check_range(errs, "regime.gap_threshold_abs", self.gap_threshold_abs, 1e-13, 1.0);
        check_range(errs, "regime.spectrum_margin", self.spectrum_margin, 1e-12, 1.0);
        check_range(errs, "regime.primitive_growth_tol", self.primitive_growth_tol, 0.0, 10.0);
        if self.primitive_horizon_times.len() < 2 {
            errs.push("regime.primitive_horizon_times needs at least two horizons".into());
        }
        for (i, &t) in self.primitive_horizon_times.iter().enumerate() {
            check_range(errs, &format!("regime.primitive_horizon_times[{i}]"), t, 1e-3, 1e7);
        }
        check_range(errs, "regime.primitive_step_time", self.primitive_step_time, 1e-6, 1e3);
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChaosSection {
    /// Forward window over which covers must stay strictly inside the band
    /// for a fiber to qualify as an Ω_l-proxy point.
    pub proxy_window_time: f64,
    /// How many proxy fibers to test (widest cover gap first).
    pub proxy_fibers: usize,
    pub pairs_per_fiber: usize,
    pub pair_horizon_time: f64,
    pub pair_solver_tol_abs: f64,
    /// Tail-gap fraction below which a pair is asymptotic.
    pub asymptotic_fraction: f64,
    /// Tail-gap fraction above which a pair is distal.
    pub distal_fraction: f64,
    /// Fraction of the horizon treated as the tail window.
    pub tail_fraction: f64,
    /// ε values for the low/high occupation reports.
    pub epsilon_list: Vec<f64>,
    /// Occupation horizons, shortest to longest (doubling recommended).
    pub density_horizon_times: Vec<f64>,
    pub density_step_time: f64,
    /// Running densities are summarized over [tail_start, horizon].
    pub density_tail_start_time: f64,
}

impl Default for ChaosSection {
    fn default() -> Self {
        ChaosSection {
            proxy_window_time: 100.0,
            proxy_fibers: 5,
            pairs_per_fiber: 10,
            pair_horizon_time: 1e4,
            pair_solver_tol_abs: 1e-11,
            asymptotic_fraction: 1e-4,
            distal_fraction: 0.1,
            tail_fraction: 0.5,
            epsilon_list: vec![0.2],
            density_horizon_times: vec![2500.0, 5000.0, 1e4],
            density_step_time: 0.05,
            density_tail_start_time: 1000.0,
        }
    }
}

impl ChaosSection {
    fn validate(&self, errs: &mut Vec<String>) {
        check_range(errs, "chaos.proxy_window_time", self.proxy_window_time, 1e-3, 1e6);
        if !(1..=4096).contains(&self.proxy_fibers) {
            errs.push("chaos.proxy_fibers must lie in [1, 4096]".into());
        }
        if !(1..=10_000).contains(&self.pairs_per_fiber) {
            errs.push("chaos.pairs_per_fiber must lie in [1, 10000]".into());
        }
        check_range(errs, "chaos.pair_horizon_time", self.pair_horizon_time, 1.0, 1e7);
        check_range(errs, "chaos.pair_solver_tol_abs", self.pair_solver_tol_abs, 1e-14, 1e-2);
        check_range(errs, "chaos.asymptotic_fraction", self.asymptotic_fraction, 1e-300, 1.0);
        check_range(errs, "chaos.distal_fraction", self.distal_fraction, 1e-300, 1.0);
        if self.distal_fraction < 10.0 * self.asymptotic_fraction {
            errs.push(
                "chaos.distal_fraction must be at least 10x chaos.asymptotic_fraction".into(),
            );
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction < 1.0) {
            errs.push("chaos.tail_fraction must lie in (0, 1)".into());
        }
        if self.epsilon_list.is_empty() {
            errs.push("chaos.epsilon_list must not be empty".into());
        }
        for (i, &e) in self.epsilon_list.iter().enumerate() {
            if !(e > 0.0 && e < 1.0) {
                errs.push(format!("chaos.epsilon_list[{i}] is {e}, outside (0, 1)"));
            }
        }
        if self.density_horizon_times.is_empty() {
            errs.push("chaos.density_horizon_times must not be empty".into());
        }
        for (i, &t) in self.density_horizon_times.iter().enumerate() {
            check_range(errs, &format!("chaos.density_horizon_times[{i}]"), t, 1.0, 1e7);
        }
        if self
            .density_horizon_times
            .windows(2)
            .any(|w| !(w[0] < w[1]))
        {
            errs.push("chaos.density_horizon_times must be strictly increasing".into());
        }
        check_range(errs, "chaos.density_step_time", self.density_step_time, 1e-6, 1e3);
        check_range(
            errs,
            "chaos.density_tail_start_time",
            self.density_tail_start_time,
            0.0,
            1e7,
        );
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupportSection {
    /// Cover combinations η_c = c·α + (1−c)·β to transport and sample.
    pub cloud_c_list: Vec<f64>,
    /// Grid index seeding the clouds; absent means the widest-gap fiber.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed_index: Option<usize>,
    pub cloud_horizon_time: f64,
    pub cloud_step_time: f64,
    /// Recurrence ball radius around the witness center (torus metric).
    pub witness_radius: f64,
    /// c values for the transport-invariance residual check.
    pub transport_c_list: Vec<f64>,
    pub transport_span_time: f64,
    /// Perturbation sizes for the sensitivity probes.
    pub sensitivity_delta_list: Vec<f64>,
    pub sensitivity_horizon_time: f64,
    /// Probe fibers: the seed fiber advanced by these times.
    pub sensitivity_probe_times: Vec<f64>,
    /// Separation target ε₀ = factor · (grid max gap).
    pub sensitivity_epsilon_factor: f64,
}

impl Default for SupportSection {
    fn default() -> Self {
        SupportSection {
            cloud_c_list: vec![0.0, 0.5, 1.0],
            seed_index: None,
            cloud_horizon_time: 1e5,
            cloud_step_time: 0.5,
            witness_radius: 0.05,
            transport_c_list: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            transport_span_time: 10.0,
            sensitivity_delta_list: vec![1e-6, 1e-4, 1e-2],
            sensitivity_horizon_time: 1e4,
            sensitivity_probe_times: vec![50.0, 100.0, 150.0],
            sensitivity_epsilon_factor: 0.1,
        }
    }
}

impl SupportSection {
    fn validate(&self, errs: &mut Vec<String>) {
        if self.cloud_c_list.is_empty() {
            errs.push("support.cloud_c_list must not be empty".into());
        }
        for (i, &c) in self.cloud_c_list.iter().enumerate() {
            if !(0.0..=1.0).contains(&c) {
                errs.push(format!("support.cloud_c_list[{i}] is {c}, outside [0, 1]"));
            }
        }
        check_range(errs, "support.cloud_horizon_time", self.cloud_horizon_time, 1.0, 1e8);
        check_range(errs, "support.cloud_step_time", self.cloud_step_time, 1e-4, 1e4);
        check_range(errs, "support.witness_radius", self.witness_radius, 1e-9, 0.5);
        for (i, &c) in self.transport_c_list.iter().enumerate() {
            if !(0.0..=1.0).contains(&c) {
                errs.push(format!("support.transport_c_list[{i}] is {c}, outside [0, 1]"));
            }
        }
        check_range(errs, "support.transport_span_time", self.transport_span_time, 1e-3, 1e5);
        for (i, &d) in self.sensitivity_delta_list.iter().enumerate() {
            check_range(errs, &format!("support.sensitivity_delta_list[{i}]"), d, 0.0, 1e3);
        }
        check_range(
            errs,
            "support.sensitivity_horizon_time",
            self.sensitivity_horizon_time,
            1.0,
            1e7,
        );
        for (i, &t) in self.sensitivity_probe_times.iter().enumerate() {
            check_range(errs, &format!("support.sensitivity_probe_times[{i}]"), t, 0.0, 1e7);
        }
        check_range(
            errs,
            "support.sensitivity_epsilon_factor",
            self.sensitivity_epsilon_factor,
            1e-9,
            1.0,
        );
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmSection {
    pub n_terms: usize,
    /// Profile exponent q ≥ 1 (q ≥ 2 keeps the coefficient C¹).
    pub profile_exponent_q: u32,
    /// Weights λ_n; empty means the builder default (all 1).
    pub weight_list: Vec<f64>,
    /// Mass budgets ε_n; empty means 2^{−n}.
    pub epsilon_list: Vec<f64>,
    /// Segment lengths T_n; empty means the builder minimum 2/ε_n.
    pub segment_time_list: Vec<f64>,
    /// Hard caps on tube radii; empty means uncapped.
    pub delta_cap_list: Vec<f64>,
    /// Fraction of each mass budget deliberately left unused.
    pub budget_slack_fraction: f64,
    /// Horizon for the telescoped Birkhoff-mean measurement.
    pub mean_sample_horizon_time: f64,
    /// Primitive-statistics horizons for the anchor and random orbits.
    pub stats_horizon_times: Vec<f64>,
    pub stats_step_time: f64,
    pub random_orbit_count: usize,
    /// Relative change of the envelope on the final horizon doubling below
    /// which a random orbit counts as settled.
    pub settled_change_fraction: f64,
}

impl Default for RmSection {
    fn default() -> Self {
        RmSection {
            n_terms: 6,
            profile_exponent_q: 2,
            weight_list: vec![5.0; 6],
            epsilon_list: Vec::new(),
            segment_time_list: vec![16.0, 64.0, 256.0, 1024.0, 4096.0, 16384.0],
            delta_cap_list: vec![0.25, 0.25, 0.25, 0.25, 3e-6, 6e-7],
            budget_slack_fraction: 0.1,
            mean_sample_horizon_time: 1e8,
            stats_horizon_times: vec![100.0, 1000.0, 1e4],
            stats_step_time: 0.05,
            random_orbit_count: 100,
            settled_change_fraction: 0.05,
        }
    }
}

impl RmSection {
    fn validate(&self, errs: &mut Vec<String>) {
        if !(1..=16).contains(&self.n_terms) {
            errs.push("rm.n_terms must lie in [1, 16]".into());
        }
        if self.profile_exponent_q < 1 {
            errs.push("rm.profile_exponent_q must be >= 1".into());
        }
        for (name, list) in [
            ("rm.weight_list", &self.weight_list),
            ("rm.epsilon_list", &self.epsilon_list),
            ("rm.segment_time_list", &self.segment_time_list),
            ("rm.delta_cap_list", &self.delta_cap_list),
        ] {
            if !list.is_empty() && list.len() != self.n_terms {
                errs.push(format!(
                    "{name} has {} entries; needs exactly rm.n_terms = {} (or none)",
                    list.len(),
                    self.n_terms
                ));
            }
            for (i, &v) in list.iter().enumerate() {
                if !(v > 0.0) || !v.is_finite() {
                    errs.push(format!("{name}[{i}] is {v}; must be finite and positive"));
                }
            }
        }
        for (i, &e) in self.epsilon_list.iter().enumerate() {
            if e >= 1.0 {
                errs.push(format!("rm.epsilon_list[{i}] is {e}; budgets must be below 1"));
            }
        }
        if !(self.budget_slack_fraction > 0.0 && self.budget_slack_fraction < 1.0) {
            errs.push("rm.budget_slack_fraction must lie in (0, 1)".into());
        }
        check_range(
            errs,
            "rm.mean_sample_horizon_time",
            self.mean_sample_horizon_time,
            1.0,
            1e12,
        );
        if self.stats_horizon_times.len() < 2 {
            errs.push("rm.stats_horizon_times needs at least two horizons".into());
        }
        for (i, &t) in self.stats_horizon_times.iter().enumerate() {
            check_range(errs, &format!("rm.stats_horizon_times[{i}]"), t, 1e-3, 1e7);
        }
        if self.stats_horizon_times.windows(2).any(|w| !(w[0] < w[1])) {
            errs.push("rm.stats_horizon_times must be strictly increasing".into());
        }
        check_range(errs, "rm.stats_step_time", self.stats_step_time, 1e-6, 1e3);
        if self.random_orbit_count > 100_000 {
            errs.push("rm.random_orbit_count must be at most 100000".into());
        }
        if !(self.settled_change_fraction > 0.0 && self.settled_change_fraction < 1.0) {
            errs.push("rm.settled_change_fraction must lie in (0, 1)".into());
        }
    }

    pub fn to_options(&self) -> skewflow::coefficients::RmOptions {
        let opt_list = |v: &Vec<f64>| if v.is_empty() { None } else { Some(v.clone()) };
        skewflow::coefficients::RmOptions {
            n_terms: self.n_terms,
            epsilons: opt_list(&self.epsilon_list),
            segment_times: opt_list(&self.segment_time_list),
            weights: opt_list(&self.weight_list),
            delta_caps: opt_list(&self.delta_cap_list),
            q: self.profile_exponent_q,
            slack: self.budget_slack_fraction,
            ..skewflow::coefficients::RmOptions::default()
        }
    }
}

/// The whole experiment document.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelRef,
    pub seed: u64,
    /// Output directory; `--out` overrides, and one of the two must be set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub solver: SolverSection,
    pub grid: GridSection,
    pub pullback: PullbackSection,
    pub spectrum: SpectrumSection,
    pub regime: RegimeSection,
    pub chaos: ChaosSection,
    pub support: SupportSection,
    pub rm: RmSection,
}

impl ExperimentConfig {
    /// Range-check every parameter; collects all violations instead of
    /// stopping at the first.
    pub fn validate(&self) -> Result<(), String> {
        let mut errs = Vec::new();
        match (&self.model.preset, &self.model.path) {
            (None, None) => errs.push("model needs either a preset name or a path".into()),
            (Some(_), Some(_)) => {
                errs.push("model.preset and model.path are mutually exclusive".into())
            }
            _ => {}
        }
        self.solver.validate(&mut errs);
        self.grid.validate(&mut errs);
        self.pullback.validate(&mut errs);
        self.spectrum.validate(&mut errs);
        self.regime.validate(&mut errs);
        self.chaos.validate(&mut errs);
        self.support.validate(&mut errs);
        self.rm.validate(&mut errs);
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs.join("; "))
        }
    }
}

/// Parse and validate a config file. Unknown keys and range violations are
/// both configuration errors.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let config: ExperimentConfig =
        toml::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))?;
    config.validate()?;
    Ok(config)
}

fn check_range(errs: &mut Vec<String>, name: &str, value: f64, lo: f64, hi: f64) {
    if !value.is_finite() || value < lo || value > hi {
        errs.push(format!("{name} is {value}, outside [{lo}, {hi}]"));
    }
}
