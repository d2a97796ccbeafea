//! Task orchestration: resolve the model, run one experiment, write the
//! artifact files plus a manifest with content digests.
//!
//! Determinism contract: everything random is drawn from ChaCha streams
//! derived from (seed, purpose-label), all data-parallel maps collect in
//! index order, and floats are printed in shortest round-trip form — so a
//! given config + seed produces byte-identical outputs regardless of thread
//! count. The only nondeterministic field anywhere is the manifest's wall
//! time.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use skewflow::attractor::{self, AttractorSection, CoverSign, RegimeThresholds, SectionOptions};
use skewflow::base_flow::{BasePoint, MinimalityCertificate};
use skewflow::chaos::{self, PairClass, PairThresholds, SupportOptions, SupportSample};
use skewflow::coefficients::{
    build_rm_coefficient, primitive_stats, PrimitiveStats, QpFunction, RmTermReport,
};
use skewflow::exec;
use skewflow::integrator::solve_on_orbit;
use skewflow::model::ScalarModel;
use skewflow::spectrum::{
    dichotomy_test, minimal_set_exponent, sacker_sell, DichotomyReport, DichotomyVerdict,
    MinimalExponentReport, SpectrumEstimate,
};

use crate::config::ExperimentConfig;
use crate::presets;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOFT: i32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Regime,
    Attractor,
    Spectrum,
    ChaosLy,
    ChaosAy,
    RmBuild,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Regime => "regime",
            Task::Attractor => "attractor",
            Task::Spectrum => "spectrum",
            Task::ChaosLy => "chaos-ly",
            Task::ChaosAy => "chaos-ay",
            Task::RmBuild => "rm-build",
        }
    }
}

#[derive(Debug)]
pub enum RunError {
    /// The configuration cannot be executed as given.
    Config(String),
    /// The run itself failed (solver breakdown, I/O, serialization).
    Internal(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(m) => write!(f, "config error: {m}"),
            RunError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

fn internal(e: impl std::fmt::Display) -> RunError {
    RunError::Internal(e.to_string())
}

#[derive(Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    /// Artifact file names, manifest last.
    pub files: Vec<String>,
    /// Non-fatal numeric shortfalls (non-convergence, ambiguous evidence).
    pub soft_warnings: Vec<String>,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.soft_warnings.is_empty() {
            EXIT_OK
        } else {
            EXIT_SOFT
        }
    }
}

/// Pin the worker pool size before the first parallel call. Safe to call
/// repeatedly; only the first successful installation wins.
pub fn configure_threads(requested: Option<usize>) {
    #[cfg(feature = "parallel")]
    if let Some(n) = requested {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = requested;
}

/// Resolve the model reference: named preset or model document on disk.
pub fn resolve_model(config: &ExperimentConfig) -> Result<ScalarModel, RunError> {
    match (&config.model.preset, &config.model.path) {
        (Some(name), None) => presets::build(name).map_err(RunError::Config),
        (None, Some(path)) => presets::load_model(path).map_err(RunError::Config),
        _ => Err(RunError::Config(
            "model needs exactly one of preset or path".into(),
        )),
    }
}

/// Run one task end to end: compute, write artifacts, write the manifest.
pub fn run(task: Task, config: &ExperimentConfig, out_dir: &Path) -> Result<RunReport, RunError> {
    let started = Instant::now();
    config.validate().map_err(RunError::Config)?;
    let model = resolve_model(config)?;

    let artifacts = match task {
        Task::Regime => run_regime(&model, config)?,
        Task::Attractor => run_attractor(&model, config)?,
        Task::Spectrum => run_spectrum(&model, config)?,
        Task::ChaosLy => run_chaos_ly(&model, config)?,
        Task::ChaosAy => run_chaos_ay(&model, config)?,
        Task::RmBuild => run_rm_build(&model, config)?,
    };

    write_all(task, config, out_dir, artifacts, started)
}

// ---------------------------------------------------------------------------
// Artifact plumbing.
// ---------------------------------------------------------------------------

struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
    warnings: Vec<String>,
}

impl Artifacts {
    fn new() -> Self {
        Artifacts {
            files: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn file(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn json<T: Serialize>(&mut self, name: &str, doc: &T) -> Result<(), RunError> {
        let mut bytes = serde_json::to_vec_pretty(doc).map_err(internal)?;
        bytes.push(b'\n');
        self.file(name, bytes);
        Ok(())
    }

    fn warn(&mut self, msg: String) {
        self.warnings.push(msg);
    }
}

#[derive(Serialize)]
struct OutputRecord {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    task: &'static str,
    seed: u64,
    threads: usize,
    versions: Versions,
    /// Wall-clock seconds; the only field that varies between identical runs.
    wall_time_s: f64,
    soft_warnings: Vec<String>,
    /// The resolved configuration, echoed verbatim.
    config_echo: String,
    outputs: Vec<OutputRecord>,
}

#[derive(Serialize)]
struct Versions {
    skewflow: &'static str,
    skewflow_cli: &'static str,
}

fn write_all(
    task: Task,
    config: &ExperimentConfig,
    out_dir: &Path,
    artifacts: Artifacts,
    started: Instant,
) -> Result<RunReport, RunError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| internal(format!("cannot create {}: {e}", out_dir.display())))?;

    let mut outputs = Vec::new();
    let mut files = Vec::new();
    for (name, bytes) in &artifacts.files {
        std::fs::write(out_dir.join(name), bytes)
            .map_err(|e| internal(format!("cannot write {name}: {e}")))?;
        outputs.push(OutputRecord {
            path: name.clone(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        files.push(name.clone());
    }

    let manifest = Manifest {
        task: task.name(),
        seed: config.seed,
        threads: exec::worker_threads(),
        versions: Versions {
            skewflow: skewflow::VERSION,
            skewflow_cli: env!("CARGO_PKG_VERSION"),
        },
        wall_time_s: started.elapsed().as_secs_f64(),
        soft_warnings: artifacts.warnings.clone(),
        config_echo: toml::to_string_pretty(config).map_err(internal)?,
        outputs,
    };
    let mut manifest_bytes = serde_json::to_vec_pretty(&manifest).map_err(internal)?;
    manifest_bytes.push(b'\n');
    std::fs::write(out_dir.join("manifest.json"), manifest_bytes)
        .map_err(|e| internal(format!("cannot write manifest: {e}")))?;
    files.push("manifest.json".to_string());

    Ok(RunReport {
        out_dir: out_dir.to_path_buf(),
        files,
        soft_warnings: artifacts.warnings,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// One ChaCha stream per (seed, purpose): runs differing in any purpose
/// label draw independently, and adding a consumer never shifts another's
/// stream.
fn sub_rng(seed: u64, label: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().unwrap()))
}

fn theta_header(dim: usize) -> String {
    (0..dim)
        .map(|i| format!("theta{},", i + 1))
        .collect::<String>()
}

fn push_coords(line: &mut String, point: &BasePoint) {
    for c in point.coords() {
        let _ = write!(line, "{c},");
    }
}

fn class_name(class: PairClass) -> &'static str {
    match class {
        PairClass::LiYorke => "LI_YORKE",
        PairClass::Distal => "DISTAL",
        PairClass::Asymptotic => "ASYMPTOTIC",
        PairClass::Undecided => "UNDECIDED",
    }
}

// ---------------------------------------------------------------------------
// Shared pieces.
// ---------------------------------------------------------------------------

fn compute_section(
    model: &ScalarModel,
    config: &ExperimentConfig,
) -> Result<AttractorSection, RunError> {
    let opts = SectionOptions {
        per_axis: config.grid.per_axis,
        pullback: config.pullback.to_options(config.solver),
        pinch_tol: config.pullback.pinch_tol_abs,
    };
    attractor::section(model, &opts).map_err(internal)
}

fn warn_unconverged(artifacts: &mut Artifacts, section: &AttractorSection) {
    let unconverged = section.converged.iter().filter(|&&c| !c).count();
    if unconverged > 0 {
        artifacts.warn(format!(
            "{unconverged} of {} pullback fibers did not converge within the horizon cap",
            section.len()
        ));
    }
}

#[derive(Serialize)]
struct SectionSummaryDoc {
    per_axis: usize,
    fibers: usize,
    rho0: f64,
    converged_fibers: usize,
    contact_fibers: usize,
    min_gap: f64,
    mean_gap: f64,
    max_gap: f64,
    pinch_tol_abs: f64,
    pullback_tol_abs: f64,
    horizon_max_time: f64,
}

fn section_summary(section: &AttractorSection, config: &ExperimentConfig) -> SectionSummaryDoc {
    SectionSummaryDoc {
        per_axis: config.grid.per_axis,
        fibers: section.len(),
        rho0: section.rho0,
        converged_fibers: section.converged.iter().filter(|&&c| c).count(),
        contact_fibers: section.continuity_mask.iter().filter(|&&m| m).count(),
        min_gap: section.pinch_min,
        mean_gap: section.pinch_mean,
        max_gap: section.pinch_max,
        pinch_tol_abs: section.pinch_tol,
        pullback_tol_abs: config.pullback.tol_abs,
        horizon_max_time: config.pullback.horizon_max_time,
    }
}

// ---------------------------------------------------------------------------
// attractor / regime
// ---------------------------------------------------------------------------

fn run_attractor(model: &ScalarModel, config: &ExperimentConfig) -> Result<Artifacts, RunError> {
    let mut artifacts = Artifacts::new();
    let section = compute_section(model, config)?;
    warn_unconverged(&mut artifacts, &section);
    artifacts.file("section.csv", section.to_csv().into_bytes());
    artifacts.json("attractor.json", &section_summary(&section, config))?;
    Ok(artifacts)
}

#[derive(Serialize)]
struct RegimeDoc {
    label: String,
    undecided: bool,
    gamma_inf: f64,
    gamma_sup: f64,
    min_gap: f64,
    mean_gap: f64,
    max_gap: f64,
    primitive_ranges: Vec<f64>,
    primitive_bounded: bool,
    notes: String,
    spectrum: SpectrumEstimate,
    section: SectionSummaryDoc,
}

fn run_regime(model: &ScalarModel, config: &ExperimentConfig) -> Result<Artifacts, RunError> {
    let mut artifacts = Artifacts::new();
    let section = compute_section(model, config)?;
    warn_unconverged(&mut artifacts, &section);

    let estimate = sacker_sell(
        &model.a,
        &model.flow,
        &config.spectrum.sweep_horizon_times,
        config.spectrum.sweep_samples_per_axis,
    )
    .map_err(internal)?;

    let origin = BasePoint::origin(model.flow.dim());
    let mut stats = Vec::new();
    for &horizon in &config.regime.primitive_horizon_times {
        let s = primitive_stats(
            &model.a,
            &model.flow,
            &origin,
            horizon,
            config.regime.primitive_step_time,
        )
        .map_err(internal)?;
        if s.step_refinement_warning {
            artifacts.warn(format!(
                "primitive scan at horizon {horizon} is step-limited; refine regime.primitive_step_time"
            ));
        }
        stats.push(s);
    }

    let thresholds = RegimeThresholds {
        spectrum_margin: config.regime.spectrum_margin,
        pinch_tol: config.pullback.pinch_tol_abs,
        gap_threshold: config.regime.gap_threshold_abs,
        primitive_growth_tol: config.regime.primitive_growth_tol,
    };
    let report = attractor::classify(&section, &estimate, &stats, &thresholds);
    if report.undecided {
        artifacts.warn(format!(
            "regime evidence is ambiguous: {}",
            report.notes.trim_end()
        ));
    }

    let doc = RegimeDoc {
        label: format!("{:?}", report.label),
        undecided: report.undecided,
        gamma_inf: report.gamma_inf,
        gamma_sup: report.gamma_sup,
        min_gap: report.min_gap,
        mean_gap: report.mean_gap,
        max_gap: report.max_gap,
        primitive_ranges: report.primitive_ranges.clone(),
        primitive_bounded: report.primitive_bounded,
        notes: report.notes.clone(),
        spectrum: estimate,
        section: section_summary(&section, config),
    };
    artifacts.file("section.csv", section.to_csv().into_bytes());
    artifacts.json("regime.json", &doc)?;
    Ok(artifacts)
}

// ---------------------------------------------------------------------------
// spectrum
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SpectrumDoc {
    estimate: SpectrumEstimate,
    dichotomy: DichotomyReport,
    exponent: Option<MinimalExponentReport>,
}

fn run_spectrum(model: &ScalarModel, config: &ExperimentConfig) -> Result<Artifacts, RunError> {
    let mut artifacts = Artifacts::new();
    let sp = &config.spectrum;

    let estimate = sacker_sell(
        &model.a,
        &model.flow,
        &sp.sweep_horizon_times,
        sp.sweep_samples_per_axis,
    )
    .map_err(internal)?;

    let samples = model
        .flow
        .uniform_grid(sp.dichotomy_samples_per_axis)
        .map_err(internal)?;
    let dichotomy = dichotomy_test(
        &model.a,
        &model.flow,
        &samples,
        sp.dichotomy_horizon_time,
        sp.dichotomy_cap_abs,
        sp.dichotomy_margin,
    )
    .map_err(internal)?;
    if dichotomy.verdict == DichotomyVerdict::Undecided {
        artifacts.warn("dichotomy evidence is undecided at this horizon".into());
    }

    let exponent = if sp.exponent_enabled {
        let grid = model.flow.uniform_grid(config.grid.per_axis).map_err(internal)?;
        if sp.exponent_seed_index >= grid.len() {
            return Err(RunError::Config(format!(
                "spectrum.exponent_seed_index {} is outside the {}-point grid",
                sp.exponent_seed_index,
                grid.len()
            )));
        }
        let omega = &grid[sp.exponent_seed_index];
        let cover = attractor::pullback_cover(
            model,
            omega,
            CoverSign::Upper,
            &config.pullback.to_options(config.solver),
        )
        .map_err(internal)?;
        if !cover.converged {
            artifacts.warn("exponent seed cover did not converge; exponent uses its last value".into());
        }
        let report = minimal_set_exponent(
            model,
            omega,
            cover.value,
            sp.exponent_horizon_time,
            sp.exponent_burn_in_time,
            sp.exponent_tol_abs,
            &config.solver.to_options(),
        )
        .map_err(internal)?;
        if !report.converged {
            artifacts.warn(format!(
                "fiber exponent moved more than {} on the final doubling",
                report.convergence_tol
            ));
        }
        Some(report)
    } else {
        None
    };

    artifacts.json(
        "spectrum.json",
        &SpectrumDoc {
            estimate,
            dichotomy,
            exponent,
        },
    )?;
    Ok(artifacts)
}

// ---------------------------------------------------------------------------
// chaos-ly: pair classification and occupation densities
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct FiberDoc {
    index: usize,
    theta: Vec<f64>,
    alpha: f64,
    beta: f64,
    gap: f64,
}

#[derive(Serialize)]
struct ClassCountsDoc {
    li_yorke: usize,
    distal: usize,
    asymptotic: usize,
    undecided: usize,
}

#[derive(Serialize)]
struct DensitySummaryDoc {
    fiber_index: usize,
    epsilon: f64,
    horizon_time: f64,
    step_time: f64,
    density_low: f64,
    density_high: f64,
    /// Minima of the running densities over [tail_start, horizon]; equal to
    /// the final densities when the tail window is empty.
    tail_running_low_min: f64,
    tail_running_high_min: f64,
    largest_gap_low: f64,
    largest_gap_high: f64,
    step_warning: bool,
    off_support: bool,
}

#[derive(Serialize)]
struct ChaosLyDoc {
    proxy_window_time: f64,
    proxy_total: usize,
    fibers: Vec<FiberDoc>,
    pair_horizon_time: f64,
    class_counts: ClassCountsDoc,
    li_yorke_fraction: f64,
    cross_check_failures: usize,
    densities: Vec<DensitySummaryDoc>,
}

fn run_chaos_ly(model: &ScalarModel, config: &ExperimentConfig) -> Result<Artifacts, RunError> {
    let mut artifacts = Artifacts::new();
    let ch = &config.chaos;
    let section = compute_section(model, config)?;
    warn_unconverged(&mut artifacts, &section);

    let mut solver = config.solver.to_options();
    solver.tol = ch.pair_solver_tol_abs;

    let proxy = chaos::omega_l_proxy(model, &section, ch.proxy_window_time, &solver)
        .map_err(internal)?;
    if proxy.len() < ch.proxy_fibers {
        artifacts.warn(format!(
            "only {} fibers qualify as proxy points; {} requested",
            proxy.len(),
            ch.proxy_fibers
        ));
    }
    // Widest fibers first: pairs need interior room between the covers, and
    // the widest fibers are the least pinched (most representative of the
    // open-gap set the proxy stands for).
    let mut chosen: Vec<usize> = proxy.clone();
    chosen.sort_by(|&i, &j| {
        section
            .gap(j)
            .partial_cmp(&section.gap(i))
            .unwrap()
            .then(i.cmp(&j))
    });
    chosen.truncate(ch.proxy_fibers);

    // Pair states: interior of the cover interval, separated by at least 5%
    // of the gap so the trajectory route measures gaps above solver noise.
    let mut jobs: Vec<(usize, f64, f64)> = Vec::new();
    for &i in &chosen {
        let mut rng = sub_rng(config.seed, &format!("pairs:{i}"));
        let (lo, hi) = (section.alpha[i], section.beta[i]);
        let gap = hi - lo;
        for _ in 0..ch.pairs_per_fiber {
            let (u1, u2) = loop {
                let u1: f64 = rng.gen_range(0.05..0.95);
                let u2: f64 = rng.gen_range(0.05..0.95);
                if (u1 - u2).abs() >= 0.05 {
                    break (u1, u2);
                }
            };
            jobs.push((i, lo + u1 * gap, lo + u2 * gap));
        }
    }

    let thresholds = PairThresholds {
        asymptotic_fraction: ch.asymptotic_fraction,
        distal_fraction: ch.distal_fraction,
        tail_fraction: ch.tail_fraction,
    };
    let verdicts = exec::try_map_indexed(&jobs, |_, &(i, x1, x2)| {
        chaos::classify_pair(
            model,
            &section.grid[i],
            x1,
            x2,
            ch.pair_horizon_time,
            &thresholds,
            &solver,
        )
    })
    .map_err(internal)?;

    let mut counts = ClassCountsDoc {
        li_yorke: 0,
        distal: 0,
        asymptotic: 0,
        undecided: 0,
    };
    let mut cross_check_failures = 0;
    let dim = model.flow.dim();
    let mut pairs_csv = String::new();
    pairs_csv.push_str("fiber_index,");
    pairs_csv.push_str(&theta_header(dim));
    pairs_csv.push_str(
        "x1,x2,classification,band_confined,liminf_gap,limsup_gap,traj_liminf_gap,traj_limsup_gap,mismatch_max,cross_check_ok,horizon_time\n",
    );
    for (&(i, _, _), v) in jobs.iter().zip(&verdicts) {
        match v.classification {
            PairClass::LiYorke => counts.li_yorke += 1,
            PairClass::Distal => counts.distal += 1,
            PairClass::Asymptotic => counts.asymptotic += 1,
            PairClass::Undecided => counts.undecided += 1,
        }
        if !v.cross_check_ok {
            cross_check_failures += 1;
        }
        let mut line = format!("{i},");
        push_coords(&mut line, &v.omega);
        let _ = write!(
            line,
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            v.x1,
            v.x2,
            class_name(v.classification),
            v.band_confined,
            v.liminf_gap,
            v.limsup_gap,
            v.traj_liminf_gap,
            v.traj_limsup_gap,
            v.mismatch_max,
            v.cross_check_ok,
            v.horizon
        );
        pairs_csv.push_str(&line);
    }
    if cross_check_failures > 0 {
        artifacts.warn(format!(
            "{cross_check_failures} pair gap cross-checks exceeded the error envelope"
        ));
    }

    // Occupation reports: per fiber × ε × horizon, exact-primitive ratios.
    let mut density_jobs: Vec<(usize, f64, f64)> = Vec::new();
    for &i in &chosen {
        for &eps in &ch.epsilon_list {
            for &t in &ch.density_horizon_times {
                density_jobs.push((i, eps, t));
            }
        }
    }
    let reports = exec::try_map_indexed(&density_jobs, |_, &(i, eps, t)| {
        chaos::density_report(
            &model.a,
            &model.flow,
            &section.grid[i],
            eps,
            t,
            ch.density_step_time,
        )
    })
    .map_err(internal)?;

    let t_longest = *ch.density_horizon_times.last().unwrap();
    let mut summaries = Vec::new();
    let mut curves_csv = String::from("fiber_index,epsilon,horizon_time,t,running_low,running_high\n");
    for (&(i, eps, t), rep) in density_jobs.iter().zip(&reports) {
        let tail: Vec<usize> = rep
            .checkpoints
            .iter()
            .enumerate()
            .filter(|(_, &ct)| ct >= ch.density_tail_start_time)
            .map(|(k, _)| k)
            .collect();
        let tail_min = |curve: &[f64], fallback: f64| {
            tail.iter()
                .map(|&k| curve[k])
                .fold(f64::INFINITY, f64::min)
                .min(if tail.is_empty() { fallback } else { f64::INFINITY })
        };
        summaries.push(DensitySummaryDoc {
            fiber_index: i,
            epsilon: eps,
            horizon_time: t,
            step_time: rep.step,
            density_low: rep.density_low,
            density_high: rep.density_high,
            tail_running_low_min: tail_min(&rep.running_low, rep.density_low),
            tail_running_high_min: tail_min(&rep.running_high, rep.density_high),
            largest_gap_low: rep.largest_gap_low,
            largest_gap_high: rep.largest_gap_high,
            step_warning: rep.step_warning,
            off_support: rep.off_support,
        });
        if rep.step_warning {
            artifacts.warn(format!(
                "density report (fiber {i}, eps {eps}, horizon {t}) is step-limited"
            ));
        }
        if t == t_longest {
            for (k, &ct) in rep.checkpoints.iter().enumerate() {
                let _ = write!(
                    curves_csv,
                    "{i},{eps},{t},{ct},{},{}\n",
                    rep.running_low[k], rep.running_high[k]
                );
            }
        }
    }

    let mut densities_csv = String::new();
    densities_csv.push_str(
        "fiber_index,epsilon,horizon_time,step_time,density_low,density_high,tail_running_low_min,tail_running_high_min,largest_gap_low,largest_gap_high,step_warning,off_support\n",
    );
    for s in &summaries {
        let _ = write!(
            densities_csv,
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            s.fiber_index,
            s.epsilon,
            s.horizon_time,
            s.step_time,
            s.density_low,
            s.density_high,
            s.tail_running_low_min,
            s.tail_running_high_min,
            s.largest_gap_low,
            s.largest_gap_high,
            s.step_warning,
            s.off_support
        );
    }

    let total_pairs = verdicts.len().max(1);
    let doc = ChaosLyDoc {
        proxy_window_time: ch.proxy_window_time,
        proxy_total: proxy.len(),
        fibers: chosen
            .iter()
            .map(|&i| FiberDoc {
                index: i,
                theta: section.grid[i].coords().to_vec(),
                alpha: section.alpha[i],
                beta: section.beta[i],
                gap: section.gap(i),
            })
            .collect(),
        pair_horizon_time: ch.pair_horizon_time,
        li_yorke_fraction: counts.li_yorke as f64 / total_pairs as f64,
        class_counts: counts,
        cross_check_failures,
        densities: summaries,
    };

    artifacts.file("pairs.csv", pairs_csv.into_bytes());
    artifacts.file("densities.csv", densities_csv.into_bytes());
    artifacts.file("density_curves.csv", curves_csv.into_bytes());
    artifacts.json("chaos_ly.json", &doc)?;
    Ok(artifacts)
}

// ---------------------------------------------------------------------------
// chaos-ay: cover-family transport, support clouds, sensitivity
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct TransportDoc {
    span_time: f64,
    c_values: Vec<f64>,
    qualifying_fibers: usize,
    total_fibers: usize,
    max_residual_per_c: Vec<f64>,
}

#[derive(Serialize)]
struct WitnessDoc {
    seed_index: usize,
    seed_theta: Vec<f64>,
    center_theta: Vec<f64>,
    radius: f64,
    hits: usize,
    /// Hit closest to the center.
    nearest_sample_index: Option<usize>,
    nearest_time: Option<f64>,
    /// Smallest across-c section spread over all hits.
    best_shared_gap: Option<f64>,
    best_shared_time: Option<f64>,
}

#[derive(Serialize)]
struct SensitivityRowDoc {
    delta: f64,
    sup_gap_plus: f64,
    sup_gap_minus: f64,
    sup_gap: f64,
}

#[derive(Serialize)]
struct ProbeDoc {
    probe_time: f64,
    theta: Vec<f64>,
    x: f64,
    rows: Vec<SensitivityRowDoc>,
    sensitive: bool,
}

#[derive(Serialize)]
struct ChaosAyDoc {
    transport: TransportDoc,
    witness: WitnessDoc,
    max_gap: f64,
    epsilon_0: f64,
    probes: Vec<ProbeDoc>,
    all_probes_sensitive: bool,
}

fn run_chaos_ay(model: &ScalarModel, config: &ExperimentConfig) -> Result<Artifacts, RunError> {
    let mut artifacts = Artifacts::new();
    let su = &config.support;
    let section = compute_section(model, config)?;
    warn_unconverged(&mut artifacts, &section);
    let solver = config.solver.to_options();

    // Family-invariance residuals over the qualifying fibers. The transport
    // continues the section's own pullback runs, so it must integrate at the
    // pullback solver tolerance — at the looser general tolerance the re-run
    // legs land measurably away from the stored covers and the residuals
    // report that drift instead of invariance.
    let mut transport_solver = solver;
    transport_solver.tol = config.pullback.solver_tol_abs;
    let transport = chaos::eta_family_transport(
        model,
        &section,
        &su.transport_c_list,
        su.transport_span_time,
        &transport_solver,
    )
    .map_err(internal)?;
    if transport.qualifying.is_empty() {
        artifacts.warn("no fiber qualifies for the transport-invariance check".into());
    }
    let transport_doc = TransportDoc {
        span_time: transport.delta,
        c_values: transport.c_values.clone(),
        qualifying_fibers: transport.qualifying.len(),
        total_fibers: section.len(),
        max_residual_per_c: transport
            .max_residual
            .iter()
            .map(|&r| if r.is_finite() { r } else { 0.0 })
            .collect(),
    };

    // Support clouds from one seed fiber, one cloud per c.
    let seed_index = match su.seed_index {
        Some(i) => {
            if i >= section.len() {
                return Err(RunError::Config(format!(
                    "support.seed_index {i} is outside the {}-point grid",
                    section.len()
                )));
            }
            i
        }
        None => {
            // Widest gap among fibers whose covers sit inside the band: the
            // extremal covers of a wide section can ride outside it, where
            // the cloud seed would not describe the in-band family.
            let (r1, r2) = (model.dissipation.r1, model.dissipation.r2);
            let slack = 1e-9 * (1.0 + section.rho0);
            let mut best: Option<usize> = None;
            for i in 0..section.len() {
                if section.alpha[i] < r1 - slack || section.beta[i] > r2 + slack {
                    continue;
                }
                if best.map_or(true, |b| section.gap(i) > section.gap(b)) {
                    best = Some(i);
                }
            }
            best.ok_or_else(|| {
                RunError::Config(
                    "no band-interior fiber to seed the support cloud; \
                     set support.seed_index explicitly"
                        .into(),
                )
            })?
        }
    };
    let mut cloud_solver = solver;
    cloud_solver.tol = config.pullback.solver_tol_abs;
    let opts = SupportOptions {
        witness_center: None,
        witness_radius: su.witness_radius,
        solver: cloud_solver,
    };
    let samples: Vec<SupportSample> = exec::try_map_indexed(&su.cloud_c_list, |_, &c| {
        chaos::support_sample(
            model,
            &section,
            c,
            seed_index,
            su.cloud_horizon_time,
            su.cloud_step_time,
            &opts,
        )
    })
    .map_err(internal)?;

    // All clouds ride the same base orbit with the same sampling, so hit
    // indices coincide; the across-c spread at a hit is the section of the
    // cover family over that recurrence point.
    let hits: &[usize] = samples.first().map(|s| s.hits.as_slice()).unwrap_or(&[]);
    let mut best_gap: Option<f64> = None;
    let mut best_time = None;
    for &k in hits {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in &samples {
            lo = lo.min(s.cloud[k].1);
            hi = hi.max(s.cloud[k].1);
        }
        let spread = hi - lo;
        if best_gap.map_or(true, |g| spread < g) {
            best_gap = Some(spread);
            best_time = Some(k as f64 * su.cloud_step_time);
        }
    }
    if hits.is_empty() {
        artifacts.warn("no cloud sample recurs into the witness ball".into());
    }
    let witness_doc = WitnessDoc {
        seed_index,
        seed_theta: section.grid[seed_index].coords().to_vec(),
        center_theta: samples
            .first()
            .and_then(|s| s.witness_center.as_ref())
            .map(|w| w.coords().to_vec())
            .unwrap_or_default(),
        radius: su.witness_radius,
        hits: hits.len(),
        nearest_sample_index: samples.first().and_then(|s| s.witness),
        nearest_time: samples
            .first()
            .and_then(|s| s.witness)
            .map(|k| k as f64 * su.cloud_step_time),
        best_shared_gap: best_gap,
        best_shared_time: best_time,
    };

    let dim = model.flow.dim();
    let mut clouds_csv = String::from("c,sample_index,t,");
    clouds_csv.push_str(&theta_header(dim));
    clouds_csv.push_str("x,is_hit\n");
    for s in &samples {
        let hit_mask = {
            let mut mask = vec![false; s.cloud.len()];
            for &k in &s.hits {
                mask[k] = true;
            }
            mask
        };
        for (k, (w, x)) in s.cloud.iter().enumerate() {
            let mut line = format!("{},{k},{},", s.c, k as f64 * su.cloud_step_time);
            push_coords(&mut line, w);
            let _ = write!(line, "{x},{}\n", hit_mask[k]);
            clouds_csv.push_str(&line);
        }
    }

    // Sensitivity probes along the orbit of the first cover-contact fiber,
    // using the transported attractor state as the unperturbed start.
    let epsilon_0 = su.sensitivity_epsilon_factor * section.pinch_max;
    let mut probes = Vec::new();
    let mut sensitivity_csv =
        String::from("probe_time,delta,sup_gap_plus,sup_gap_minus,sup_gap\n");
    let contact = section.continuity_mask.iter().position(|&m| m);
    match contact {
        None => artifacts.warn("no cover-contact fiber found; sensitivity probes skipped".into()),
        Some(ci) => {
            let omega_c = &section.grid[ci];
            let x_c = 0.5 * (section.alpha[ci] + section.beta[ci]);
            let t_last = su
                .sensitivity_probe_times
                .iter()
                .fold(0.0f64, |m, &t| m.max(t));
            let pad = solver.max_step;
            let orbit = model.on_orbit(omega_c, -pad, t_last + pad).map_err(internal)?;
            let mut probe_solver = solver;
            probe_solver.tol = config.pullback.solver_tol_abs;
            let base = solve_on_orbit(&orbit, omega_c, x_c, (0.0, t_last), &probe_solver)
                .map_err(internal)?;

            let tables = exec::try_map_indexed(&su.sensitivity_probe_times, |_, &t0| {
                let omega_p = model.flow.advance(omega_c, t0);
                let x_p = if t0 == 0.0 { x_c } else { base.eval(t0) };
                chaos::sensitivity_probe(
                    model,
                    &omega_p,
                    x_p,
                    &[epsilon_0],
                    &su.sensitivity_delta_list,
                    su.sensitivity_horizon_time,
                    &solver,
                )
            })
            .map_err(internal)?;

            for (&t0, table) in su.sensitivity_probe_times.iter().zip(&tables) {
                let sensitive = table.sensitive.first().map_or(false, |&(_, s)| s);
                for row in &table.rows {
                    let _ = write!(
                        sensitivity_csv,
                        "{t0},{},{},{},{}\n",
                        row.delta, row.sup_gap_plus, row.sup_gap_minus, row.sup_gap
                    );
                }
                probes.push(ProbeDoc {
                    probe_time: t0,
                    theta: table.omega.coords().to_vec(),
                    x: table.x,
                    rows: table
                        .rows
                        .iter()
                        .map(|r| SensitivityRowDoc {
                            delta: r.delta,
                            sup_gap_plus: r.sup_gap_plus,
                            sup_gap_minus: r.sup_gap_minus,
                            sup_gap: r.sup_gap,
                        })
                        .collect(),
                    sensitive,
                });
            }
        }
    }
    let all_probes_sensitive = !probes.is_empty() && probes.iter().all(|p| p.sensitive);
    if !all_probes_sensitive {
        artifacts.warn("not every probe certifies the separation target".into());
    }

    let doc = ChaosAyDoc {
        transport: transport_doc,
        witness: witness_doc,
        max_gap: section.pinch_max,
        epsilon_0,
        probes,
        all_probes_sensitive,
    };
    artifacts.file("clouds.csv", clouds_csv.into_bytes());
    artifacts.file("sensitivity.csv", sensitivity_csv.into_bytes());
    artifacts.json("chaos_ay.json", &doc)?;
    Ok(artifacts)
}

// ---------------------------------------------------------------------------
// rm-build
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct HorizonValueDoc {
    horizon_time: f64,
    sup_backward: f64,
}

#[derive(Serialize)]
struct RmSummaryDoc {
    mean_sample_horizon_time: f64,
    /// Birkhoff average over [0, horizon], telescoped through the exact
    /// segment-average identity (no quadrature, no ODE error).
    mean_estimate: f64,
    sup_bound: f64,
    minimality: MinimalityCertificate,
    terms: Vec<RmTermReport>,
    anchor_envelope: Vec<HorizonValueDoc>,
    random_orbits: usize,
    /// Fraction of random orbits whose backward envelope changed less than
    /// the settled threshold on the final horizon step.
    settled_fraction: f64,
    settled_change_fraction: f64,
}

fn run_rm_build(model: &ScalarModel, config: &ExperimentConfig) -> Result<Artifacts, RunError> {
    let mut artifacts = Artifacts::new();
    let rm = &config.rm;
    let flow = &model.flow;
    let anchor = BasePoint::origin(flow.dim());

    let (series, build_report) = build_rm_coefficient(flow, &anchor, &rm.to_options())
        .map_err(|e| RunError::Config(format!("rm build: {e}")))?;
    let coefficient = QpFunction::BumpSeries(series.clone());

    // Mean over [0, L] from the telescoped primitive: the average needs only
    // the weighted segment-average height at both endpoints.
    let horizon = rm.mean_sample_horizon_time;
    let hw0 = series
        .view(&anchor, 0.0, 1.0)
        .map_err(internal)?
        .h_weighted(0.0);
    let end = flow.advance(&anchor, horizon);
    let hw1 = series
        .view(&end, 0.0, 1.0)
        .map_err(internal)?
        .h_weighted(0.0);
    let mean_estimate = -(hw1 - hw0) / horizon;

    // Primitive statistics: anchor plus seeded random orbits at each horizon.
    let mut orbits = vec![("anchor".to_string(), anchor.clone())];
    let mut rng = sub_rng(config.seed, "rm-orbits");
    for i in 0..rm.random_orbit_count {
        let coords: Vec<f64> = (0..flow.dim()).map(|_| rng.gen_range(0.0..1.0)).collect();
        orbits.push((format!("{i}"), BasePoint::new(coords).map_err(internal)?));
    }
    let all_stats: Vec<Vec<PrimitiveStats>> = exec::try_map_indexed(&orbits, |_, (_, w)| {
        rm.stats_horizon_times
            .iter()
            .map(|&t| primitive_stats(&coefficient, flow, w, t, rm.stats_step_time))
            .collect::<Result<Vec<_>, _>>()
    })
    .map_err(internal)?;

    let mut stats_csv = String::from("orbit,");
    stats_csv.push_str(&theta_header(flow.dim()));
    stats_csv.push_str(
        "horizon_time,sup_forward,inf_forward,sup_backward,inf_backward,h_a_estimate,step_warning\n",
    );
    for ((label, w), stats) in orbits.iter().zip(&all_stats) {
        for s in stats {
            let mut line = format!("{label},");
            push_coords(&mut line, w);
            let _ = write!(
                line,
                "{},{},{},{},{},{},{}\n",
                s.horizon,
                s.sup_forward,
                s.inf_forward,
                s.sup_backward,
                s.inf_backward,
                s.h_a_estimate,
                s.step_refinement_warning
            );
            stats_csv.push_str(&line);
        }
    }
    if all_stats[0].iter().any(|s| s.step_refinement_warning) {
        artifacts.warn("anchor primitive scan is step-limited; refine rm.stats_step_time".into());
    }

    // Settled check on the final horizon step of the backward envelope.
    let n_h = rm.stats_horizon_times.len();
    let mut settled = 0;
    for stats in all_stats.iter().skip(1) {
        let prev = stats[n_h - 2].sup_backward;
        let last = stats[n_h - 1].sup_backward;
        if (last - prev).abs() <= rm.settled_change_fraction * prev.abs().max(1e-9) {
            settled += 1;
        }
    }
    let settled_fraction = if rm.random_orbit_count == 0 {
        1.0
    } else {
        settled as f64 / rm.random_orbit_count as f64
    };

    let doc = RmSummaryDoc {
        mean_sample_horizon_time: horizon,
        mean_estimate,
        sup_bound: coefficient.sup_bound(),
        minimality: build_report.minimality.clone(),
        terms: build_report.terms.clone(),
        anchor_envelope: all_stats[0]
            .iter()
            .map(|s| HorizonValueDoc {
                horizon_time: s.horizon,
                sup_backward: s.sup_backward,
            })
            .collect(),
        random_orbits: rm.random_orbit_count,
        settled_fraction,
        settled_change_fraction: rm.settled_change_fraction,
    };

    artifacts.json("rm_coefficient.json", &coefficient)?;
    artifacts.file("primitive_stats.csv", stats_csv.into_bytes());
    artifacts.json("rm_summary.json", &doc)?;
    Ok(artifacts)
}
