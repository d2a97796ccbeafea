//! End-to-end binary tests: exit codes, artifact layout, manifest digests,
//! and byte-level reproducibility on configurations small enough to run in
//! seconds.

use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_skewflow"))
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run_task(task: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(task)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small hyperbolic configuration: 4x4 grid, short horizons everywhere.
const SMALL_HYPERBOLIC: &str = r#"
seed = 7

[model]
preset = "hyperbolic"

[grid]
per_axis = 4

[pullback]
horizon_max_time = 512.0

[chaos]
proxy_window_time = 10.0
proxy_fibers = 2
pairs_per_fiber = 2
pair_horizon_time = 50.0
density_horizon_times = [50.0, 100.0]
density_tail_start_time = 10.0

[support]
cloud_horizon_time = 200.0
cloud_step_time = 0.5
transport_span_time = 2.0
sensitivity_probe_times = [5.0, 10.0]
sensitivity_horizon_time = 50.0
"#;

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[model]\npreset = \"hyperbolic\"\n[solver]\ntol = 1e-9\n");
    let out = run_task("attractor", &config, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("config error"));
}

#[test]
fn out_of_range_value_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "[model]\npreset = \"hyperbolic\"\n[grid]\nper_axis = 1\n",
    );
    let out = run_task("attractor", &config, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("per_axis"));
}

#[test]
fn missing_model_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "seed = 3\n");
    let out = run_task("spectrum", &config, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
}

#[test]
fn unknown_preset_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[model]\npreset = \"parabolic\"\n");
    let out = run_task("spectrum", &config, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("parabolic"));
}

#[test]
fn missing_out_dir_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[model]\npreset = \"hyperbolic\"\n");
    let out = bin()
        .arg("spectrum")
        .arg("--config")
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("output directory"));
}

#[test]
fn manifest_lists_every_output_with_matching_digest() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_HYPERBOLIC);
    let out_dir = dir.path().join("out");
    let out = run_task("attractor", &config, &out_dir, &[]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["task"], "attractor");
    assert_eq!(manifest["seed"], 7);

    // Every file in the directory except the manifest itself is listed, and
    // each digest matches the bytes on disk.
    let listed: Vec<(String, String)> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| {
            (
                o["path"].as_str().unwrap().to_string(),
                o["sha256"].as_str().unwrap().to_string(),
            )
        })
        .collect();
    let mut on_disk: Vec<String> = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    let mut listed_names: Vec<String> = listed.iter().map(|(n, _)| n.clone()).collect();
    listed_names.sort();
    assert_eq!(on_disk, listed_names);

    for (name, digest) in &listed {
        let bytes = std::fs::read(out_dir.join(name)).unwrap();
        assert_eq!(&hex::encode(Sha256::digest(&bytes)), digest, "{name}");
    }
}

/// Byte-compare two artifact directories: every file identical except the
/// manifest, whose outputs array (everything but wall time) must agree.
fn assert_same_artifacts(a: &Path, b: &Path) {
    let mut names: Vec<String> = std::fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    for name in &names {
        let left = std::fs::read(a.join(name)).unwrap();
        let right = std::fs::read(b.join(name)).unwrap();
        if name == "manifest.json" {
            let lm: serde_json::Value = serde_json::from_slice(&left).unwrap();
            let rm: serde_json::Value = serde_json::from_slice(&right).unwrap();
            assert_eq!(lm["outputs"], rm["outputs"]);
            assert_eq!(lm["seed"], rm["seed"]);
            assert_eq!(lm["config_echo"], rm["config_echo"]);
            assert_eq!(lm["soft_warnings"], rm["soft_warnings"]);
        } else {
            assert_eq!(left, right, "{name} differs between runs");
        }
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_HYPERBOLIC);
    for task in ["attractor", "chaos-ly"] {
        let out1 = dir.path().join(format!("{task}-1"));
        let out2 = dir.path().join(format!("{task}-2"));
        let r1 = run_task(task, &config, &out1, &[]);
        let r2 = run_task(task, &config, &out2, &[]);
        assert_eq!(r1.status.code(), r2.status.code(), "{task}");
        assert_same_artifacts(&out1, &out2);
    }
}

#[test]
fn seed_override_lands_in_manifest_and_changes_draws() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_HYPERBOLIC);
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    run_task("chaos-ly", &config, &out1, &[]);
    run_task("chaos-ly", &config, &out2, &["--seed", "99"]);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out2.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], 99);

    let pairs1 = std::fs::read(out1.join("pairs.csv")).unwrap();
    let pairs2 = std::fs::read(out2.join("pairs.csv")).unwrap();
    assert_ne!(pairs1, pairs2, "different seeds must draw different pairs");
}

#[test]
fn explicit_thread_count_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_HYPERBOLIC);
    let out_dir = dir.path().join("out");
    let out = run_task("spectrum", &config, &out_dir, &["--threads", "1"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["threads"], 1);
}

#[test]
fn custom_model_document_round_trips_through_a_run() {
    let dir = tempfile::tempdir().unwrap();
    // Serialize the hyperbolic preset as a model document and run from it.
    let model = skewflow_cli::presets::hyperbolic();
    let model_path = dir.path().join("model.toml");
    std::fs::write(&model_path, toml::to_string_pretty(&model).unwrap()).unwrap();
    let config = write_config(
        dir.path(),
        &format!(
            "[model]\npath = \"{}\"\n[grid]\nper_axis = 4\n[pullback]\nhorizon_max_time = 512.0\n",
            model_path.display()
        ),
    );
    let out = run_task("attractor", &config, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
}

#[test]
fn rm_build_writes_coefficient_document() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"
[model]
preset = "hyperbolic"

[rm]
n_terms = 2
weight_list = [5.0, 5.0]
segment_time_list = [16.0, 64.0]
delta_cap_list = [0.25, 0.25]
mean_sample_horizon_time = 1e4
stats_horizon_times = [50.0, 100.0]
stats_step_time = 0.05
random_orbit_count = 5
"#,
    );
    let out_dir = dir.path().join("out");
    let out = run_task("rm-build", &config, &out_dir, &[]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    // The coefficient document deserializes back into a usable function.
    let qp: skewflow::coefficients::QpFunction = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("rm_coefficient.json")).unwrap(),
    )
    .unwrap();
    assert!(qp.sup_bound().is_finite());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("rm_summary.json")).unwrap())
            .unwrap();
    // Two terms over a short sample horizon: the telescoped mean is only
    // O(weighted-height / horizon) small, not the deep-series 1e-6 scale.
    assert!(summary["mean_estimate"].as_f64().unwrap().abs() < 1e-2);
    assert!(out_dir.join("primitive_stats.csv").exists());
}
