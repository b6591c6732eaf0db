//! End-to-end harness tests on small synthetic IDX fixtures: the experiment
//! pipeline, replay equivalence between the manifest and a re-scored stats
//! file, figure-data emission, and the failure path.

use rcti_cli::config::{ConfigBuilder, RunConfig};
use rcti_cli::experiment::{cmd_experiment, cmd_figure_data, cmd_rcti};
use rcti_cli::manifest::ManifestRctiRow;
use rcti_cli::stats::{read_rcti_csv, read_stats_csv, rcti_rows_from_stats, ModelFamily};
use rcti_core::dataset::save_idx;
use rcti_core::rcti::CarbonBasis;
use std::path::Path;
use std::process::Command;

/// Writes synthetic train/test IDX pairs and returns a config builder with
/// the data paths filled in.
fn fixture_config(dir: &Path, train_n: usize, test_n: usize) -> ConfigBuilder {
    let train = rcti_core::synth::generate(train_n, 7001);
    let test = rcti_core::synth::generate(test_n, 7002);
    let paths = [
        dir.join("train-images.idx"),
        dir.join("train-labels.idx"),
        dir.join("test-images.idx"),
        dir.join("test-labels.idx"),
    ];
    save_idx(&train, &paths[0], &paths[1]).unwrap();
    save_idx(&test, &paths[2], &paths[3]).unwrap();
    let mut b = ConfigBuilder::default();
    let text = format!(
        "data.train_images = {}\ndata.train_labels = {}\ndata.test_images = {}\ndata.test_labels = {}\n",
        paths[0].display(),
        paths[1].display(),
        paths[2].display(),
        paths[3].display()
    );
    b.apply_text(&text).unwrap();
    b
}

fn small_run_config(dir: &Path) -> RunConfig {
    let mut b = fixture_config(dir, 700, 200);
    b.apply_text(&format!(
        "train.epochs = 1\n\
         train.train_subset = 600\n\
         train.test_subset = 200\n\
         attack.epsilon_grid = 0,0.1,0.2\n\
         hardware.sampling_interval_ms = 20\n\
         run.output_dir = {}\n\
         run.seed = 11\n",
        dir.join("out").display()
    ))
    .unwrap();
    b.finalize().unwrap()
}

#[test]
fn experiment_writes_every_artifact_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run_config(dir.path());
    let output = cmd_experiment(&cfg).unwrap();

    // Row structure: one baseline and one robust row per grid point.
    assert_eq!(output.stats_rows.len(), 6);
    let baselines = output
        .stats_rows
        .iter()
        .filter(|r| r.model == ModelFamily::Baseline)
        .count();
    assert_eq!(baselines, 3);
    assert_eq!(output.rcti_rows.len(), 3);

    let out = dir.path().join("out");
    for file in ["stats.csv", "spans.csv", "rcti.csv", "manifest.json"] {
        assert!(out.join(file).exists(), "{file} missing");
    }
    for file in ["delta_r.csv", "delta_c.csv", "rcti.csv"] {
        assert!(out.join("figures").join(file).exists(), "figures/{file} missing");
    }
    assert!(out.join("models").join("baseline.bin").exists());
    assert!(out.join("models").join("robust_eps0.1.bin").exists());
    assert!(out.join("models").join("robust_eps0.2.bin").exists());

    // Stats rows survive the CSV round trip bit-for-bit.
    let reread = read_stats_csv(&out.join("stats.csv")).unwrap();
    assert_eq!(reread, output.stats_rows);

    // Per-span energies reproduce each row's totals.
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    let spans = manifest["spans"].as_array().unwrap();
    for row in &output.stats_rows {
        let prefix = format!(
            "{}/{}/eps{}/",
            row.attack,
            row.model.name(),
            row.epsilon
        );
        let total: f64 = spans
            .iter()
            .filter(|s| s["label"].as_str().unwrap().starts_with(&prefix))
            .map(|s| s["total_energy_kwh"].as_f64().unwrap())
            .sum();
        assert!(
            (total - row.total_energy_kwh).abs() <= 1e-9,
            "row {prefix}: span sum {total} vs row total {}",
            row.total_energy_kwh
        );
    }

    // Replay equivalence: re-scoring the written stats file reproduces the
    // manifest's embedded records bit-for-bit.
    let rescored =
        rcti_rows_from_stats(&reread, CarbonBasis::TotalEnergyKwh, &cfg.rcti).unwrap();
    assert_eq!(rescored, output.rcti_rows);
    let manifest_rows: Vec<ManifestRctiRow> =
        output.rcti_rows.iter().map(ManifestRctiRow::from).collect();
    let embedded: Vec<serde_json::Value> = manifest["rcti"].as_array().unwrap().clone();
    assert_eq!(embedded.len(), manifest_rows.len());
    for (got, expected) in embedded.iter().zip(&manifest_rows) {
        assert_eq!(got["attack"], expected.attack.as_str());
        assert_eq!(got["delta_r"], expected.delta_r.as_str());
        assert_eq!(got["rcti"], expected.rcti.as_str());
        assert_eq!(got["elasticity"], expected.elasticity.as_str());
    }

    // cmd_rcti over the written stats equals the written rcti.csv.
    let rcti2 = dir.path().join("rescored.csv");
    cmd_rcti(
        &out.join("stats.csv"),
        &rcti2,
        CarbonBasis::TotalEnergyKwh,
        &cfg.rcti,
    )
    .unwrap();
    assert_eq!(
        std::fs::read_to_string(out.join("rcti.csv")).unwrap(),
        std::fs::read_to_string(&rcti2).unwrap()
    );

    // figure-data on the written rcti.csv preserves row counts.
    let fig_dir = dir.path().join("figs");
    let files = cmd_figure_data(&out.join("rcti.csv"), &fig_dir).unwrap();
    assert_eq!(files.len(), 3);
    for file in files {
        let text = std::fs::read_to_string(file).unwrap();
        assert_eq!(text.lines().count(), 1 + output.rcti_rows.len());
    }
}

#[test]
fn degenerate_grid_emits_baseline_stats_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = fixture_config(dir.path(), 300, 100);
    b.apply_text(&format!(
        "train.epochs = 1\n\
         train.train_subset = 300\n\
         train.test_subset = 100\n\
         attack.epsilon_grid = 0\n\
         run.output_dir = {}\n",
        dir.path().join("out0").display()
    ))
    .unwrap();
    let cfg = b.finalize().unwrap();
    let output = cmd_experiment(&cfg).unwrap();
    assert_eq!(output.stats_rows.len(), 1);
    assert_eq!(output.stats_rows[0].model, ModelFamily::Baseline);
    assert!(output.rcti_rows.is_empty());
    // rcti.csv holds only the header.
    let text = std::fs::read_to_string(dir.path().join("out0").join("rcti.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
}

#[test]
fn failed_stage_writes_failed_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = ConfigBuilder::default();
    b.apply_text(&format!(
        "data.train_images = {}\n\
         data.train_labels = {}\n\
         data.test_images = {}\n\
         data.test_labels = {}\n\
         run.output_dir = {}\n",
        dir.path().join("missing-images.idx").display(),
        dir.path().join("missing-labels.idx").display(),
        dir.path().join("missing-images.idx").display(),
        dir.path().join("missing-labels.idx").display(),
        dir.path().join("out").display()
    ))
    .unwrap();
    let cfg = b.finalize().unwrap();
    let err = match cmd_experiment(&cfg) {
        Err(err) => err,
        Ok(_) => panic!("experiment unexpectedly succeeded"),
    };
    assert_eq!(err.stage, "load-data");
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out").join("manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["status"], "failed");
    assert_eq!(manifest["failed_stage"], "load-data");
}

#[test]
fn binary_rcti_and_figure_data_round_trip() {
    // Drive the compiled binary over a handwritten stats fixture.
    let dir = tempfile::tempdir().unwrap();
    let stats = dir.path().join("stats.csv");
    std::fs::write(
        &stats,
        "attack,model,epsilon,accuracy_pct,cpu_energy_kwh,ram_energy_kwh,total_energy_kwh,duration_s,emissions_g,spans\n\
         fg,baseline,0,98.42,3.2e-5,3.65e-6,3.63e-5,2.773725,3.74e-6,reference\n\
         fg,robust,0,97.36,2.76e-5,3.08e-6,3.068e-5,2.340474,8.75e-6,reference\n",
    )
    .unwrap();
    let out = dir.path().join("scored.csv");
    let status = Command::new(env!("CARGO_BIN_EXE_rcti"))
        .args(["rcti", "--stats"])
        .arg(&stats)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let rows = read_rcti_csv(&out).unwrap();
    assert_eq!(rows.len(), 1);
    let delta_r = rows[0].record.delta_r.as_finite().unwrap();
    assert!((delta_r - (97.36 - 98.42) / 98.42).abs() < 1e-12);

    let fig_dir = dir.path().join("figures");
    let status = Command::new(env!("CARGO_BIN_EXE_rcti"))
        .args(["figure-data", "--rcti"])
        .arg(&out)
        .arg("--out-dir")
        .arg(&fig_dir)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(fig_dir.join("delta_r.csv").exists());
}

#[test]
fn binary_reports_bad_config_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.conf");
    std::fs::write(&config, "bogus.key = 1\n").unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_rcti"))
        .args(["experiment", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("unknown key"), "stderr: {stderr}");
}

#[test]
fn empty_stats_csv_is_rejected_by_rcti_command() {
    let dir = tempfile::tempdir().unwrap();
    let stats = dir.path().join("empty.csv");
    std::fs::write(&stats, "").unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_rcti"))
        .args(["rcti", "--stats"])
        .arg(&stats)
        .arg("--out")
        .arg(dir.path().join("out.csv"))
        .output()
        .unwrap();
    assert!(!output.status.success());
}
