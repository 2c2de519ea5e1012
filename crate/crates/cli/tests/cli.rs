//! End-to-end tests driving the compiled `psas` binary.

use std::process::Command;

fn psas() -> Command {
    Command::new(env!("CARGO_BIN_EXE_psas"))
}

#[test]
fn run_then_report_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runA");
    let status = psas()
        .args([
            "run",
            "--problem",
            "quad",
            "--modes",
            "ns,bt",
            "--budget",
            "500",
            "--macroreps",
            "2",
            "--seed",
            "11",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    for file in [
        "progress.csv",
        "summary.csv",
        "strata_log.csv",
        "selection_freq.csv",
        "manifest.toml",
    ] {
        assert!(out.join(file).exists(), "missing {file}");
    }

    let before = std::fs::read(out.join("summary.csv")).unwrap();
    std::fs::remove_file(out.join("summary.csv")).unwrap();
    let status = psas().args(["report", "--dir"]).arg(&out).status().unwrap();
    assert!(status.success());
    let after = std::fs::read(out.join("summary.csv")).unwrap();
    assert_eq!(before, after, "report must rebuild the identical summary");
}

#[test]
fn config_file_with_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let config_path = tmp.path().join("exp.toml");
    std::fs::write(
        &config_path,
        "problem = \"quad\"\nmodes = [\"ns\"]\nmacroreps = 2\nbudget = 400\n\
         lambda0 = 10\nn_points = 800\ntheta0 = [0.8]\ndelta0 = 0.1\nseed = 9\n",
    )
    .unwrap();
    let out = tmp.path().join("runB");
    let status = psas()
        .args(["run", "--config"])
        .arg(&config_path)
        .args(["--seed", "10", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let manifest = std::fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 10"), "flag must override config");
    assert!(manifest.contains("problem = \"quad\""));
}

#[test]
fn sweep_produces_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweepA");
    let status = psas()
        .args([
            "sweep",
            "--problem",
            "quad",
            "--modes",
            "ns",
            "--budget",
            "300",
            "--macroreps",
            "2",
            "--seed",
            "12",
            "--grid",
            "delta0=0.05,0.2",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("sweep_summary.csv").exists());
    assert!(out.join("delta0-0.05").join("progress.csv").exists());
    assert!(out.join("delta0-0.2").join("progress.csv").exists());
}

#[test]
fn startup_errors_exit_nonzero_with_diagnostic() {
    let output = psas()
        .args(["run", "--problem", "no-such-problem", "--out", "/tmp/psas-err"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("unknown problem"), "stderr: {stderr}");

    let output = psas().args(["report", "--dir"]).arg("/definitely/missing").output().unwrap();
    assert!(!output.status.success());
}

#[test]
fn dataset_csv_is_a_loadable_interchange() {
    let tmp = tempfile::tempdir().unwrap();
    let config_path = tmp.path().join("exp.toml");
    let out_a = tmp.path().join("genA");
    let out_b = tmp.path().join("genB");
    std::fs::write(
        &config_path,
        format!(
            "problem = \"wake\"\nmodes = [\"ns\"]\nmacroreps = 1\nbudget = 300\n\
             lambda0 = 10\nn_points = 600\nexport_data = true\nseed = 4\n\
             out_dir = \"{}\"\n",
            out_a.display()
        ),
    )
    .unwrap();
    assert!(psas().args(["run", "--config"]).arg(&config_path).status().unwrap().success());
    let exported = out_a.join("dataset.csv");
    assert!(exported.exists());

    // Re-run from the exported CSV; trajectories must match the generated run.
    let config2 = tmp.path().join("exp2.toml");
    std::fs::write(
        &config2,
        format!(
            "problem = \"wake\"\nmodes = [\"ns\"]\nmacroreps = 1\nbudget = 300\n\
             lambda0 = 10\ndata_csv = \"{}\"\nseed = 4\nout_dir = \"{}\"\n",
            exported.display(),
            out_b.display()
        ),
    )
    .unwrap();
    assert!(psas().args(["run", "--config"]).arg(&config2).status().unwrap().success());
    let a = std::fs::read(out_a.join("progress.csv")).unwrap();
    let b = std::fs::read(out_b.join("progress.csv")).unwrap();
    assert_eq!(a, b);
}
