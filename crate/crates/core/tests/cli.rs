//! End-to-end checks of the `dhd` binary: exit codes, output schemas,
//! manifest contents, error reporting, and rerun determinism.

use std::path::Path;
use std::process::{Command, Output};

fn dhd(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dhd"))
        .args(args)
        .args(["--out", dir.to_str().unwrap()])
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn help_and_version_exit_zero() {
    for flag in ["--help", "--version"] {
        let out = Command::new(env!("CARGO_BIN_EXE_dhd"))
            .arg(flag)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{flag}");
    }
}

#[test]
fn unknown_subcommand_prints_usage_and_fails() {
    let out = Command::new(env!("CARGO_BIN_EXE_dhd"))
        .arg("frobnicate")
        .output()
        .unwrap();
    assert_ne!(out.status.code(), Some(0));
    let err = stderr(&out);
    assert!(err.contains("Usage") || err.contains("usage"), "{err}");
}

#[test]
fn bad_flag_values_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["simulate", "--r", "1.5"],
        vec!["simulate", "--eta", "2"],
        vec!["simulate", "--compensation", "magic"],
        vec!["sweep", "--r-list", "0.2,oops"],
    ] {
        let out = dhd(&args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", stderr(&out));
        assert!(stderr(&out).starts_with("error: usage:"), "{}", stderr(&out));
    }
}

#[test]
fn runtime_errors_exit_one_with_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let out = dhd(&["reconstruct", "--input", "/nonexistent/file.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.starts_with("error: io:"), "{err}");
    assert!(err.contains("/nonexistent/file.csv"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "one-line error: {err}");
}

#[test]
fn simulate_writes_contracted_file_names_and_headers() {
    let dir = tempfile::tempdir().unwrap();
    let out = dhd(
        &["simulate", "--seed", "42", "--n-samples", "500"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let samples = dir.path().join("samples_R0.50_seed42.csv");
    let manifest = dir.path().join("manifest_simulate_R0.50_seed42.json");
    assert!(samples.exists() && manifest.exists());

    let text = std::fs::read_to_string(&samples).unwrap();
    let mut lines = text.lines();
    let meta = lines.next().unwrap();
    assert!(meta.starts_with("# R=0.5 "), "{meta}");
    assert!(meta.contains("seed=42") && meta.contains("compensation=unbiased"));
    assert_eq!(lines.next().unwrap(), "q1,p2,x,y");
    assert_eq!(lines.count(), 500);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "simulate");
    assert_eq!(manifest["seed"].as_u64(), Some(42));
    assert_eq!(manifest["eta"].as_f64(), Some(0.80));
    assert_eq!(manifest["n_samples"].as_u64(), Some(500));
    assert!(manifest["version"].as_str().unwrap().contains('.'));
}

#[test]
fn config_file_drives_the_run_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("run.conf");
    std::fs::write(
        &config_path,
        "R = 0.39\nseed = 7\nn_samples = 300\neta = 1.0\n",
    )
    .unwrap();
    let out = dhd(
        &[
            "simulate",
            "--config",
            config_path.to_str().unwrap(),
            "--n-samples",
            "200",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let samples = dir.path().join("samples_R0.39_seed7.csv");
    assert!(samples.exists(), "flag must override config n_samples only");
    let text = std::fs::read_to_string(&samples).unwrap();
    assert!(text.lines().next().unwrap().contains("n=200"));
}

#[test]
fn bad_config_file_reports_line_number_and_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("bad.conf");
    std::fs::write(&config_path, "R = 0.5\nwavelength = 1550\n").unwrap();
    let out = dhd(
        &["simulate", "--config", config_path.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.starts_with("error: config:"), "{err}");
    assert!(err.contains("unknown key") && err.contains("line 2"), "{err}");
}

#[test]
fn reconstruct_emits_histogram_grid_and_fit_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = dhd(
        &["simulate", "--seed", "5", "--n-samples", "5000", "--eta", "1.0"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let samples = dir.path().join("samples_R0.50_seed5.csv");
    let out = dhd(
        &[
            "reconstruct",
            "--input",
            samples.to_str().unwrap(),
            "--bins",
            "40",
            "--refine",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let hist_text =
        std::fs::read_to_string(dir.path().join("histogram_R0.50_seed5.csv")).unwrap();
    let mut lines = hist_text.lines();
    assert!(lines.next().unwrap().starts_with("# bins_x=40 bins_y=40 range=3"));
    assert!(lines.next().unwrap().starts_with("x\\y,"));
    assert_eq!(lines.count(), 40);

    let fit: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("fit_R0.50_seed5.json")).unwrap(),
    )
    .unwrap();
    for key in [
        "center_x",
        "center_y",
        "cov_xx",
        "cov_xy",
        "cov_yy",
        "lambda_min",
        "lambda_max",
        "angle_rad",
        "sq_db",
        "asq_db",
        "n_used",
    ] {
        assert!(fit.get(key).is_some(), "fit record lacks {key}");
    }
    assert_eq!(fit["n_used"].as_u64(), Some(5000));

    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("manifest_reconstruct_R0.50_seed5.json"))
            .unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["refine"], true);
    assert_eq!(manifest["bins"].as_u64(), Some(40));
    assert!(
        manifest["loss_corrected"].is_null(),
        "no loss view at eta = 1"
    );
}

#[test]
fn reconstruct_offers_labeled_loss_correction_at_balance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dhd(
        &["simulate", "--seed", "6", "--n-samples", "20000", "--eta", "0.8"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let samples = dir.path().join("samples_R0.50_seed6.csv");
    let out = dhd(&["reconstruct", "--input", samples.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("loss-corrected (eta=0.80)"));

    let fit: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("fit_R0.50_seed6.json")).unwrap(),
    )
    .unwrap();
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("manifest_reconstruct_R0.50_seed6.json"))
            .unwrap(),
    )
    .unwrap();
    let view = &manifest["loss_corrected"];
    assert_eq!(view["eta"].as_f64(), Some(0.8));
    let (cor_sq, cor_asq) = (
        view["sq_db"].as_f64().unwrap(),
        view["asq_db"].as_f64().unwrap(),
    );
    // undoing the loss channel recovers the pre-loss levels and the raw
    // fit record keeps the attenuated ones
    assert!((cor_sq - -1.25).abs() < 0.4, "corrected sq {cor_sq}");
    assert!((cor_asq - 2.60).abs() < 0.4, "corrected asq {cor_asq}");
    assert!(cor_sq < fit["sq_db"].as_f64().unwrap());
    assert!(cor_asq > fit["asq_db"].as_f64().unwrap());
}

#[test]
fn sweep_emits_exact_schema_and_is_deterministic() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let args = [
        "sweep",
        "--seed",
        "8",
        "--n-samples",
        "2000",
        "--eta",
        "1.0",
        "--r-list",
        "0.39,0.5",
    ];
    let out = dhd(&args, dir_a.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text_a = std::fs::read_to_string(dir_a.path().join("sweep_seed8.csv")).unwrap();
    assert_eq!(
        text_a.lines().next().unwrap(),
        "R,fit_sq_db,fit_asq_db,pred_exact_sq_db,pred_exact_asq_db,pred_paper_sq_db,pred_paper_asq_db"
    );
    assert_eq!(text_a.lines().count(), 3);

    let out = dhd(&args, dir_b.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text_b = std::fs::read_to_string(dir_b.path().join("sweep_seed8.csv")).unwrap();
    assert_eq!(text_a, text_b, "sweep reruns must be identical");
}

#[test]
fn theory_reports_tables_and_normalized_surface() {
    let dir = tempfile::tempdir().unwrap();
    let out = dhd(
        &["theory", "--r", "0.39", "--seed", "1", "--bins", "50"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let table: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("theory_R0.39.json")).unwrap(),
    )
    .unwrap();
    assert!((table["unbalance_db"].as_f64().unwrap().abs() - 1.9427).abs() < 1e-3);
    assert!((table["unsqueezing_R_exact"].as_f64().unwrap() - 0.3747).abs() < 1e-3);
    assert!((table["unsqueezing_R_paper"].as_f64().unwrap() - 0.3910).abs() < 1e-3);
    assert!(table["pred_exact_sq_db"].is_number());

    let grid_text =
        std::fs::read_to_string(dir.path().join("theory_qgrid_R0.39.csv")).unwrap();
    let mut lines = grid_text.lines();
    assert!(lines.next().unwrap().starts_with("# bins_x=50 bins_y=50"));
    assert!(lines.next().unwrap().starts_with("x\\y,"));
    assert_eq!(lines.count(), 50);
}

#[test]
fn pulses_writes_traces_and_overlap_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dhd(
        &[
            "pulses",
            "--seed",
            "7",
            "--segments",
            "400",
            "--segment-len",
            "120",
            "--clearance-db",
            "16",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let traces_text = std::fs::read_to_string(dir.path().join("traces_seed7.csv")).unwrap();
    let header = traces_text.lines().next().unwrap();
    assert!(
        header.starts_with("# dt_ns=10 n=120 clearance_db=16 seed=7"),
        "{header}"
    );
    assert_eq!(traces_text.lines().count(), 401);

    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("pulses_report_seed7.json")).unwrap(),
    )
    .unwrap();
    let overlap = report["overlap"].as_f64().unwrap();
    assert!(overlap > 0.9 && overlap <= 1.0, "overlap {overlap}");
}

#[test]
fn verify_passes_at_sane_tolerance_and_fails_loudly_at_absurd_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dhd(
        &["verify", "--seed", "1", "--states", "2", "--n-samples", "20000"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("-> pass"));

    let out = dhd(
        &[
            "verify",
            "--seed",
            "1",
            "--states",
            "2",
            "--n-samples",
            "20000",
            "--max-se",
            "0.001",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1), "canary must fail loudly");
    assert!(stderr(&out).starts_with("error: verify-failed:"), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("verify_report_seed1.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["pass"], false);
}

#[test]
fn simulate_with_clearance_and_povm_compensation_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dhd(
        &[
            "simulate",
            "--seed",
            "3",
            "--n-samples",
            "400",
            "--clearance-db",
            "16",
            "--compensation",
            "povm",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text =
        std::fs::read_to_string(dir.path().join("samples_R0.50_seed3.csv")).unwrap();
    let meta = text.lines().next().unwrap();
    assert!(meta.contains("clearance_db=16") && meta.contains("compensation=povm"));
}
