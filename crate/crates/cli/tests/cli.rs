//! End-to-end command-line behavior on tiny synthetic sets.

use std::path::Path;

use tempfile::tempdir;

fn s3t(args: &[&str]) -> i32 {
    let argv: Vec<String> = std::iter::once("s3t".to_string())
        .chain(args.iter().map(|s| s.to_string()))
        .collect();
    s3t_cli::run(&argv)
}

fn synth_tiny(path: &Path) {
    let code = s3t(&[
        "synth",
        "--out",
        path.to_str().unwrap(),
        "--classes",
        "2",
        "--trials-per-class",
        "8",
        "--channels",
        "4",
        "--samples",
        "80",
        "--fs",
        "250",
        "--freqs",
        "8,20",
        "--noise",
        "0.3",
        "--seed",
        "5",
    ]);
    assert_eq!(code, 0);
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(s3t(&["--help"]), 0);
    assert_eq!(s3t(&[]), 2);
    assert_eq!(s3t(&["no-such-command"]), 2);
    assert_eq!(s3t(&["synth"]), 2); // missing --out
    assert_eq!(s3t(&["synth", "--out", "/tmp/x", "--bogus", "1"]), 2);
}

#[test]
fn missing_input_file_is_a_data_error() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("w.bin");
    let code = s3t(&[
        "fit-csp",
        "--in",
        dir.path().join("absent.bin").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--rows",
        "2",
    ]);
    assert_eq!(code, 3);
}

#[test]
fn wrong_format_file_is_a_data_error() {
    let dir = tempdir().unwrap();
    let trials = dir.path().join("trials.bin");
    synth_tiny(&trials);
    // Feed a trial set where a filter is expected.
    let code = s3t(&[
        "eval",
        "--in",
        trials.to_str().unwrap(),
        "--csp",
        trials.to_str().unwrap(),
        "--ckpt",
        trials.to_str().unwrap(),
    ]);
    assert_eq!(code, 3);
}

#[test]
fn full_modular_pipeline_runs() {
    let dir = tempdir().unwrap();
    let trials = dir.path().join("trials.bin");
    let prep = dir.path().join("prep.bin");
    let stats = dir.path().join("prep.stats");
    let filter = dir.path().join("filter.bin");
    let ckpt = dir.path().join("model.ckpt");
    let report = dir.path().join("report.txt");

    synth_tiny(&trials);
    assert_eq!(
        s3t(&[
            "preprocess",
            "--in",
            trials.to_str().unwrap(),
            "--out",
            prep.to_str().unwrap(),
            "--band",
            "4:40",
            "--stats-out",
            stats.to_str().unwrap(),
        ]),
        0
    );
    assert!(stats.exists());
    assert_eq!(
        s3t(&[
            "fit-csp",
            "--in",
            prep.to_str().unwrap(),
            "--out",
            filter.to_str().unwrap(),
            "--rows",
            "2",
        ]),
        0
    );
    assert_eq!(
        s3t(&[
            "train",
            "--in",
            prep.to_str().unwrap(),
            "--csp",
            filter.to_str().unwrap(),
            "--out",
            ckpt.to_str().unwrap(),
            "--slice",
            "8",
            "--heads",
            "2",
            "--kc",
            "9",
            "--na",
            "1",
            "--epochs",
            "2",
            "--batch",
            "8",
            "--seed",
            "3",
        ]),
        0
    );
    assert_eq!(
        s3t(&[
            "eval",
            "--in",
            prep.to_str().unwrap(),
            "--csp",
            filter.to_str().unwrap(),
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--out",
            report.to_str().unwrap(),
        ]),
        0
    );
    let parsed = s3t_core::io::read_report(&report).unwrap();
    assert_eq!(parsed.total_trials(), 16);

    // params on the checkpoint.
    assert_eq!(s3t(&["params", "--ckpt", ckpt.to_str().unwrap()]), 0);
}

#[test]
fn params_counts_the_2a_configuration() {
    assert_eq!(
        s3t(&["params", "--channels", "16", "--samples", "1000", "--classes", "4"]),
        0
    );
}

#[test]
fn cv_runs_and_writes_a_report() {
    let dir = tempdir().unwrap();
    let trials = dir.path().join("trials.bin");
    let report = dir.path().join("cv.txt");
    synth_tiny(&trials);
    let code = s3t(&[
        "cv",
        "--in",
        trials.to_str().unwrap(),
        "--band",
        "none",
        "--rows",
        "2",
        "--folds",
        "2",
        "--slice",
        "8",
        "--heads",
        "2",
        "--kc",
        "9",
        "--na",
        "1",
        "--epochs",
        "2",
        "--batch",
        "8",
        "--seed",
        "4",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let parsed = s3t_core::io::read_report(&report).unwrap();
    assert_eq!(parsed.fold_accuracies.len(), 2);
    assert_eq!(parsed.total_trials(), 16);
}

#[test]
fn cv_with_same_seed_is_byte_identical() {
    let dir = tempdir().unwrap();
    let trials = dir.path().join("trials.bin");
    synth_tiny(&trials);
    let run_once = |name: &str| {
        let report = dir.path().join(name);
        let code = s3t(&[
            "cv",
            "--in",
            trials.to_str().unwrap(),
            "--band",
            "none",
            "--rows",
            "2",
            "--folds",
            "2",
            "--slice",
            "8",
            "--heads",
            "2",
            "--kc",
            "9",
            "--na",
            "1",
            "--epochs",
            "2",
            "--batch",
            "8",
            "--seed",
            "11",
            "--out",
            report.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        std::fs::read(report).unwrap()
    };
    assert_eq!(run_once("a.txt"), run_once("b.txt"));
}

#[test]
fn sweep_prints_one_row_per_value() {
    let dir = tempdir().unwrap();
    let trials = dir.path().join("trials.bin");
    let csv = dir.path().join("sweep.csv");
    synth_tiny(&trials);
    let code = s3t(&[
        "sweep",
        "--param",
        "slice_d",
        "--values",
        "8,16",
        "--in",
        trials.to_str().unwrap(),
        "--band",
        "none",
        "--rows",
        "2",
        "--folds",
        "2",
        "--heads",
        "2",
        "--kc",
        "9",
        "--na",
        "1",
        "--epochs",
        "2",
        "--batch",
        "8",
        "--seed",
        "4",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let table = std::fs::read_to_string(csv).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3); // header + 2 values
    assert!(lines[1].starts_with("8,"));
    assert!(lines[2].starts_with("16,"));
}

#[test]
fn ablate_requires_a_stage() {
    let dir = tempdir().unwrap();
    let trials = dir.path().join("trials.bin");
    synth_tiny(&trials);
    let code = s3t(&[
        "ablate",
        "--drop",
        "nothing",
        "--in",
        trials.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn preprocess_rewindows_trials() {
    let dir = tempdir().unwrap();
    let trials = dir.path().join("trials.bin");
    let prep = dir.path().join("prep.bin");
    synth_tiny(&trials); // 80 samples at 250 Hz = 0.32 s per trial
    let code = s3t(&[
        "preprocess",
        "--in",
        trials.to_str().unwrap(),
        "--out",
        prep.to_str().unwrap(),
        "--band",
        "none",
        "--window",
        "0.1:0.3", // 50 samples at 250 Hz
    ]);
    assert_eq!(code, 0);
    let set = s3t_core::io::read_trial_set(&prep).unwrap();
    assert_eq!(set.samples(), 50);
    assert_eq!(set.trials.len(), 16);
}

#[test]
fn nyquist_violation_is_a_usage_error() {
    let dir = tempdir().unwrap();
    let trials = dir.path().join("trials.bin");
    let out = dir.path().join("prep.bin");
    synth_tiny(&trials);
    let code = s3t(&[
        "preprocess",
        "--in",
        trials.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--band",
        "4:200",
    ]);
    assert_eq!(code, 2);
}
