//! Drives the compiled binary through simulate -> fit -> predict ->
//! evaluate -> report and checks the exit-code contract on bad inputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_eivtraj"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn csv_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap_or_else(|_| panic!("missing {}", path.display()))
        .lines()
        .map(str::to_string)
        .collect()
}

/// Simulates a small toy cohort into `dir` and returns (data dir, meal count
/// on training days).
fn simulate_into(root: &Path, seed: u64) -> (PathBuf, usize) {
    let data = root.join(format!("data{seed}"));
    let out = run(&[
        "simulate",
        "--out-dir",
        &s(&data),
        "--protocol",
        "toy",
        "--n-patients",
        "2",
        "--meals-per-patient",
        "6",
        "--covariate-dim",
        "2",
        "--cadence-min",
        "60",
        "--noise-sd",
        "0.05",
        "--seed",
        &seed.to_string(),
    ]);
    assert_eq!(code(&out), 0, "simulate failed: {}", stderr(&out));
    for f in ["glucose.csv", "meals.csv", "truth.json", "manifest.json"] {
        assert!(data.join(f).exists(), "simulate did not write {f}");
    }
    let train_meals = csv_rows(&data.join("meals.csv"))
        .iter()
        .skip(1)
        .filter(|row| {
            let t: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
            t < 2880.0
        })
        .count();
    (data, train_meals)
}

fn fit_into(data: &Path, dir: &Path, variant: &str, seed: u64) -> Output {
    run(&[
        "fit",
        "--glucose",
        &s(&data.join("glucose.csv")),
        "--meals",
        &s(&data.join("meals.csv")),
        "--out-dir",
        &s(dir),
        "--variant",
        variant,
        "--chains",
        "2",
        "--warmup",
        "80",
        "--draws",
        "60",
        "--max-tree-depth",
        "7",
        "--seed",
        &seed.to_string(),
    ])
}

#[test]
fn pipeline_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let (data, train_meals) = simulate_into(root, 3);

    // fit the full model; tiny budgets may leave R-hat above the gate, which
    // must still write artifacts and exit 2
    let fit_a = root.join("fit_a");
    let out = fit_into(&data, &fit_a, "hier-time-cov", 5);
    assert!(
        [0, 2].contains(&code(&out)),
        "fit exited {}: {}",
        code(&out),
        stderr(&out)
    );
    for f in [
        "draws.csv",
        "summary.json",
        "trajectory.csv",
        "latents.csv",
        "manifest.json",
    ] {
        assert!(fit_a.join(f).exists(), "fit did not write {f}");
    }
    if code(&out) == 2 {
        assert!(stderr(&out).contains("R-hat"), "exit 2 without a warning");
    }

    let draw_rows = csv_rows(&fit_a.join("draws.csv"));
    assert!(draw_rows[0].starts_with("chain,draw,logp,divergent,"));
    assert_eq!(draw_rows.len(), 1 + 2 * 60, "one row per retained draw");

    // full-model latent table: one row per training meal, offsets and deltas
    let latent_rows = csv_rows(&fit_a.join("latents.csv"));
    assert_eq!(
        latent_rows[0],
        "patient_id,event_index,time_min,offset_mean,offset_sd,delta_mean,delta_sd"
    );
    assert_eq!(latent_rows.len(), 1 + train_meals);

    // trajectory covers the whole grid: 3 days x 24 points x 2 patients
    assert_eq!(csv_rows(&fit_a.join("trajectory.csv")).len(), 1 + 2 * 72);

    // identical seed and inputs give byte-identical draws
    let fit_b = root.join("fit_b");
    let out = fit_into(&data, &fit_b, "hier-time-cov", 5);
    assert!([0, 2].contains(&code(&out)), "{}", stderr(&out));
    assert_eq!(
        fs::read(fit_a.join("draws.csv")).unwrap(),
        fs::read(fit_b.join("draws.csv")).unwrap(),
        "same seed must reproduce draws byte for byte"
    );

    // a different seed must not
    let fit_c = root.join("fit_c");
    let out = fit_into(&data, &fit_c, "hier-time-cov", 6);
    assert!([0, 2].contains(&code(&out)), "{}", stderr(&out));
    assert_ne!(
        fs::read(fit_a.join("draws.csv")).unwrap(),
        fs::read(fit_c.join("draws.csv")).unwrap()
    );

    // baseline variant without latent blocks
    let fit_hier = root.join("fit_hier");
    let out = fit_into(&data, &fit_hier, "hier", 5);
    assert!([0, 2].contains(&code(&out)), "{}", stderr(&out));
    let latent_rows = csv_rows(&fit_hier.join("latents.csv"));
    assert_eq!(
        latent_rows[0], "patient_id,event_index,time_min",
        "no offset columns without the time-EIV component"
    );

    // predict writes only the test day
    let out = run(&["predict", "--fit-dir", &s(&fit_a)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = csv_rows(&fit_a.join("predict/trajectory.csv"));
    assert_eq!(rows.len(), 1 + 2 * 24);
    for row in rows.iter().skip(1) {
        let t: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!(t >= 2880.0, "training-day row in prediction: {row}");
    }

    // evaluate against the hier baseline with ground truth
    let out = run(&[
        "evaluate",
        "--fit-dir",
        &s(&fit_a),
        "--baseline-dir",
        &s(&fit_hier),
        "--truth",
        &s(&data.join("truth.json")),
        "--label",
        "full",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report_path = fit_a.join("eval/metric_report.json");
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(v["label"], "full");
    for k in ["m1", "m2", "m3", "m4", "m5"] {
        let val = v["metrics"][k].as_f64().unwrap();
        assert!(val.is_finite(), "{k} = {val}");
    }
    for k in ["m3", "m4", "m5"] {
        assert!(v["metrics"][k].as_f64().unwrap() >= 0.0);
    }
    assert!(v["metrics"]["loo"]["elpd_loo"].as_f64().unwrap().is_finite());
    assert!(v["metrics"]["loo"]["p_loo"].as_f64().unwrap() >= 0.0);
    let cos = v["cosine_beta_h"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&cos), "cosine {cos}");
    if let Some(p) = v["u_test"]["p_one_sided"].as_f64() {
        assert!(p > 0.0 && p <= 1.0, "p {p}");
    }
    // one Pareto row per training observation
    assert_eq!(csv_rows(&fit_a.join("eval/pareto_k.csv")).len(), 1 + 2 * 48);

    // identical fit as its own baseline: no evidence of improvement
    let out = run(&[
        "evaluate",
        "--fit-dir",
        &s(&fit_a),
        "--baseline-dir",
        &s(&fit_b),
        "--out-dir",
        &s(&root.join("eval_self")),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("eval_self/metric_report.json")).unwrap())
            .unwrap();
    if let Some(p) = v["u_test"]["p_one_sided"].as_f64() {
        assert!(p >= 0.4, "tied errors should not look like an improvement: p {p}");
    }

    // render both evaluations
    let out = run(&[
        "report",
        &s(&report_path),
        &s(&root.join("eval_self/metric_report.json")),
        "--out-dir",
        &s(&root.join("report")),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = stdout(&out);
    assert!(table.contains("model") && table.contains("M4"), "{table}");
    assert!(table.contains("full"));
    assert!(root.join("report/report.txt").exists());
    assert!(root.join("report/manifest.json").exists());

    // manifests carry hashes for every artifact they name
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fit_a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "fit");
    let hash = m["artifacts"]["draws.csv"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
}

#[test]
fn missing_input_exits_3() {
    let out = run(&[
        "fit",
        "--glucose",
        "/nonexistent/g.csv",
        "--meals",
        "/nonexistent/m.csv",
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn duplicate_timestamp_exits_3_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let g = tmp.path().join("g.csv");
    let m = tmp.path().join("m.csv");
    fs::write(&g, "patient_id,time_min,glucose\na,0,5\na,15,5.1\na,15,5.2\n").unwrap();
    fs::write(&m, "patient_id,time_min,starch,sugar,fiber,fat,protein\n").unwrap();
    let out = run(&["fit", "--glucose", &s(&g), "--meals", &s(&m)]);
    assert_eq!(code(&out), 3);
    let err = stderr(&out);
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn from_fit_without_fit_dir_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate",
        "--protocol",
        "from-fit",
        "--out-dir",
        &s(&tmp.path().join("x")),
    ]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("--fit-dir"), "{}", stderr(&out));
}

#[test]
fn report_on_missing_file_exits_3() {
    let out = run(&["report", "/nonexistent/report.json"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn unknown_flag_exits_3() {
    let out = run(&["fit", "--bogus-flag"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn mismatched_dataset_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let (data, train_meals) = simulate_into(root, 11);
    assert!(train_meals > 0);
    // cheap single-chain fit of a variant whose parameter blocks depend on
    // the meal schedule
    let fit = root.join("fit");
    let out = run(&[
        "fit",
        "--glucose",
        &s(&data.join("glucose.csv")),
        "--meals",
        &s(&data.join("meals.csv")),
        "--out-dir",
        &s(&fit),
        "--variant",
        "hier-time",
        "--chains",
        "1",
        "--warmup",
        "40",
        "--draws",
        "20",
        "--max-tree-depth",
        "6",
        "--seed",
        "1",
    ]);
    assert!([0, 2].contains(&code(&out)), "{}", stderr(&out));

    // no meals at all -> different parameter blocks -> refuse
    let other = root.join("other");
    let out = run(&[
        "simulate",
        "--out-dir",
        &s(&other),
        "--protocol",
        "toy",
        "--n-patients",
        "2",
        "--meals-per-patient",
        "0",
        "--covariate-dim",
        "2",
        "--cadence-min",
        "60",
        "--seed",
        "12",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = run(&[
        "predict",
        "--fit-dir",
        &s(&fit),
        "--glucose",
        &s(&other.join("glucose.csv")),
        "--meals",
        &s(&other.join("meals.csv")),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("do not match"), "{}", stderr(&out));
}
