use std::path::Path;
use std::process::{Command, Output};

fn tvcm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvcm"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn error_record(o: &Output) -> serde_json::Value {
    let err = String::from_utf8(o.stderr.clone()).unwrap();
    let line = err.lines().last().expect("stderr has an error line");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {line}"))
}

fn simulate(dir: &Path, n: usize, seed: u64) -> String {
    let out = dir.join(format!("sim_{n}_{seed}.csv"));
    let o = tvcm(&["simulate", "--n", &n.to_string(), "--seed", &seed.to_string(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    out.to_str().unwrap().to_string()
}

#[test]
fn fit_prints_one_row_per_coefficient() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 300, 1);
    let o = tvcm(&["fit", "--data", &data, "--t0", "3", "--s0", "5", "--h", "1.5"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t0,s0,h,k,estimate,se,lower,upper,n_eff,status");
    assert_eq!(lines.len(), 4);
    for l in &lines[1..] {
        let f: Vec<f64> = l.split(',').take(8).map(|x| x.parse().unwrap()).collect();
        assert!(f[6] < f[4] && f[4] < f[7]);
        assert!(l.ends_with(",ok"));
    }

    let o = tvcm(&["fit", "--data", &data, "--t0", "3", "--s0", "5", "--h", "1.5", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["fit"]["status"], "ok");
    assert_eq!(v["ci"].as_array().unwrap().len(), 3);
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 100, 2);

    let o = tvcm(&["fit", "--t0", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_record(&o)["error"]["kind"], "usage");

    let o = tvcm(&["fit", "--data", &data, "--t0", "1", "--s0", "1", "--h", "-1"]);
    assert_eq!(o.status.code(), Some(2));

    let o = tvcm(&["fit", "--data", "/nonexistent.csv", "--t0", "1", "--s0", "1", "--h", "1"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_record(&o)["error"]["code"], 3);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "subject_id,visit_time\n1,2\n").unwrap();
    let o = tvcm(&["fit", "--data", bad.to_str().unwrap(), "--t0", "1", "--s0", "1", "--h", "1"]);
    assert_eq!(o.status.code(), Some(3));

    let o = tvcm(&["fit", "--data", &data, "--t0", "60", "--s0", "60", "--h", "0.5"]);
    assert_eq!(o.status.code(), Some(4));
    let rec = error_record(&o);
    assert_eq!(rec["error"]["kind"], "numerical");
    assert!(rec["error"]["message"].as_str().unwrap().contains("empty"));

    let o = tvcm(&["fit", "--data", &data, "--t0", "1", "--s0", "1", "--h", "1", "--transform", "cube"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn slice_writes_tables_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 300, 3);
    let svg = dir.path().join("svg");
    let o = tvcm(&[
        "slice", "--data", &data, "--T", "8,12", "--t-step", "2", "--h", "1.5", "--truth", "--svg-dir",
        svg.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert!(text.starts_with("T,t,s,k,estimate,se,lower,upper,n_eff,status,truth\n"));
    // open slices: t ∈ {2, 4, 6} for T = 8, five points for T = 12
    assert_eq!(text.lines().count() - 1, (3 + 5) * 3);
    for name in ["slice_T8_beta1.svg", "slice_T12_beta3.svg"] {
        let s = std::fs::read_to_string(svg.join(name)).unwrap();
        assert!(s.contains("<svg") && s.contains("</svg>"));
    }
}

#[test]
fn cv_reports_selection() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 200, 4);
    let args = ["cv", "--data", &data, "--h-grid", "1,2,3", "--folds", "4", "--seed", "5", "--format", "json"];
    let o = tvcm(&args);
    assert!(o.status.success(), "{o:?}");
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let f = v["undersmoothing_factor"].as_f64().unwrap();
    assert!((f - 200f64.powf(-0.05)).abs() < 1e-12);
    let h = v["h_selected"].as_f64().unwrap();
    assert!((v["h_undersmoothed"].as_f64().unwrap() - h * f).abs() < 1e-12);
    assert_eq!(stdout(&tvcm(&args)), stdout(&o));
}

#[test]
fn kernel_moments_table() {
    let o = tvcm(&["kernel-moments", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["mu0"].as_f64().unwrap() - 0.08795404749815268).abs() < 1e-10);
    assert!((v["mass"].as_f64().unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn study_writes_outputs_and_heatmap_renders() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.toml");
    std::fs::write(
        &cfg,
        "replications = 3\n[sim]\nn = 150\nseed = 8\n[bandwidth]\npolicy = \"fixed\"\nh = 1.5\n\
         [grid]\nkind = \"rectangular\"\nt_values = [2.0, 4.0]\ns_values = [3.0, 6.0]\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = tvcm(&["study", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    for f in ["summary.csv", "records.csv", "metadata.json", "heatmap_beta1.csv", "heatmap_beta3.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let svg = dir.path().join("h.svg");
    let o = tvcm(&[
        "heatmap", "--input", out.join("heatmap_beta2.csv").to_str().unwrap(), "--out", svg.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(&svg).unwrap().matches("<rect").count(), 4);

    // a grid cell with no data makes the run fail after writing its tables
    std::fs::write(
        &cfg,
        "replications = 2\n[sim]\nn = 100\nseed = 8\n[bandwidth]\npolicy = \"fixed\"\nh = 1.0\n\
         [grid]\nkind = \"points\"\npoints = [[3.0, 5.0], [40.0, 40.0]]\n",
    )
    .unwrap();
    let o = tvcm(&["study", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(out.join("summary.csv").exists());

    std::fs::write(&cfg, "replications = 0\n").unwrap();
    let o = tvcm(&["study", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
