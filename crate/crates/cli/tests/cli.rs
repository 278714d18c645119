use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use duocascade::records::{write_prediction_records, ImageBuffer, PredictionRecord};
use duocascade::synthetic::{generate, random_images, SyntheticParams};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_duocascade"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_records(path: &Path, records: &[PredictionRecord]) {
    write_prediction_records(fs::File::create(path).unwrap(), records).unwrap();
}

/// 40 synthetic samples as `small.jsonl` / `large.jsonl`, plus one image
/// per id under `images/`.
fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let params = SyntheticParams {
        samples: 40,
        ..SyntheticParams::default()
    };
    let (a, b) = generate(&params);
    write_records(&dir.path().join("small.jsonl"), &a);
    write_records(&dir.path().join("large.jsonl"), &b);
    let images = dir.path().join("images");
    fs::create_dir(&images).unwrap();
    for (r, im) in a.iter().zip(random_images(a.len(), 16, 9)) {
        fs::write(images.join(format!("{}.pgm", r.id)), im.to_pnm()).unwrap();
    }
    fs::write(dir.path().join("costs.json"), COSTS).unwrap();
    dir
}

const COSTS: &str = r#"{"stages": {
    "memory_lookup": {"energy_wh": 1e-7, "latency_ms": 0.2},
    "memory_insert": {"energy_wh": 1e-7, "latency_ms": 0.1},
    "model_a": {"energy_wh": 2.5e-5, "latency_ms": 22.3},
    "model_b": {"energy_wh": 4.1e-5, "latency_ms": 42.4}
}}"#;

fn calibrated(dir: &Path, memory: &str, name: &str) -> PathBuf {
    let o = run(
        dir,
        &["calibrate", "--records-a", "small.jsonl", "--records-b", "large.jsonl", "--score", "diff", "--out", "tmp.json"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.join("tmp.json")).unwrap();
    let path = dir.join(name);
    fs::write(&path, text.replace("\"none\"", &format!("\"{memory}\""))).unwrap();
    path
}

#[test]
fn help_on_every_subcommand() {
    for sub in ["complementarity", "calibrate", "run", "hash", "duplication", "report"] {
        let o = bin().args([sub, "--help"]).output().unwrap();
        assert!(o.status.success(), "{sub}");
        assert!(stdout(&o).contains("Usage"), "{sub}");
    }
}

#[test]
fn unknown_flag_is_usage_error() {
    let o = bin().args(["hash", "--method", "dhash", "--bogus", "x.pgm"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn complementarity_three_models() {
    let ws = workspace();
    let dir = ws.path();
    let mut third = duocascade::records::parse_prediction_records(
        fs::read_to_string(dir.join("small.jsonl")).unwrap().as_bytes(),
    )
    .unwrap();
    for r in &mut third {
        r.logits.reverse();
    }
    write_records(&dir.join("third.jsonl"), &third);

    let o = run(dir, &["complementarity", "small.jsonl", "large.jsonl", "third.jsonl", "--out", "m.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.join("m.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "model,small,large,third");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("small,0.000000,"));
    assert!(stdout(&o).contains("best pair: "), "{}", stdout(&o));
}

#[test]
fn complementarity_errors() {
    let ws = workspace();
    let dir = ws.path();
    let o = run(dir, &["complementarity", "small.jsonl", "--out", "m.csv"]);
    assert_eq!(o.status.code(), Some(2));

    let mut short = duocascade::records::parse_prediction_records(
        fs::read_to_string(dir.join("large.jsonl")).unwrap().as_bytes(),
    )
    .unwrap();
    short.pop();
    write_records(&dir.join("short.jsonl"), &short);
    let o = run(dir, &["complementarity", "small.jsonl", "short.jsonl", "--out", "m.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("small with short"), "{}", stderr(&o));
}

#[test]
fn calibrate_writes_config_and_curve() {
    let ws = workspace();
    let dir = ws.path();
    let o = run(
        dir,
        &[
            "calibrate", "--records-a", "small.jsonl", "--records-b", "large.jsonl", "--score", "diff", "--out",
            "cfg.json", "--curve", "curve.csv",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let config = duocascade::CascadeConfig::from_json(&fs::read_to_string(dir.join("cfg.json")).unwrap()).unwrap();
    assert_eq!(config.first_model, "small");
    assert!(config.post_check);
    let curve = fs::read_to_string(dir.join("curve.csv")).unwrap();
    let lambdas: Vec<f64> = curve.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(curve.lines().next(), Some("lambda,accuracy,usage"));
    assert_eq!((lambdas[0], *lambdas.last().unwrap()), (0.0, 1.0));

    let o = run(
        dir,
        &["calibrate", "--records-a", "small.jsonl", "--records-b", "large.jsonl", "--score", "auto", "--out", "auto.json"],
    );
    assert!(o.status.success(), "{}", stderr(&o));

    let o = run(
        dir,
        &[
            "calibrate", "--records-a", "small.jsonl", "--records-b", "large.jsonl", "--score", "entropy",
            "--no-post-check", "--out", "np.json",
        ],
    );
    assert!(o.status.success());
    assert!(fs::read_to_string(dir.join("np.json")).unwrap().contains("\"post_check\": false"));

    let o = run(
        dir,
        &[
            "calibrate", "--records-a", "small.jsonl", "--records-b", "large.jsonl", "--score", "auto",
            "--no-post-check", "--out", "x.json",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_reports_and_traces() {
    let ws = workspace();
    let dir = ws.path();
    calibrated(dir, "none", "cfg.json");
    let o = run(
        dir,
        &[
            "run", "--config", "cfg.json", "--records-a", "small.jsonl", "--records-b", "large.jsonl", "--costs",
            "costs.json", "--labels", "--report", "r.json", "--traces", "t.jsonl",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("accuracy="), "{}", stdout(&o));
    let report = duocascade::metering::RunReport::from_json(&fs::read_to_string(dir.join("r.json")).unwrap()).unwrap();
    assert_eq!(report.samples, 40);
    assert_eq!(report.stage_counts.memory_lookup + report.stage_counts.memory_insert, 0);
    assert!(report.metrics.is_some());
    assert_eq!(fs::read_to_string(dir.join("t.jsonl")).unwrap().lines().count(), 40);

    // records passed in the opposite order are matched by file stem
    let o = run(
        dir,
        &[
            "run", "--config", "cfg.json", "--records-a", "large.jsonl", "--records-b", "small.jsonl", "--costs",
            "costs.json", "--labels", "--report", "swapped.json",
        ],
    );
    assert!(o.status.success());
    let swapped =
        duocascade::metering::RunReport::from_json(&fs::read_to_string(dir.join("swapped.json")).unwrap()).unwrap();
    assert_eq!(swapped.paths, report.paths);

    let o = run(
        dir,
        &[
            "run", "--config", "cfg.json", "--records-a", "small.jsonl", "--records-b", "large.jsonl", "--costs",
            "costs.json", "--report", "r.csv", "--format", "csv",
        ],
    );
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(dir.join("r.csv")).unwrap().lines().count(), 2);
}

#[test]
fn run_with_memory() {
    let ws = workspace();
    let dir = ws.path();
    calibrated(dir, "dhash", "mem.json");
    let base = [
        "run", "--config", "mem.json", "--records-a", "small.jsonl", "--records-b", "large.jsonl", "--costs",
        "costs.json", "--report", "r.json",
    ];
    let o = run(dir, &base);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--images"));

    let mut with_images = base.to_vec();
    with_images.extend(["--images", "images"]);
    let o = run(dir, &with_images);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = duocascade::metering::RunReport::from_json(&fs::read_to_string(dir.join("r.json")).unwrap()).unwrap();
    assert_eq!(report.stage_counts.memory_lookup, 40);

    fs::remove_file(dir.join("images/s00007.pgm")).unwrap();
    let o = run(dir, &with_images);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("s00007"), "{}", stderr(&o));
}

#[test]
fn missing_and_malformed_inputs() {
    let ws = workspace();
    let dir = ws.path();
    calibrated(dir, "none", "cfg.json");
    fs::write(dir.join("bad.jsonl"), "{\"id\":\"x\",\"label\":0}\n").unwrap();
    let o = run(
        dir,
        &[
            "run", "--config", "cfg.json", "--records-a", "bad.jsonl", "--records-b", "large.jsonl", "--costs",
            "costs.json", "--report", "r.json",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.jsonl"), "{}", stderr(&o));

    let o = run(
        dir,
        &[
            "run", "--config", "nope.json", "--records-a", "small.jsonl", "--costs", "costs.json", "--report", "r.json",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn hash_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("flat.pgm"), ImageBuffer::from_fn_gray(20, 20, |_, _| 77).to_pnm()).unwrap();
    fs::write(d.join("black.pgm"), ImageBuffer::from_fn_gray(8, 8, |_, _| 0).to_pnm()).unwrap();
    let img = &random_images(1, 24, 5)[0];
    fs::write(d.join("img.pgm"), img.to_pnm()).unwrap();
    fs::write(d.join("rot.pgm"), img.rotate90().to_pnm()).unwrap();

    let o = run(d, &["hash", "--method", "dhash", "flat.pgm"]);
    assert_eq!(stdout(&o), "dhash: 0000000000000000\n");

    let key = |file: &str| {
        let o = run(d, &["hash", "--method", "moments", file]);
        assert!(o.status.success(), "{}", stderr(&o));
        let out = stdout(&o);
        assert!(out.starts_with("moments: ") && out.contains(" phi=["), "{out}");
        out.split_whitespace().nth(1).unwrap().to_string()
    };
    assert_eq!(key("img.pgm"), key("rot.pgm"));

    let o = run(d, &["hash", "--method", "moments", "black.pgm"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("zero total intensity"));

    fs::write(d.join("junk.pgm"), b"P2\n1 1\n255\n0\n").unwrap();
    assert_eq!(run(d, &["hash", "--method", "dhash", "junk.pgm"]).status.code(), Some(1));
}

fn curve_rows(dir: &Path, file: &str) -> Vec<(f64, String, f64, usize)> {
    fs::read_to_string(dir.join(file))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].to_string(), f[2].parse().unwrap(), f[3].parse().unwrap())
        })
        .collect()
}

#[test]
fn duplication_curves() {
    let ws = workspace();
    let dir = ws.path();
    calibrated(dir, "none", "plain.json");
    calibrated(dir, "dhash", "dhash.json");
    let args = |transform: &'static str, out: &'static str| {
        vec![
            "duplication", "--config", "plain.json", "--config", "dhash.json", "--records-a", "small.jsonl",
            "--records-b", "large.jsonl", "--images", "images", "--costs", "costs.json", "--ratios", "0,0.5,1",
            "--transform", transform, "--out", out,
        ]
    };
    let o = run(dir, &args("identity", "id.csv"));
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = curve_rows(dir, "id.csv");
    assert_eq!(rows.len(), 6);
    let plain: Vec<_> = rows.iter().filter(|r| r.1 == "plain").collect();
    let dh: Vec<_> = rows.iter().filter(|r| r.1 == "dhash").collect();
    assert_eq!(dh.iter().map(|r| r.3).collect::<Vec<_>>(), [0, 20, 40]);
    // plain: every sample run twice doubles the energy
    assert!((plain[2].2 - 2.0 * plain[0].2).abs() < 1e-12);
    assert!(plain[0].2 < plain[1].2 && plain[1].2 < plain[2].2);
    // memory: each extra duplicate costs a single lookup
    assert!((dh[2].2 - dh[0].2 - 40.0 * 1e-7).abs() < 1e-12);

    let o = run(dir, &args("rot90", "rot.csv"));
    assert!(o.status.success(), "{}", stderr(&o));
    let hits: usize = curve_rows(dir, "rot.csv").iter().filter(|r| r.1 == "dhash").map(|r| r.3).sum();
    assert!(hits < 60, "rotated duplicates should mostly miss, got {hits}");

    assert_eq!(run(dir, &args("flip", "x.csv")).status.code(), Some(2));
}

#[test]
fn report_compares_runs() {
    let ws = workspace();
    let dir = ws.path();
    calibrated(dir, "none", "pair.json");
    fs::write(
        dir.join("single.json"),
        r#"{"first_model":"large","score_fn":"diff","lambda":0.0,"post_check":false,"memory":"none"}"#,
    )
    .unwrap();
    for (config, records, out) in [("pair.json", "small.jsonl", "pair_r.json"), ("single.json", "large.jsonl", "single_r.json")] {
        let o = run(
            dir,
            &["run", "--config", config, "--records-a", records, "--records-b", "large.jsonl", "--costs", "costs.json", "--report", out],
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let o = run(dir, &["report", "single_r.json", "pair_r.json", "--out", "red.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("energy"));
    let red: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("red.json")).unwrap()).unwrap();
    assert!(red["energy_pct"].as_f64().unwrap().is_finite());
}
