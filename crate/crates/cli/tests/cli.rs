use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn kfreloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kfreloc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// 200-frame dataset in a fresh temp dir.
fn dataset() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = kfreloc(&["synth", "--out", p(dir.path()), "--frames", "200", "--dim", "32", "--clusters", "5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

#[test]
fn synth_writes_loadable_files() {
    let dir = dataset();
    for f in ["db.vprf", "queries.vprf", "geotags.csv", "ground_truth.csv", "ground_truth_gps.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let db = kfreloc::load_features(dir.path().join("db.vprf"), kfreloc::FeatureFormat::Binary).unwrap();
    assert_eq!(db.len(), 200);
    assert_eq!(kfreloc::load_geotags(dir.path().join("geotags.csv")).unwrap().len(), 200);
}

#[test]
fn select_medoid_writes_twenty_indices_with_ams() {
    let dir = dataset();
    let db = dir.path().join("db.vprf");
    let kf = dir.path().join("kf.json");
    let out = kfreloc(&["select", "--db", p(&db), "--strategy", "medoid", "--ratio", "0.1", "--init", "fixed_rate", "--out", p(&kf)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json: Value = serde_json::from_str(&std::fs::read_to_string(&kf).unwrap()).unwrap();
    assert_eq!(json["strategy"], "medoid");
    assert_eq!(json["indices"].as_array().unwrap().len(), 20);
    let ams = json["ams"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&ams));
}

#[test]
fn select_is_deterministic() {
    let dir = dataset();
    let db = dir.path().join("db.vprf");
    let run = |name: &str| {
        let kf = dir.path().join(name);
        let out = kfreloc(&["select", "--db", p(&db), "--strategy", "medoid", "--count", "8", "--seed", "7", "--out", p(&kf)]);
        assert_eq!(code(&out), 0);
        std::fs::read_to_string(kf).unwrap()
    };
    assert_eq!(run("a.json"), run("b.json"));
}

#[test]
fn select_baselines() {
    let dir = dataset();
    let db = dir.path().join("db.vprf");
    let geo = dir.path().join("geotags.csv");
    let kf = dir.path().join("kf.json");
    let ok = |args: &[&str]| {
        let out = kfreloc(args);
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        let json: Value = serde_json::from_str(&std::fs::read_to_string(&kf).unwrap()).unwrap();
        json["indices"].as_array().unwrap().len()
    };
    assert_eq!(ok(&["select", "--db", p(&db), "--strategy", "fixed_rate", "--count", "10", "--out", p(&kf)]), 10);
    assert!(ok(&["select", "--db", p(&db), "--strategy", "similarity", "--threshold", "0.5", "--out", p(&kf)]) >= 2);
    assert!(ok(&["select", "--db", p(&db), "--geotags", p(&geo), "--strategy", "distance", "--threshold", "0.0001", "--out", p(&kf)]) >= 2);
    let n = ok(&["select", "--db", p(&db), "--geotags", p(&geo), "--strategy", "distance", "--ratio", "0.2", "--out", p(&kf)]);
    assert!((30..=50).contains(&n), "calibrated to {n}");
}

#[test]
fn query_emits_json_lines() {
    let dir = dataset();
    let db = dir.path().join("db.vprf");
    let queries = dir.path().join("queries.vprf");
    let kf = dir.path().join("kf.json");
    assert_eq!(code(&kfreloc(&["select", "--db", p(&db), "--strategy", "fixed_rate", "--ratio", "0.1", "--out", p(&kf)])), 0);

    let out = kfreloc(&["query", "--db", p(&db), "--queries", p(&queries), "--index", p(&kf), "--task", "seq2seq", "--seq-len", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 198);
    assert_eq!(lines[0]["query"], 1);
    for key in ["best", "sim", "stage1", "comparisons", "ns"] {
        assert!(lines[0].get(key).is_some(), "{key} missing");
    }
    // 20 keyframes x 3 plus at least one window x 3.
    assert!(lines[0]["comparisons"].as_u64().unwrap() >= 63);

    let out = kfreloc(&["query", "--db", p(&db), "--queries", p(&queries), "--exhaustive", "--query", "17"]);
    assert_eq!(code(&out), 0);
    let line: Value = serde_json::from_str(String::from_utf8(out.stdout).unwrap().trim()).unwrap();
    assert_eq!(line["query"], 17);
    assert_eq!(line["comparisons"], 200);
    assert!(line["stage1"].is_null());
}

#[test]
fn bench_writes_the_grid() {
    let dir = dataset();
    let csv = dir.path().join("bench.csv");
    let json = dir.path().join("bench.json");
    let d = |f: &str| dir.path().join(f);
    let out = kfreloc(&[
        "bench", "--db", p(&d("db.vprf")), "--geotags", p(&d("geotags.csv")), "--queries", p(&d("queries.vprf")),
        "--truth", p(&d("ground_truth.csv")), "--ratios", "0.1,0.2,0.3,0.4,0.5", "--tasks", "im2im,seq2seq",
        "--init", "fixed-rate", "--no-warmup", "--out", p(&csv), "--json", p(&json),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "strategy,task,ratio,accuracy,auc,mean_comparisons,mean_ns,ams");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2 + 4 * 5 * 2);
    assert_eq!(rows.iter().filter(|r| r.starts_with("baseline,")).count(), 2);
    for s in ["medoid", "similarity", "distance", "fixed_rate"] {
        assert_eq!(rows.iter().filter(|r| r.starts_with(&format!("{s},"))).count(), 10, "{s}");
    }
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert!(summary.is_object());
}

#[test]
fn bench_gps_mode_and_missing_geotags() {
    let dir = dataset();
    let d = |f: &str| dir.path().join(f).to_str().unwrap().to_string();
    let csv = d("bench.csv");
    let (db, queries, truth, geo) = (d("db.vprf"), d("queries.vprf"), d("ground_truth_gps.csv"), d("geotags.csv"));
    let base = [
        "bench", "--db", &db, "--queries", &queries, "--truth",
        &truth, "--ratios", "0.2", "--strategies", "fixed_rate", "--tolerance-mode", "gps",
        "--no-warmup", "--out", &csv,
    ];
    // GPS tolerance needs database geotags.
    assert_eq!(code(&kfreloc(&base)), 1);
    let mut with_geo = base.to_vec();
    with_geo.extend(["--geotags", &geo, "--tolerance", "0.0003"]);
    let out = kfreloc(&with_geo);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 1 + 4);
}

#[test]
fn inspect_prints_ams_and_regions() {
    let dir = dataset();
    let db = dir.path().join("db.vprf");
    let kf = dir.path().join("kf.json");
    assert_eq!(code(&kfreloc(&["select", "--db", p(&db), "--strategy", "medoid", "--count", "10", "--out", p(&kf)])), 0);
    let out = kfreloc(&["inspect", p(&kf), "--db", p(&db), "--min-ams", "0.0"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("keyframes  10"));
    assert!(text.contains("ams (recomputed)"));
    assert!(text.contains("regions    min"));
    assert!(text.contains("quality    accept"));

    assert_eq!(code(&kfreloc(&["inspect", p(&kf), "--min-ams", "1.5"])), 2);
}

#[test]
fn exit_codes() {
    assert_eq!(code(&kfreloc(&["--help"])), 0);
    assert_eq!(code(&kfreloc(&["--version"])), 0);
    assert_eq!(code(&kfreloc(&["select", "--bogus"])), 1);
    assert_eq!(code(&kfreloc(&[])), 1);

    let dir = dataset();
    let db = dir.path().join("db.vprf");
    let kf = dir.path().join("kf.json");
    // ratio 1.0 leaves no non-medoids.
    assert_eq!(code(&kfreloc(&["select", "--db", p(&db), "--strategy", "medoid", "--ratio", "1.0", "--out", p(&kf)])), 1);
    // Distance without geotags points the user elsewhere.
    let out = kfreloc(&["select", "--db", p(&db), "--strategy", "distance", "--threshold", "0.0001", "--out", p(&kf)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("geotags"));

    let missing = dir.path().join("nope.vprf");
    let out = kfreloc(&["select", "--db", p(&missing), "--strategy", "fixed_rate", "--count", "3", "--out", p(&kf)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.vprf"));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "1.0,0.0\n0.0,1.0\n0.0,0.0\n").unwrap();
    let out = kfreloc(&["select", "--db", p(&bad), "--strategy", "fixed_rate", "--count", "2", "--out", p(&kf)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("frame 2"));
}
