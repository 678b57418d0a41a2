use std::path::Path;
use std::process::Command;

fn mgvar() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mgvar"))
}

#[test]
fn oracle_check_reports_tap() {
    let out = mgvar().args(["oracle-check", "--max-n", "12"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("TAP version 13\n"));
    assert!(text.contains("ok 1 - "));
    assert!(!text.contains("not ok"));
}

#[test]
fn simulate_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let out = mgvar()
        .args([
            "simulate", "--model", "mlr", "--n", "40", "--k", "10", "--m", "2", "--b", "10", "--nmc", "4", "--ntruth",
            "5", "--targets", "center", "--smooth", "2", "--seed", "3", "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.json", "truth.csv", "results.csv", "results_smoothed.csv", "summary.csv", "summary.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let results = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 5);
    assert!(String::from_utf8(out.stdout).unwrap().contains("matched"));
}

#[test]
fn simulate_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = mgvar()
        .args(["simulate", "--n", "20", "--k", "10", "--m", "3", "--nmc", "1", "--ntruth", "1", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("MTooLarge"));
}

fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn predict_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let mut train = String::from("size,room,price\n");
    let rooms = ["entire", "private", "shared"];
    for i in 0..60 {
        let size = (i * 7 % 50) as f64;
        let room = rooms[i % 3];
        let price = 2.0 * size + if room == "entire" { 30.0 } else { 0.0 } + (i % 5) as f64;
        train.push_str(&format!("{size},{room},{price}\n"));
    }
    let train = write(dir.path(), "train.csv", &train);
    let schema = write(
        dir.path(),
        "schema.json",
        r#"{"size":{"role":"feature","kind":"numeric","missing":"mean"},
            "room":{"role":"feature","kind":"categorical","missing":"zero"},
            "price":{"role":"response","kind":"numeric"}}"#,
    );
    let targets = write(dir.path(), "targets.csv", "size,room\n10,entire\n40,shared\nNA,private\n");
    let out = dir.path().join("pred.csv");
    let status = mgvar()
        .args(["predict", "--train"])
        .arg(&train)
        .arg("--schema")
        .arg(&schema)
        .arg("--targets")
        .arg(&targets)
        .args(["--k", "20", "--m", "3", "--b", "40", "--smooth", "2", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("target_id,point,"));
    assert!(lines[1].ends_with(",Smoothed"));
}

#[test]
fn predict_reports_unknown_column() {
    let dir = tempfile::tempdir().unwrap();
    let train = write(dir.path(), "train.csv", "a,y\n1,2\n3,4\n");
    let schema = write(
        dir.path(),
        "schema.json",
        r#"{"b":{"role":"feature","kind":"numeric"},"y":{"role":"response","kind":"numeric"}}"#,
    );
    let out = mgvar()
        .args(["predict", "--train"])
        .arg(&train)
        .arg("--schema")
        .arg(&schema)
        .arg("--targets")
        .arg(&train)
        .args(["--k", "1", "--out"])
        .arg(dir.path().join("o.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown column `b`"));
}
