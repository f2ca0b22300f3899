use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lpwa-sim"))
}

#[test]
fn run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, "n_nodes = 10\nhorizon_s = 120.0\n").unwrap();
    let out_dir = dir.path().join("out");
    let status = bin()
        .args([
            "run",
            "--protocol",
            "lorawan",
            "--seed",
            "4",
            "--frame-log",
            "--config",
        ])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    for f in ["config.toml", "packets.csv", "frames.csv", "summary.csv"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    assert!(!out_dir.join("trace.txt").exists());
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("lorawan,10,4.5,4,"));
    let echoed = fs::read_to_string(out_dir.join("config.toml")).unwrap();
    assert!(echoed.contains("seed = 4"));
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "n_nodes = 10\n[radio]\nspreading_factor = 5\n").unwrap();
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("spreading_factor"));

    fs::write(&cfg, "n_nodes = 10\nbogus = 1\n").unwrap();
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin()
        .args(["sweep", "--preset", "fig9", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_with_explicit_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "sweep",
            "--param",
            "n_nodes",
            "--values",
            "5,10",
            "--seeds",
            "2",
            "--protocols",
            "lpwa-mac",
            "--horizon",
            "60",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = fs::read_to_string(dir.path().join("sweep_rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 4);
    assert!(rows.lines().skip(1).all(|l| l.starts_with("lpwa-mac,")));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 2);
}
