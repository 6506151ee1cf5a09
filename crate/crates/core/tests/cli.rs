use std::process::Command;

fn fluxbound() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fluxbound"))
}

#[test]
fn solve_prints_json() {
    let out = fluxbound().args(["solve", "--flow", "none", "--ell", "1", "-n", "32"]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let d = v["dissipation"].as_f64().unwrap();
    assert!((d - 1.0 / 16.0).abs() < 1e-10);
}

#[test]
fn bad_input_exits_with_one() {
    let out = fluxbound().args(["solve", "--flow", "pinching", "--eps", "0.5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("eps"));
}

#[test]
fn sweep_writes_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cell.cfg");
    std::fs::write(&cfg, "experiment = cellular_scaling\nell = 1\npe = 0, 1, 3\nnx = 64\ncertify = true\n").unwrap();
    let mut csvs = Vec::new();
    for sub in ["a", "b"] {
        let out = fluxbound()
            .arg("sweep")
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join(sub))
            .env("FLUXBOUND_THREADS", "2")
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let files: Vec<String> = String::from_utf8(out.stdout).unwrap().lines().map(String::from).collect();
        assert_eq!(files.len(), 3);
        csvs.push(std::fs::read(files.iter().find(|f| f.ends_with(".csv")).unwrap()).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    let text = String::from_utf8(csvs.remove(0)).unwrap();
    assert!(text.starts_with("label,ell,pe,nx"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn sweep_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.cfg");
    // Too few cells per ℓ: refused before running.
    std::fs::write(&cfg, "experiment = cellular_scaling\nell = 1/4\npe = 1\nnx = 32\n").unwrap();
    let out = fluxbound().arg("sweep").arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    // A two-iteration cap makes the advective rows fail; they are recorded.
    std::fs::write(&cfg, "experiment = cellular_scaling\nell = 1\npe = 0, 50\nnx = 64\nmax_iter = 2\n").unwrap();
    let out = fluxbound().arg("sweep").arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let csv = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "csv"))
        .unwrap();
    let text = std::fs::read_to_string(csv).unwrap();
    assert!(text.contains("no convergence"));
}
