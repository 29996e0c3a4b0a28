use std::path::Path;
use std::process::{Command, Output};

fn fuller(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fuller"))
        .args(args)
        .args(["--out", dir.to_str().unwrap()])
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,x,y,u,arc_index,wbar");
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn simulate_switch_ordinates_grow_by_sqrt3() {
    let dir = tempfile::tempdir().unwrap();
    let o = fuller(dir.path(), &["simulate", "--x0", "0.0025", "--y0", "-0.1", "--t-max", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("switches: 2"), "{stdout}");
    let rows = csv_rows(&dir.path().join("trajectory.csv"));
    let mut last_arc = String::new();
    let mut k = 0;
    for row in &rows {
        assert_eq!(row.len(), 6);
        if row[4] != last_arc {
            if !last_arc.is_empty() {
                k += 1;
                let y: f64 = row[2].parse().unwrap();
                let expected = 0.1 * 3f64.powf(k as f64 / 2.0);
                assert!((y.abs() - expected).abs() < 1e-12, "switch {k}: {y}");
                assert_eq!(y > 0.0, k % 2 == 0);
            }
            last_arc = row[4].clone();
        }
    }
    assert_eq!(k, 2);
}

#[test]
fn simulate_rejects_the_origin_and_bad_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let o = fuller(dir.path(), &["simulate", "--x0", "0", "--y0", "0"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("chatter"));
    assert_eq!(code(&fuller(dir.path(), &["simulate", "--x0", "inf", "--y0", "0.1"])), 2);
    assert_eq!(code(&fuller(dir.path(), &["simulate", "--x0", "0.1"])), 2);
    assert_eq!(code(&fuller(dir.path(), &["simulate", "--x0", "0.1", "--y0", "0", "--t-max", "-1"])), 2);
}

#[test]
fn simulate_zero_horizon_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = fuller(dir.path(), &["simulate", "--x0", "0.1", "--y0", "0.2", "--t-max", "0"]);
    assert_eq!(code(&o), 0);
    let rows = csv_rows(&dir.path().join("trajectory.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), 0.1);
}

#[test]
fn wbar_column_is_filled_inside_the_ball_only() {
    let dir = tempfile::tempdir().unwrap();
    let o = fuller(dir.path(), &["simulate", "--x0", "-0.0005", "--y0", "0.001", "--t-max", "0.05", "--step", "1e-4"]);
    assert_eq!(code(&o), 0);
    let rows = csv_rows(&dir.path().join("trajectory.csv"));
    let r = 0.00390625;
    let mut filled = 0;
    for row in &rows {
        let (x, y): (f64, f64) = (row[1].parse().unwrap(), row[2].parse().unwrap());
        if x.hypot(y) < r {
            let w: f64 = row[5].parse().unwrap();
            assert!(w > 0.0);
            filled += 1;
        } else {
            assert!(row[5].is_empty());
        }
    }
    assert!(filled > 10 && filled < rows.len());
}

#[test]
fn chatter_elapsed_time_and_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let o = fuller(dir.path(), &["chatter", "--scale", "0.1", "--arcs", "20"]);
    assert_eq!(code(&o), 0);
    let report = json(&dir.path().join("chatter.json"));
    let elapsed = report["summary"]["elapsed"].as_f64().unwrap();
    assert!((elapsed - 0.3732051).abs() < 1e-4);
    assert_eq!(report["summary"]["ratio_check"]["pass"], true);
    let rows = csv_rows(&dir.path().join("chatter.csv"));
    let t_last: f64 = rows.last().unwrap()[0].parse().unwrap();
    assert!((t_last - elapsed).abs() < 1e-12);
}

#[test]
fn chatter_single_arc_and_ball_bound() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&fuller(dir.path(), &["chatter", "--scale", "0.1", "--arcs", "1"])), 0);
    let report = json(&dir.path().join("chatter.json"));
    assert!(report["summary"].get("ratio_check").is_none());
    assert_eq!(report["checks"].as_array().unwrap().len(), 0);
    assert_eq!(code(&fuller(dir.path(), &["chatter", "--scale", "2", "--arcs", "3"])), 2);
    assert_eq!(code(&fuller(dir.path(), &["chatter", "--scale", "0.1", "--arcs", "0"])), 2);
    assert_eq!(code(&fuller(dir.path(), &["chatter", "--scale", "-0.1"])), 2);
}

#[test]
fn verify_defaults_pass() {
    let dir = tempfile::tempdir().unwrap();
    let o = fuller(dir.path(), &["verify"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report = json(&dir.path().join("verify.json"));
    assert_eq!(report["summary"]["r"].as_f64().unwrap(), 0.00390625);
    assert_eq!(report["config"]["r"], "auto");
    for c in report["checks"].as_array().unwrap() {
        assert_eq!(c["pass"], true, "{c}");
        for key in ["name", "grid_n", "worst", "threshold", "pass"] {
            assert!(c.get(key).is_some());
        }
    }
}

#[test]
fn verify_large_a_bar_fails_h_min() {
    let dir = tempfile::tempdir().unwrap();
    let o = fuller(dir.path(), &["verify", "--a-bar", "10"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("h_min"));
    let report = json(&dir.path().join("verify.json"));
    assert_eq!(report["summary"]["first_failure"], "h_min");
}

#[test]
fn verify_rejects_bad_flags() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&fuller(dir.path(), &["verify", "--grid-n", "0"])), 2);
    assert_eq!(code(&fuller(dir.path(), &["verify", "--r", "wide"])), 2);
    assert_eq!(code(&fuller(dir.path(), &["verify", "--corrupt", "everything"])), 2);
    assert_eq!(code(&fuller(dir.path(), &["verify", "--a-bar", "-1"])), 2);
}

#[test]
fn verify_fixed_radius_too_large_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&fuller(dir.path(), &["verify", "--r", "0.5", "--grid-n", "60"])), 1);
}

#[test]
fn converge_defaults_pass() {
    let dir = tempfile::tempdir().unwrap();
    let o = fuller(dir.path(), &["converge", "--k-max", "6"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report = json(&dir.path().join("converge.json"));
    let s = &report["summary"];
    for r in s["residuals"].as_array().unwrap() {
        assert!(r.as_f64().unwrap() <= 1e-9);
    }
    let gaps: Vec<f64> = s["sup_gaps"].as_array().unwrap().iter().map(|g| g.as_f64().unwrap()).collect();
    assert_eq!(gaps.len(), 3);
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    assert!(s["holder_fit"]["exponent"].as_f64().unwrap() > 0.0);
    assert!(dir.path().join("limit.csv").exists());
}

#[test]
fn converge_rejects_bad_flags() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&fuller(dir.path(), &["converge", "--k-max", "1"])), 2);
    assert_eq!(code(&fuller(dir.path(), &["converge", "--offsets", "1e-3,1e-2"])), 2);
    assert_eq!(code(&fuller(dir.path(), &["converge", "--offsets", "1e-2"])), 2);
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("from_config");
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        format!(r#"{{"a_bar": 0.1, "r": "auto", "T": 0.5, "grid_n": 80, "seed": 3, "out_dir": {:?}}}"#, out),
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fuller"))
        .args(["--config", cfg.to_str().unwrap(), "simulate", "--x0", "0.0025", "--y0", "-0.1"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("trajectory.csv"));
    let t_last: f64 = rows.last().unwrap()[0].parse().unwrap();
    assert_eq!(t_last, 0.5);

    let o = Command::new(env!("CARGO_BIN_EXE_fuller"))
        .args(["--config", cfg.to_str().unwrap(), "verify", "--grid-n", "0"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);

    std::fs::write(&cfg, r#"{"a_bar": "large"}"#).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fuller"))
        .args(["--config", cfg.to_str().unwrap(), "chatter", "--scale", "0.1"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    let missing = dir.path().join("missing.json");
    let o = Command::new(env!("CARGO_BIN_EXE_fuller"))
        .args(["--config", missing.to_str().unwrap(), "chatter", "--scale", "0.1"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn outputs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        assert_eq!(code(&fuller(dir, &["simulate", "--x0", "0.0025", "--y0", "-0.1"])), 0);
        assert_eq!(code(&fuller(dir, &["chatter", "--scale", "0.05"])), 0);
        assert_eq!(code(&fuller(dir, &["verify", "--grid-n", "60", "--seed", "7"])), 0);
    }
    for name in ["trajectory.csv", "chatter.csv", "chatter.json", "verify.json"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        let strip = |v: Vec<u8>, d: &Path| String::from_utf8(v).unwrap().replace(d.to_str().unwrap(), "OUT");
        assert_eq!(strip(x, a.path()), strip(y, b.path()), "{name} differs");
    }
}
