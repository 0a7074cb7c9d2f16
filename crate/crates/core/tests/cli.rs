use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_qkf");

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(BIN).args(args).env("QKF_THREADS", "2").output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

const BASE: &str = "[mode]\ngamma = 1.0\ndim = 20\n\n[initial]\nkind = \"vacuum\"\n\n[run]\nT = 1.0\ndt = 1e-3\nstride = 100\n";

#[test]
fn riccati_on_vacuum_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", BASE);
    let out = dir.path().join("out");
    let (code, err) = run(&["riccati", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let text = fs::read_to_string(out.join("riccati.csv")).unwrap();
    assert!(text.starts_with("t,V,re_W,im_W\n"));
    for col in ["V", "re_W", "im_W"] {
        assert!(column(&text, col).iter().all(|&x| x == 0.0));
    }
    assert_eq!(column(&text, "t").len(), 11);
}

#[test]
fn proportional_step_table_settles() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &format!("{BASE}\n[control]\nk_P = 50.0\n"));
    let out = dir.path().join("out");
    let (code, err) = run(&["tf", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let step = fs::read_to_string(out.join("tf_step.csv")).unwrap();
    let h = column(&step, "re_H");
    assert!((h.last().unwrap() - 100.0 / 101.0).abs() < 1e-6);
    let freq = fs::read_to_string(out.join("tf_freq.csv")).unwrap();
    assert!(freq.starts_with("omega,re_G,im_G,re_K,im_K,re_H,im_H\n"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("tf.json")).unwrap()).unwrap();
    assert!((json["re_H0"].as_f64().unwrap() - 50.0 / 50.5).abs() < 1e-12);
}

#[test]
fn filter_table_layout_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[mode]\ngamma = 1.0\nomega = 0.5\ndim = 20\n\n[initial]\nkind = \"coherent\"\nalpha_re = 0.5\n\n\
                [measurement]\ntheta = 0.3\n\n[run]\nT = 0.5\ndt = 1e-3\nseed = 9\nstride = 10\n";
    let cfg = write(dir.path(), "c.toml", text);
    let mut outputs = Vec::new();
    for tag in ["a", "b"] {
        let out = dir.path().join(tag);
        let (code, err) = run(&["filter", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0, "{err}");
        let names: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("filter.csv")]);
        outputs.push(fs::read(out.join("filter.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs.remove(0)).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "t,re_a_truth,im_a_truth,n_truth,re_a_hat,im_a_hat,V,re_W,im_W,Y,I"
    );
    let first = text.lines().nth(1).unwrap();
    assert!(first.split(',').all(|f| f.contains('e')));
    let re_a = column(&text, "re_a_hat");
    assert_eq!(re_a[0], 0.5);
}

#[test]
fn closed_loop_summary() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[mode]\ngamma = 1.0\ndim = 16\n\n[initial]\nkind = \"coherent\"\nalpha_re = 0.2\n\n\
                [control]\nk_P = 5.0\nk_I = 1.0\n\n[reference]\nkind = \"step\"\nre = 0.5\n\n\
                [run]\nT = 3.0\ndt = 1e-3\nseed = 4\nstride = 100\n";
    let cfg = write(dir.path(), "c.toml", text);
    let out = dir.path().join("out");
    let (code, err) = run(&["closed-loop", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("closed_loop.json")).unwrap()).unwrap();
    assert!(json["terminal_error"].as_f64().unwrap() < 0.05);
    assert!(json["sup_filter_deviation"].as_f64().unwrap() < 1e-2);
    assert!(json.as_object().unwrap().values().all(|v| !v.is_object() && !v.is_array()));
}

#[test]
fn tune_places_double_pole() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[mode]\ngamma = 2.0\n\n[control]\nzeta = 1.0\nomega0 = 1.0\n\n[run]\nT = 1.0\ndt = 0.1\n";
    let cfg = write(dir.path(), "c.toml", text);
    let out = dir.path().join("out");
    assert_eq!(run(&["tune", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).0, 0);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("tune.json")).unwrap()).unwrap();
    assert_eq!(json["k_P"].as_f64(), Some(1.0));
    assert_eq!(json["k_I"].as_f64(), Some(1.0));
    assert!(json["max_pole_error"].as_f64().unwrap() <= 1e-9);
    let infeasible = write(dir.path(), "i.toml", &text.replace("zeta = 1.0", "zeta = 0.1"));
    assert_eq!(run(&["tune", infeasible.to_str().unwrap(), "--out", out.to_str().unwrap()]).0, 3);
}

#[test]
fn classical_chain_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[mode]\ngamma = 1.0\n\n[run]\nT = 1.0\ndt = 1e-4\nseed = 2\nstride = 1000\n";
    let cfg = write(dir.path(), "c.toml", text);
    let out = dir.path().join("out");
    assert_eq!(run(&["classical", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).0, 0);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("classical.json")).unwrap()).unwrap();
    assert!(json["max_mean_gap_zakai_bucy"].as_f64().unwrap() < 1e-2);
    assert!(json["max_rel_variance_gap_kalman_bucy"].as_f64().unwrap() < 0.02);
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad_gamma = write(dir.path(), "g.toml", &BASE.replace("gamma = 1.0", "gamma = -1.0"));
    let (code, err) = run(&["riccati", bad_gamma.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("mode.gamma"), "{err}");
    assert_eq!(err.trim().lines().count(), 1);
    let bad_kd = write(dir.path(), "k.toml", &format!("{BASE}\n[control]\nk_D = -0.5\n"));
    let (code, err) = run(&["closed-loop", bad_kd.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("control.k_D"), "{err}");
    let unknown = write(dir.path(), "u.toml", &BASE.replace("dim = 20", "dim = 20\nbogus = 1"));
    let (code, err) = run(&["riccati", unknown.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("line 4"), "{err}");
    assert_eq!(run(&["riccati", "/nonexistent/c.toml"]).0, 2);
    assert_eq!(run(&["no-such-command"]).0, 2);
}

#[test]
fn numeric_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[mode]\ngamma = 1.0\ndim = 5\n\n[initial]\nkind = \"coherent\"\nalpha_re = 3.0\n\n[run]\nT = 0.1\ndt = 1e-3\n";
    let cfg = write(dir.path(), "c.toml", text);
    let (code, err) = run(&["filter", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code, 3);
    assert!(err.contains("truncation"), "{err}");
}

#[test]
fn ensemble_assert_mode() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[mode]\ngamma = 1.0\ndim = 10\n\n[initial]\nkind = \"thermal\"\nnbar = 0.5\n\n\
                [run]\nT = 1.0\ndt = 1e-2\nn_traj = 10\nseed = 1\ntruth = \"pfunction\"\n";
    let cfg = write(dir.path(), "c.toml", text);
    let out = dir.path().join("out");
    let args = ["ensemble", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    assert_eq!(run(&args).0, 0);
    let mut with_assert = args.to_vec();
    with_assert.push("--assert");
    assert_eq!(run(&with_assert).0, 4);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("ensemble.json")).unwrap()).unwrap();
    assert_eq!(json["qv_pass"].as_bool(), Some(false));
    assert_eq!(json["qv_ratio_lower"].as_f64(), Some(0.95));
    let agg = fs::read_to_string(out.join("ensemble.csv")).unwrap();
    assert!(agg.starts_with("t,re_mean_a_truth,im_mean_a_truth,re_mean_a_hat,im_mean_a_hat,mse,V\n"));
}

#[test]
fn ensemble_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[mode]\ngamma = 1.0\ndim = 16\n\n[initial]\nkind = \"thermal\"\nnbar = 0.5\n\n\
                [control]\nk_P = 2.0\n\n[reference]\nkind = \"step\"\nre = 0.3\n\n\
                [run]\nT = 0.3\ndt = 1e-3\nn_traj = 6\nseed = 12\nstride = 30\n";
    let cfg = write(dir.path(), "c.toml", text);
    let mut bytes = Vec::new();
    for threads in ["1", "8"] {
        let out = dir.path().join(threads);
        let status = Command::new(BIN)
            .args(["ensemble", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .env("QKF_THREADS", threads)
            .status()
            .unwrap();
        assert!(status.success());
        bytes.push((fs::read(out.join("ensemble.csv")).unwrap(), fs::read(out.join("ensemble.json")).unwrap()));
    }
    assert_eq!(bytes[0], bytes[1]);
}
