use std::path::Path;
use std::process::{Command, Output};

fn ksadmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ksadmm")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, solvers: &str) -> String {
    let path = dir.join("config.json");
    let text = format!(
        r#"{{
            "patch_sizes": [[8, 8]],
            "T_values": [3],
            "blur": {{"sigma_k": 0.5}},
            "noise": {{"r_sigma": 0.03, "q_sigma": 0.1}},
            "solvers": {solvers},
            "seed": 2,
            "output_dir": "{}",
            "repeats": 1
        }}"#,
        dir.join("out").display()
    );
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const KS_TV: &str = r#"[{"x_strategy": "ks", "w_mode": {"mode": "denoiser", "denoiser": {"kind": "tv_chambolle"}, "sigma": 0.2}, "rho": 50, "max_iters": 5}]"#;

#[test]
fn simulate_then_solve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), KS_TV);
    let data = dir.path().join("data");
    let out = ksadmm(&["simulate", "--config", &cfg, "--out", data.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("measurements/manifest.json").exists());
    assert!(data.join("truth/frame_0003.pgm").exists());

    let out = ksadmm(&[
        "solve",
        "--config",
        &cfg,
        "--data",
        data.join("measurements").to_str().unwrap(),
        "--truth",
        data.join("truth").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let results = std::fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    assert_eq!(results.lines().count(), 2);
    assert!(results.starts_with("strategy,T,N,seconds,final_psnr,measurement_psnr,error"));
    assert!(dir.path().join("out/ks/frame_0001.pgm").exists());
}

#[test]
fn sweeps_and_trace_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), KS_TV);
    for (cmd, files) in [
        ("bench-t", &["bench-t/results.csv", "bench-t/scaling_t.svg"][..]),
        ("bench-n", &["bench-n/results.csv", "bench-n/scaling_n.svg"][..]),
        ("trace", &["trace.csv", "trace.svg", "results.csv", "ks/manifest.json"][..]),
    ] {
        let out = ksadmm(&[cmd, "--config", &cfg]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        for f in files {
            assert!(dir.path().join("out").join(f).exists(), "{cmd} did not write {f}");
        }
    }
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[]");
    assert_eq!(ksadmm(&["bench-t", "--config", &cfg]).status.code(), Some(2));
    let missing = dir.path().join("nope.json");
    assert_eq!(ksadmm(&["trace", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
    std::fs::write(dir.path().join("bad.json"), "{").unwrap();
    let bad = dir.path().join("bad.json");
    assert_eq!(ksadmm(&["trace", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn solver_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let exact = r#"[{"x_strategy": "exact", "w_mode": {"mode": "prox", "prox": {"kind": "zero"}}, "rho": 1, "max_iters": 2, "exact_cap": 10}]"#;
    let cfg = write_config(dir.path(), exact);
    let data = dir.path().join("data");
    assert!(ksadmm(&["simulate", "--config", &cfg, "--out", data.to_str().unwrap()]).status.success());
    let out = ksadmm(&["solve", "--config", &cfg, "--data", data.join("measurements").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cap"));
}
