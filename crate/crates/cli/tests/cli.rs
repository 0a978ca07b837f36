use std::path::Path;
use std::process::Command;

use envara_cli::config::{parse_config, RESOLVED_CONFIG_FILE};
use envara_cli::experiments::parse_convergence_csv;
use envara_core::grid::read_field_csv;
use envara_core::splitting::RunReport;

fn envara(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_envara"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn ode_convergence_writes_table_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ode");
    let status = envara(&["ode-convergence", "--out", out.to_str().unwrap()]);
    assert_eq!(status.status.code(), Some(0));
    let rows =
        parse_convergence_csv(&std::fs::read_to_string(out.join("ode_convergence.csv")).unwrap())
            .unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows[0].order.is_none());
    assert!(rows[5].order.unwrap() > 1.95);
    let resolved = parse_config(&out.join(RESOLVED_CONFIG_FILE)).unwrap();
    assert_eq!(resolved.ode.dt.len(), 6);
}

#[test]
fn single_run_is_deterministic_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "run.toml",
        "kind = \"single_run\"\n[system]\nalpha_exp = 2.0\n[run]\nn_cells = 16\ndt = 0.05\nt_end = 0.2\nsnapshot_times = [0.1, 0.2]\n",
    );
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let status = envara(&[
            "run",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--threads",
            "2",
        ]);
        assert_eq!(
            status.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
        outputs.push(out);
    }
    for file in [
        "run_report.csv",
        "snapshot_u_t0.1.csv",
        "snapshot_v_t0.2.csv",
    ] {
        let a = std::fs::read(outputs[0].join(file)).unwrap();
        let b = std::fs::read(outputs[1].join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between runs");
    }
    let text = std::fs::read_to_string(outputs[0].join("run_report.csv")).unwrap();
    let report = RunReport::from_csv(&text).unwrap();
    assert_eq!(report.records.len(), 5);
    assert_eq!(report.to_csv(), text);
    let snap = std::fs::read_to_string(outputs[0].join("snapshot_u_t0.2.csv")).unwrap();
    let field = read_field_csv(&snap).unwrap();
    assert_eq!(field.grid().n0(), 16);
    assert_eq!(envara_core::grid::write_field_csv(&field), snap);
}

#[test]
fn invalid_config_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    for text in [
        "kind = \"ode_convergence\"\n[ode]\ndt = [0.1, -0.05]\n",
        "kind = \"ode_convergence\"\nunknown = 3\n",
        "kind = \"teleport\"\n",
    ] {
        let cfg = write_config(dir.path(), "bad.toml", text);
        let out = dir.path().join("bad");
        let status = envara(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(status.status.code(), Some(2), "{text}");
    }
}

#[test]
fn solver_failure_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "fail.toml",
        "kind = \"single_run\"\n[system]\nalpha_exp = 2.0\n[run]\nn_cells = 8\ndt = 0.1\nt_end = 0.2\nsnapshot_times = []\n[solver]\nnewton_tol = 1e-300\nnewton_max_iter = 1\n",
    );
    let out = dir.path().join("fail");
    let status = envara(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(status.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&status.stderr).contains("stage 2"));
    let partial = std::fs::read_to_string(out.join("run_report.partial.csv")).unwrap();
    assert_eq!(RunReport::from_csv(&partial).unwrap().records.len(), 1);
}
