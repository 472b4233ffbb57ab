//! The `foilfem` binary end to end on a tiny configuration.

use std::path::Path;
use std::process::Command;

const TINY: &str = r#"{
  "geometry": {
    "stacks": [{"x_min": 0.002, "y_min": -0.002, "turns": 4,
                "pitch": 0.001, "tape_width": 0.004, "hts_thickness": 1e-5}],
    "air_radius": 0.012, "shell_radius": 0.018,
    "sizes": {"conductor_x": 0.001, "conductor_y": 0.001, "air": 0.003,
              "box_margin": 0.002, "ring_layers": 2, "shell_layers": 2,
              "arc_segments": 12}
  },
  "material": {"fill_factor": 0.01},
  "basis": {"family": "global_polynomial", "n_p": 2},
  "transient": {"cycles": 1, "steps_per_cycle": 12, "amplitude": 300.0},
  "numerics": {"theta": 0.5},
  "snapshots": {"steps": [6]}
}"#;

fn foilfem(args: &[&str], envs: &[(&str, &str)]) -> std::process::Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_foilfem"));
    c.args(args);
    for k in ["FOILFEM_OUT", "FOILFEM_CONFIG", "FOILFEM_THREADS"] {
        c.env_remove(k);
    }
    c.envs(envs.iter().copied());
    c.output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("tiny.json");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_writes_artifacts_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = |name: &str| tmp.path().join(name);
    for name in ["a", "b"] {
        let o = foilfem(&["run", "--config", &cfg, "--out", out(name).to_str().unwrap()], &[]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["config.json", "summary.json", "steps.csv", "steps_summary.csv", "snapshot_00006.vtk"] {
        assert!(out("a").join(f).exists(), "{f} missing");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out("a").join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["N"], 4);
    assert_eq!(summary["N_p"], 2);
    assert!(summary["cycle_losses"][0].as_f64().unwrap() > 0.0);
    for f in ["steps.csv", "steps_summary.csv", "snapshot_00006.vtk"] {
        let a = std::fs::read(out("a").join(f)).unwrap();
        let b = std::fs::read(out("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between identical runs");
    }
}

#[test]
fn zero_amplitude_gives_zero_loss() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let dir = tmp.path().join("zero");
    let o = foilfem(
        &["run", "--config", &cfg, "--out", dir.to_str().unwrap()],
        &[("FOILFEM_SET__TRANSIENT__AMPLITUDE", "0")],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["cycle_losses"][0].as_f64().unwrap(), 0.0);
}

#[test]
fn exit_codes_distinguish_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_key = write_config(tmp.path(), &TINY.replacen("\"cycles\"", "\"cylces\"", 1));
    let o = foilfem(&["validate", "--config", &bad_key], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cylces"));

    let missing = tmp.path().join("nope.json");
    let o = foilfem(&["validate", "--config", missing.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(4));

    // one Newton iteration cannot converge the nonlinear step
    let cfg = write_config(tmp.path(), TINY);
    let dir = tmp.path().join("fail");
    let o = foilfem(
        &["run", "--config", &cfg, "--out", dir.to_str().unwrap()],
        &[("FOILFEM_SET__NEWTON__MAX_ITER", "1")],
    );
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let record = std::fs::read_to_string(dir.join("summary.json")).unwrap();
    assert!(record.contains("failure"));
}

#[test]
fn sweep_and_mesh_verbs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let dir = tmp.path().join("sweep");
    let o = foilfem(
        &["sweep", "--config", &cfg, "--axis", "n_p", "--values", "1,2", "--threads", "2",
          "--out", dir.to_str().unwrap()],
        &[("FOILFEM_SET__OUTPUT__VTK", "false")],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("value,formulation,cycle_loss"));
    assert!(dir.join("sweep.json").exists());

    let mdir = tmp.path().join("mesh");
    let o = foilfem(&["mesh", "--config", &cfg, "--out", mdir.to_str().unwrap()], &[]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(mdir.join("mesh_jav_homog.msh")).unwrap();
    assert!(text.starts_with("$MeshFormat\n4.1"));
}
