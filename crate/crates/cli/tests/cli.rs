use std::path::Path;
use std::process::{Command, Output};

fn leafout(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leafout"))
        .args(args)
        .current_dir(cwd)
        .env_remove("LEAFOUT_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn malformed_geometry_exits_nonzero_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[geometry]\nn_cell = 2\nl1 = 70.0\nl2 = 30.0\n");
    let out = dir.path().join("out");
    let o = leafout(&["energy-landscape", "--config", &cfg, "--out", out.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(report["error"]["kind"], "validation");
    assert_eq!(report["error"]["field"], "geometry.n_cell");
    assert!(!out.exists());
}

#[test]
fn missing_config_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = leafout(&["validate", "--config", "nope.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn validate_reports_the_task() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ok.toml", "[task]\nkind = \"drop-test\"\n");
    let o = leafout(&["validate", "--config", &cfg], dir.path());
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["task"], "drop-test");
    assert!(!dir.path().join("leafout-out").exists());
}

#[test]
fn subcommand_must_match_the_configured_task() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "t.toml", "[task]\nkind = \"drop-test\"\n");
    let o = leafout(&["export-mesh", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mesh_export_and_environment_default() {
    let dir = tempfile::tempdir().unwrap();
    let env_out = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_leafout"))
        .arg("export-mesh")
        .current_dir(dir.path())
        .env("LEAFOUT_OUT_DIR", &env_out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let obj = std::fs::read_to_string(env_out.join("mesh.obj")).unwrap();
    assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), 36);
    assert!(env_out.join("manifest.json").exists());
}

#[test]
fn multi_grasp_with_program_file_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let programs = write(dir.path(), "programs.json", r#"[{"name": "pinch", "units": [1, 2]}, {"units": [1, 3]}]"#);
    let cfg = write(dir.path(), "mg.toml", "[task]\nkind = \"multi-grasp\"\nmax_steps = 40\n");
    let mut bytes = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = leafout(
            &[
                "multi-grasp",
                "--config",
                &cfg,
                "--programs",
                &programs,
                "--out",
                out.to_str().unwrap(),
                "--threads",
                "2",
            ],
            dir.path(),
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        bytes.push(
            ["grasp_pinch.csv", "grasp_1-3.csv", "programs.json", "manifest.json"]
                .map(|f| std::fs::read(out.join(f)).unwrap()),
        );
    }
    assert_eq!(bytes[0], bytes[1]);
    let csv = String::from_utf8(bytes[0][0].clone()).unwrap();
    assert_eq!(csv.lines().count(), 42);
    assert!(csv.starts_with("step,delta_rho_c_deg,x_deg,y_deg,z_deg,energy,M1_deg,B1_deg"));
}

#[test]
fn drop_test_with_observations() {
    let dir = tempfile::tempdir().unwrap();
    let obs = write(dir.path(), "obs.csv", "h_mm,outcome\n300,cross\n450,circle\n600,circle\n800,triangle\n");
    let cfg = write(
        dir.path(),
        "d.toml",
        "[task]\nkind = \"drop-test\"\nrest_min_deg = 60.0\nrest_max_deg = 80.0\nrest_step_deg = 10.0\nh_mm = 500.0\n",
    );
    let out = dir.path().join("out");
    let o =
        leafout(&["drop-test", "--config", &cfg, "--observations", &obs, "--out", out.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("drop_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["retention_limit_mm"], 700.0);
    assert_eq!(summary["outcome"], "grasp");
}

#[test]
fn observations_flag_only_for_drop_test() {
    let dir = tempfile::tempdir().unwrap();
    let obs = write(dir.path(), "obs.csv", "h_mm,outcome\n300,cross\n");
    let cfg = write(dir.path(), "m.toml", "[task]\nkind = \"export-mesh\"\n");
    let o = leafout(&["drop-test", "--config", &cfg, "--observations", &obs], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_configs_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let o = leafout(&["validate", "--config", path.to_str().unwrap()], &root);
            assert!(o.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&o.stderr));
            seen += 1;
        }
    }
    assert!(seen >= 5);
}
