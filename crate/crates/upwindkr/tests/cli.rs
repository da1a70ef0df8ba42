//! End-to-end checks of the command-line interface: exit codes, file
//! outputs, and the standalone transport subcommand.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_upwindkr"))
}

#[test]
fn cases_lists_registry() {
    let out = bin().arg("cases").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for id in ["tc1", "tc2", "tc3", "tc4", "tc5", "tc6"] {
        assert!(text.contains(id), "missing {id}");
    }
}

#[test]
fn study_runs_from_config_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let config = dir.path().join("study.toml");
    std::fs::write(
        &config,
        format!(
            r#"
test_case = "tc0"
levels = [0.125, 0.0625, 0.03125]
particles_refine = 8
out_dir = "{}"
emit = ["csv", "text", "svg"]
workers = 1
"#,
            out_dir.display()
        ),
    )
    .unwrap();
    let out = bin().arg("study").arg("--config").arg(&config).output().unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for name in ["levels.csv", "diagnostics.csv", "summary.txt", "study.svg", "timings.csv"] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
    let summary = std::fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    assert!(summary.contains("weak rate"));
}

#[test]
fn study_exit_codes() {
    // missing config file
    let out = bin().arg("study").arg("--config").arg("/nonexistent.toml").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    // bad test case id
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "test_case = \"tc99\"\n").unwrap();
    let out = bin().arg("study").arg("--config").arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    // malformed toml
    std::fs::write(&config, "test_case = [unclosed\n").unwrap();
    let out = bin().arg("study").arg("--config").arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validate_mesh_roundtrip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = upwindkr::mesh::build_perturbed_quad_mesh(
        upwindkr::geometry::Rect::unit_square(),
        5,
        4,
        0.1,
        3,
    )
    .unwrap();
    let path = dir.path().join("mesh.txt");
    std::fs::write(&path, mesh.export_text()).unwrap();
    let out = bin().arg("validate-mesh").arg(&path).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("mesh ok"));
    assert!(text.contains("iso_proxy"));

    std::fs::write(&path, "not a mesh\n").unwrap();
    let out = bin().arg("validate-mesh").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(3));

    let out = bin().arg("validate-mesh").arg("/nonexistent").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn kr_subcommand_computes_and_exports_plan() {
    let dir = tempfile::tempdir().unwrap();
    let plus = dir.path().join("plus.csv");
    let minus = dir.path().join("minus.csv");
    // single atoms one unit apart in two dimensions
    std::fs::write(&plus, "x,y,mass\n0.0,0.0,1.0\n").unwrap();
    std::fs::write(&minus, "0.0,1.0,1.0\n").unwrap();
    let plan = dir.path().join("plan.csv");
    let out = bin()
        .args(["kr", "--r", "0.5", "--w1"])
        .arg("--plus")
        .arg(&plus)
        .arg("--minus")
        .arg(&minus)
        .arg("--plan-out")
        .arg(&plan)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    // log(1 / 0.5 + 1) = log 3
    let expect = 3.0_f64.ln();
    assert!(text.contains(&format!("{expect:.6}")[..8.min(8)]), "stdout: {text}");
    assert!(text.contains("w1: value=1"));
    let plan_text = std::fs::read_to_string(&plan).unwrap();
    assert!(plan_text.starts_with("src_x,src_y,dst_x,dst_y,mass,cost"));
    assert_eq!(plan_text.lines().count(), 2);

    // unbalanced marginals are a numerical failure
    std::fs::write(&minus, "0.0,1.0,2.0\n").unwrap();
    let out = bin()
        .args(["kr", "--r", "0.5"])
        .arg("--plus")
        .arg(&plus)
        .arg("--minus")
        .arg(&minus)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    // one-dimensional two-column format
    std::fs::write(&plus, "0.0,1.0\n").unwrap();
    std::fs::write(&minus, "2.0,1.0\n").unwrap();
    let out = bin()
        .args(["kr", "--r", "1.0"])
        .arg("--plus")
        .arg(&plus)
        .arg("--minus")
        .arg(&minus)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains(&format!("{:.6}", 3.0_f64.ln())[..6]), "{text}");
}

#[test]
fn workers_env_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let config = dir.path().join("study.toml");
    std::fs::write(
        &config,
        format!(
            "test_case = \"tc0\"\nlevels = [0.125, 0.0625, 0.03125]\nparticles_refine = 4\nout_dir = \"{}\"\n",
            out_dir.display()
        ),
    )
    .unwrap();
    let out = bin()
        .env("UPWINDKR_WORKERS", "2")
        .arg("study")
        .arg("--config")
        .arg(&config)
        .output()
        .unwrap();
    assert!(out.status.success());
}

#[test]
fn missing_subcommand_is_usage_error() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
