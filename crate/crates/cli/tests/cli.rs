use std::path::Path;
use std::process::{Command, Output};

fn ssmaxwell(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssmaxwell"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn lambda_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = ssmaxwell(dir.path(), &["lambda", "--p", "0,2,4"]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("lambda.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(text.lines().next(), Some("p,lambda"));
    let expect = [-1.0, 0.0, 1.0 / 3.0];
    for (r, e) in rows.iter().zip(expect) {
        assert!((r[1] - e).abs() < 1e-10, "{r:?}");
    }
    assert_eq!(String::from_utf8(out.stdout).unwrap(), text);
}

#[test]
fn empty_exponent_list_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = ssmaxwell(dir.path(), &["lambda", "--p", ""]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("lambda.csv")).unwrap();
    assert_eq!(text.trim(), "p,lambda");
}

#[test]
fn eigen_without_deformation() {
    let dir = tempfile::tempdir().unwrap();
    let out = ssmaxwell(dir.path(), &["eigen"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["beta"].as_f64().unwrap().abs() < 1e-12);
    let n = v["N"].as_array().unwrap();
    for (i, row) in n.iter().enumerate() {
        for (j, x) in row.as_array().unwrap().iter().enumerate() {
            let e = if i == j { 1.0 } else { 0.0 };
            assert!((x.as_f64().unwrap() - e).abs() < 1e-12);
        }
    }
    assert!((v["spectral_gap"].as_f64().unwrap() - 0.5).abs() < 1e-10);
}

#[test]
fn qcoef_in_two_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let out = ssmaxwell(dir.path(), &["--dim", "2", "qcoef"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["q"].as_f64().unwrap() - 0.5).abs() < 1e-10);
    assert!((v["relaxation_rate"].as_f64().unwrap() - 0.5).abs() < 1e-10);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"dim": 3, "nonsense": 1}"#);
    let out = ssmaxwell(dir.path(), &["--config", &cfg, "qcoef"]);
    assert_eq!(out.status.code(), Some(15));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonsense"));
}

#[test]
fn bad_dimension_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = ssmaxwell(dir.path(), &["--dim", "4", "qcoef"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn odd_particle_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = ssmaxwell(dir.path(), &["dsmc", "--particles", "101"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dsmc_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "m.json", "[[0, 0.01, 0], [0, 0, 0], [0, 0, 0]]");
    let run = |sub: &str, workers: &str| {
        let d = dir.path().join(sub);
        let args = ["--matrix", &m, "--seed", "7", "--workers", workers, "dsmc", "--particles", "2000", "--tfinal", "1"];
        assert!(ssmaxwell(&d, &args).status.success());
        std::fs::read(d.join("dsmc.csv")).unwrap()
    };
    let a = run("a", "1");
    let b = run("b", "2");
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("t,u_1,u_2,u_3,u_1_se"));
    assert!(header.contains("cov_12_se") && header.contains("m4_400"));
}

#[test]
fn report_for_gaussian_datum() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"b0": [[2,0,0],[0,2,0],[0,0,2]], "u0": [1,0,0]}"#);
    let out = ssmaxwell(dir.path(), &["--config", &cfg, "report"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["lambda_squared"].as_f64().unwrap() - 2.0).abs() < 1e-10);
    assert_eq!(v["dirac_mass"], serde_json::Value::Bool(false));
    assert_eq!(v["b0_doubled"][0][0].as_f64(), Some(4.0));
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn report_flags_dirac_datum() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"b0": [[0,0,0],[0,0,0],[0,0,0]]}"#);
    let out = ssmaxwell(dir.path(), &["--config", &cfg, "report"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["dirac_mass"], serde_json::Value::Bool(true));
}

#[test]
fn hierarchy_and_density_for_shear() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "m.json", r#"{"matrix": [[0, 0.01, 0], [0, 0, 0], [0, 0, 0]]}"#);
    let out = ssmaxwell(dir.path(), &["--matrix", &m, "hierarchy", "--mmax", "5"]);
    assert!(out.status.success());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("hierarchy.json")).unwrap()).unwrap();
    let polys = v["polynomials"].as_array().unwrap();
    assert_eq!(polys.iter().map(|p| p["degree"].as_u64().unwrap()).collect::<Vec<_>>(), vec![2, 3, 4, 5]);
    let out = ssmaxwell(dir.path(), &["--matrix", &m, "density"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["max_moment_error"].as_f64().unwrap() <= 1e-6);
    assert!(v["min_factor"].as_f64().unwrap() > 0.0);
}

#[test]
fn secmom_keeps_trace_without_deformation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"b0": [[2,0.3,0],[0.3,1,0],[0,0,0.5]], "times": [0, 1, 5]}"#);
    assert!(ssmaxwell(dir.path(), &["--config", &cfg, "secmom"]).status.success());
    let text = std::fs::read_to_string(dir.path().join("secmom.csv")).unwrap();
    for l in text.lines().skip(1) {
        let r: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((r[1] + r[4] + r[6] - 3.5).abs() < 1e-12);
    }
}
