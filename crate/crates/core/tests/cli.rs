use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use metric_currents::currents::{Current, FragmentTerm};
use metric_currents::derivations::Derivation;
use metric_currents::exterior::KVector;
use metric_currents::fixtures;
use metric_currents::fragments::Fragment;
use metric_currents::io::{functions_to_value, CurrentFile, DerivationFile, RepFile, SpaceFile};
use metric_currents::alberti::AlbertiRep;
use metric_currents::space::MetricSpace;
use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metric-currents")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, v: &impl serde::Serialize) -> String {
    let path: PathBuf = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

struct GridFiles {
    _dir: tempfile::TempDir,
    root: PathBuf,
    space: String,
    current: String,
    functions: String,
    derivations: String,
}

fn grid_files() -> GridFiles {
    let dir = tempfile::tempdir().unwrap();
    let g = fixtures::grid(4);
    let basis: Arc<[Derivation]> = vec![fixtures::grid_dx(&g), fixtures::grid_dy(&g)].into();
    let t = Current::precurrent(KVector::simple(basis.clone(), vec![0, 1], vec![1.0; 16]).unwrap(), g.mu.weights.clone())
        .unwrap();
    let dict = fixtures::coordinate_dictionary(&g.space);
    let entries: Vec<(String, Vec<f64>)> =
        dict.names.iter().zip(&dict.fns).skip(1).map(|(n, f)| (n.clone(), f.values.clone())).collect();
    let ds: Vec<DerivationFile> = basis.iter().map(|d| DerivationFile::from_derivation(d, &g.space)).collect();
    let root = dir.path().to_path_buf();
    GridFiles {
        space: write(&root, "space.json", &SpaceFile::from_space(&g.space, &g.mu.weights)),
        current: write(&root, "current.json", &CurrentFile::from_current(&t, &g.space).unwrap()),
        functions: write(&root, "functions.json", &functions_to_value(&entries)),
        derivations: write(&root, "derivations.json", &ds),
        root,
        _dir: dir,
    }
}

fn seg_files(dir: &Path) -> (String, String) {
    let seg = fixtures::seg();
    let space = write(dir, "seg.json", &SpaceFile::from_space(&seg.space, &seg.mu.weights));
    let t = Current::curve(fixtures::seg_fragment(), 3).unwrap();
    let current = write(dir, "seg_current.json", &CurrentFile::from_current(&t, &seg.space).unwrap());
    (space, current)
}

#[test]
fn mass_of_segment_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let (space, current) = seg_files(dir.path());
    let out = bin(&["mass", "--space", &space, "--current", &current]);
    assert_eq!(out.status.code(), Some(0));
    let v = report(&out);
    assert!((v["lower_total"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((v["upper_total"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(!v["witnesses"].as_array().unwrap().is_empty());
}

#[test]
fn mass_of_zero_current_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (space, _) = seg_files(dir.path());
    let zero = write(dir.path(), "zero.json", &serde_json::json!({"k": 1, "form": "fragments", "terms": []}));
    let out = bin(&["mass", "--space", &space, "--current", &zero]);
    assert_eq!(out.status.code(), Some(0));
    let v = report(&out);
    assert_eq!(v["lower_total"].as_f64(), Some(0.0));
    assert_eq!(v["upper_total"].as_f64(), Some(0.0));
}

#[test]
fn malformed_and_unknown_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let (space, _) = seg_files(dir.path());
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"k\": 1,\n \"form\": }").unwrap();
    let out = bin(&["mass", "--space", &space, "--current", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    let out = bin(&["integrate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn decompose_grid_square() {
    let f = grid_files();
    let out = bin(&["decompose", "--space", &f.space, "--current", &f.current, "--functions", &f.functions]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = report(&out);
    assert!(v["coverage_defect"].as_f64().unwrap() <= 1e-9);
    let pieces = v["pieces"].as_array().unwrap();
    assert_eq!(pieces.len(), 1);
    assert_eq!(pieces[0]["names"], serde_json::json!(["x", "y"]));
    assert!(pieces[0]["direction_fractions"].as_array().unwrap().iter().all(|x| x.as_f64() == Some(1.0)));
    // One glued representation per default axis cone.
    assert_eq!(v["glued"].as_array().unwrap().len(), 2);
}

#[test]
fn decompose_exit_codes() {
    let f = grid_files();
    let out = bin(&["decompose", "--space", &f.space, "--current", &f.current, "--cone-axis", "1,0,0"]);
    assert_eq!(out.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let (space, _) = seg_files(dir.path());
    let zero = write(dir.path(), "zero.json", &serde_json::json!({"k": 1, "form": "fragments", "terms": []}));
    let out = bin(&["decompose", "--space", &space, "--current", &zero]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("zero current"));
}

#[test]
fn represent_writes_lambda_table() {
    let f = grid_files();
    let out_dir = f.root.join("represent");
    let out = bin(&[
        "represent", "--space", &f.space, "--current", &f.current, "--functions", &f.functions, "--out",
        out_dir.to_str().unwrap(), "--quiet",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stderr.is_empty());
    let v = report(&out);
    assert!(v["max_lambda"].as_f64().unwrap() <= 1.0 + 1e-9);
    assert!(v["reconstruction_error"].as_f64().unwrap() <= 1e-9);
    let table = fs::read_to_string(out_dir.join("lambda.csv")).unwrap();
    assert!(table.starts_with("point,tuple,lambda\n"));
    assert_eq!(table.lines().count(), 1 + 16);
    assert_eq!(fs::read(out_dir.join("report.json")).unwrap(), out.stdout);
}

#[test]
fn pseudodual_on_grid() {
    let f = grid_files();
    let out = bin(&["pseudodual", "--space", &f.space, "--derivations", &f.derivations, "--functions", &f.functions]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = report(&out);
    assert!(v["duality_defect"].as_f64().unwrap() <= 1e-9);
    for p in v["pieces"].as_array().unwrap() {
        assert!(p["min_diagonal"].as_f64().unwrap() >= 0.9);
    }
}

#[test]
fn renorm_sandwich_on_segment() {
    let dir = tempfile::tempdir().unwrap();
    let (space, _) = seg_files(dir.path());
    let out = bin(&["renorm", "--space", &space, "--eps", "0.1"]);
    assert_eq!(out.status.code(), Some(0));
    let v = report(&out);
    assert_eq!(v["sandwich_ok"], Value::Bool(true));
    assert_eq!(v["eps"].as_f64(), Some(0.1));
    let d = v["d_eps"].as_array().unwrap();
    assert!(d[0][2].as_f64().unwrap() >= 1.0);
}

#[test]
fn approx_normal_writes_error_series() {
    let dir = tempfile::tempdir().unwrap();
    let m = 16;
    let xs: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
    let space = MetricSpace::line(&xs).unwrap();
    let frag = Fragment::uniform((0..=m).collect(), 1.0 / m as f64).unwrap();
    let nu = (0..m).map(|i| if 2 * i < m { 1.0 } else { 2.0 } / m as f64).collect();
    let t = Current::fragments(m + 1, vec![FragmentTerm { fragment: frag, nu, weight: 1.0 }]).unwrap();
    let space_file = write(dir.path(), "line.json", &SpaceFile::from_space(&space, &vec![1.0 / (m + 1) as f64; m + 1]));
    let current = write(dir.path(), "step.json", &CurrentFile::from_current(&t, &space).unwrap());
    let out_dir = dir.path().join("approx");
    let args = [
        "approx-normal", "--space", &space_file, "--current", &current, "--eps", "1e-3", "--max-iter", "3",
        "--level", "2", "--out", out_dir.to_str().unwrap(),
    ];
    let out = bin(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = report(&out);
    let errors: Vec<f64> = v["errors"].as_array().unwrap().iter().map(|e| e.as_f64().unwrap()).collect();
    assert_eq!(errors.len(), 3);
    assert!(errors.windows(2).all(|w| w[1] < w[0]));
    let csv = fs::read_to_string(out_dir.join("errors.csv")).unwrap();
    assert!(csv.starts_with("n,intervals,error\n"));
    assert_eq!(csv.lines().count(), 4);
    // Unreachable target.
    let strict = [&args[..5], &["--eps", "1e-30", "--max-iter", "1"]].concat();
    assert_eq!(bin(&strict).status.code(), Some(4));
}

#[test]
fn validate_reports_representations() {
    let dir = tempfile::tempdir().unwrap();
    let (space, _) = seg_files(dir.path());
    let seg = fixtures::seg();
    let good = AlbertiRep::new(vec![fixtures::seg_fragment()], vec![1.0], vec![vec![0.5, 0.5]]).unwrap();
    let path = write(dir.path(), "rep.json", &RepFile::from_rep(&good, &seg.space));
    let out = bin(&["validate", "--space", &space, "--rep", &path]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(report(&out)["ok"], Value::Bool(true));
    let bad = AlbertiRep::new(vec![fixtures::seg_fragment()], vec![1.0], vec![vec![0.5, 0.25]]).unwrap();
    let path = write(dir.path(), "bad_rep.json", &RepFile::from_rep(&bad, &seg.space));
    let out = bin(&["validate", "--space", &space, "--rep", &path]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(report(&out)["decomposition_ok"], Value::Bool(false));
}

#[test]
fn reports_are_deterministic() {
    let f = grid_files();
    for args in [
        vec!["mass", "--space", &f.space, "--current", &f.current, "--seed", "7"],
        vec!["decompose", "--space", &f.space, "--current", &f.current, "--functions", &f.functions],
        vec!["represent", "--space", &f.space, "--current", &f.current, "--functions", &f.functions],
    ] {
        let a = bin(&args);
        let b = bin(&args);
        assert_eq!(a.status.code(), Some(0));
        assert_eq!(a.stdout, b.stdout);
    }
}
