//! Command line front-end. Reports go to stdout as JSON; human summaries go to stderr.
//!
//! Exit codes: 0 success, 2 input error, 3 failed mathematical precondition, 4 tolerance not
//! met.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::alberti::{current_to_alberti, validate, PipelineConfig};
use crate::approx::{approximate_by_normal, ApproxConfig, NormalApproxReport};
use crate::currents::{mass_estimate, Current, MassConfig, MassEstimate};
use crate::derivations::{pseudodual_basis, Derivation, Pseudodual};
use crate::error::{Error, ErrorKind, Result};
use crate::exterior::represent_current;
use crate::fixtures;
use crate::fragments::Fragment;
use crate::io::{
    dictionary_from_functions, fragments_from_files, functions_from_value, num, nums, read_json, CurrentFile,
    DerivationFile, FragmentFile, KVectorFile, RepFile, SpaceFile,
};
use crate::renorm::{renorm_distance, GeneratingSet};
use crate::space::{Cone, FnDict, MetricSpace};

#[derive(Debug, Parser)]
#[command(name = "metric-currents", version, about = "Metric currents on finite metric measure spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Space file: {"points", "coords" | "dist", "mu"}.
    #[arg(long)]
    space: PathBuf,
    /// Fragment list referenced by index from other files.
    #[arg(long)]
    fragments: Option<PathBuf>,
    /// Named functions {"name": [values]} forming the test dictionary.
    #[arg(long)]
    functions: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Suppress the stderr summary.
    #[arg(long)]
    quiet: bool,
    /// Directory receiving report.json and any CSV series.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Certified mass interval of a current.
    Mass {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        current: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        eta: f64,
    },
    /// Partition of the mass measure with Alberti representations in cone directions.
    Decompose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        current: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        eta: f64,
        #[arg(long, default_value_t = 0.2)]
        delta: f64,
        /// biLipschitz slack for refining the fragment family.
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        /// Cone axis as comma separated components; repeat for several cones. Defaults to the
        /// coordinate axes of R^k.
        #[arg(long = "cone-axis", allow_hyphen_values = true)]
        cone_axis: Vec<String>,
        #[arg(long = "cone-angle", default_value_t = std::f64::consts::FRAC_PI_4)]
        cone_angle: f64,
        #[arg(long = "max-iter", default_value_t = 4)]
        max_iter: usize,
    },
    /// Approximation of a 1-current by normal currents with the error series.
    ApproxNormal {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        current: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        #[arg(long = "max-iter", default_value_t = 3)]
        max_iter: usize,
        /// Tent resolution of the first step is 2^level intervals per axis.
        #[arg(long, default_value_t = 1)]
        level: usize,
    },
    /// Representation of a current through a k-vector field over pseudodual bases.
    Represent {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        current: PathBuf,
        /// JSON array of derivations; defaults to the basis of a precurrent.
        #[arg(long)]
        derivations: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
    },
    /// Strictly convex renorming of the distance.
    Renorm {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        /// Truncation level of the generating set.
        #[arg(long = "m", default_value_t = 16)]
        m: usize,
    },
    /// Pseudodual partition and functions for a list of derivations.
    Pseudodual {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        derivations: Option<PathBuf>,
        /// Precurrent whose basis is used when no derivation list is given.
        #[arg(long)]
        current: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
    },
    /// Checks an Alberti representation against the space measure.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rep: PathBuf,
    },
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(cli.command, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Input => 2,
        ErrorKind::Precondition => 3,
        ErrorKind::Tolerance => 4,
    }
}

struct Outcome {
    report: Value,
    summary: String,
    csv: Vec<(&'static str, String)>,
    /// Set when the report is complete but a tolerance was not met.
    tolerance_unmet: bool,
}

fn execute(cmd: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let (common, outcome) = match cmd {
        Command::Mass { common, current, eta } => {
            let o = cmd_mass(&common, &current, eta)?;
            (common, o)
        }
        Command::Decompose { common, current, eta, delta, eps, cone_axis, cone_angle, max_iter } => {
            let cfg = PipelineConfig { eta, delta, eps, tol: common.tol, max_rounds: max_iter };
            let o = cmd_decompose(&common, &current, &cone_axis, cone_angle, &cfg)?;
            (common, o)
        }
        Command::ApproxNormal { common, current, eps, max_iter, level } => {
            let cfg = ApproxConfig { base_level: level, max_iter, eps, seed: common.seed, ..ApproxConfig::default() };
            let o = cmd_approx(&common, &current, &cfg)?;
            (common, o)
        }
        Command::Represent { common, current, derivations, eps } => {
            let o = cmd_represent(&common, &current, derivations.as_deref(), eps)?;
            (common, o)
        }
        Command::Renorm { common, eps, m } => {
            let o = cmd_renorm(&common, eps, m)?;
            (common, o)
        }
        Command::Pseudodual { common, derivations, current, eps } => {
            let o = cmd_pseudodual(&common, derivations.as_deref(), current.as_deref(), eps)?;
            (common, o)
        }
        Command::Validate { common, rep } => {
            let o = cmd_validate(&common, &rep)?;
            (common, o)
        }
    };
    let text = serde_json::to_string_pretty(&outcome.report).map_err(|e| Error::Parse(e.to_string()))?;
    writeln!(stdout, "{text}")?;
    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), format!("{text}\n"))?;
        for (name, body) in &outcome.csv {
            std::fs::write(dir.join(name), body)?;
        }
    }
    if !common.quiet {
        writeln!(stderr, "{}", outcome.summary)?;
    }
    Ok(if outcome.tolerance_unmet { 4 } else { 0 })
}

struct Loaded {
    space: MetricSpace,
    mu: Vec<f64>,
    fragments: Vec<Fragment>,
    dict: FnDict,
}

fn load(common: &Common) -> Result<Loaded> {
    let (space, mu) = read_json::<SpaceFile>(&common.space)?.build()?;
    let fragments = match &common.fragments {
        Some(p) => fragments_from_files(&read_json::<Vec<FragmentFile>>(p)?, &space)?,
        None => Vec::new(),
    };
    let dict = match &common.functions {
        Some(p) => dictionary_from_functions(&space, functions_from_value(&read_json::<Value>(p)?, &space)?)?,
        None => fixtures::dictionary(&space),
    };
    Ok(Loaded { space, mu: mu.weights, fragments, dict })
}

fn load_current(path: &Path, l: &Loaded) -> Result<Current> {
    read_json::<CurrentFile>(path)?.build(&l.space, &l.mu, &l.fragments)
}

fn load_derivations(path: &Path, l: &Loaded) -> Result<Vec<Derivation>> {
    read_json::<Vec<DerivationFile>>(path)?.iter().map(|d| d.build(&l.mu, &l.fragments, &l.space)).collect()
}

fn ids(space: &MetricSpace, set: &[usize]) -> Value {
    json!(set.iter().map(|&p| space.ids()[p].as_str()).collect::<Vec<_>>())
}

/// Fragments carrying a fragment sum or the basis of a precurrent, without repeats.
fn carrier_fragments(t: &Current) -> Vec<Fragment> {
    let mut out: Vec<Fragment> = Vec::new();
    let mut push = |f: &Fragment| {
        if !out.contains(f) {
            out.push(f.clone());
        }
    };
    match t {
        Current::FragmentSum { terms, .. } => terms.iter().for_each(|s| push(&s.fragment)),
        Current::Precurrent { xi, .. } => xi.basis.iter().flat_map(|d| d.carrier()).for_each(|e| push(&e.fragment)),
        _ => {}
    }
    out
}

pub fn mass_report(est: &MassEstimate, space: &MetricSpace, k: usize) -> Value {
    let witnesses: Vec<Value> = est
        .witnesses
        .iter()
        .map(|w| {
            json!({
                "set": ids(space, &w.set),
                "names": w.names,
                "value": num(w.value),
                "lower_mass": num(w.lower_mass),
                "upper_mass": num(w.upper_mass),
                "efficient": w.efficient,
            })
        })
        .collect();
    json!({
        "k": k,
        "points": space.ids(),
        "lower": nums(&est.lower),
        "upper": nums(&est.upper),
        "lower_total": num(est.lower_total),
        "upper_total": num(est.upper_total),
        "gap": num(est.gap),
        "uncovered_upper": num(est.uncovered_upper),
        "eta": est.eta,
        "witnesses": witnesses,
    })
}

fn cmd_mass(common: &Common, current: &Path, eta: f64) -> Result<Outcome> {
    let l = load(common)?;
    let t = load_current(current, &l)?;
    let est = mass_estimate(&t, &l.space, &l.dict, MassConfig { eta, ..MassConfig::default() })?;
    Ok(Outcome {
        report: mass_report(&est, &l.space, t.k()),
        summary: format!(
            "mass of the {}-current in [{}, {}] ({} witnesses)",
            t.k(),
            est.lower_total,
            est.upper_total,
            est.witnesses.len()
        ),
        csv: Vec::new(),
        tolerance_unmet: false,
    })
}

fn parse_axis(text: &str) -> Result<Vec<f64>> {
    let v = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad cone axis component {s:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::InvalidArgument(format!("cone axis {text:?} is zero")));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

fn cmd_decompose(common: &Common, current: &Path, axes: &[String], angle: f64, cfg: &PipelineConfig) -> Result<Outcome> {
    let l = load(common)?;
    let t = load_current(current, &l)?;
    let k = t.k();
    let axes: Vec<Vec<f64>> = if axes.is_empty() {
        (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
    } else {
        axes.iter().map(|a| parse_axis(a)).collect::<Result<_>>()?
    };
    let cones = axes.into_iter().map(|a| Cone::new(a, angle)).collect::<Result<Vec<_>>>()?;
    let mut family = carrier_fragments(&t);
    for f in &l.fragments {
        if !family.contains(f) {
            family.push(f.clone());
        }
    }
    let dec = current_to_alberti(&t, &cones, &family, &l.space, &l.dict, cfg)?;
    let pieces: Vec<Value> = dec
        .pieces
        .iter()
        .map(|p| {
            json!({
                "set": ids(&l.space, &p.set),
                "names": p.names,
                "peel_masses": nums(&p.peel_masses),
                "peel_bound": num(p.peel_bound),
                "peel_ok": p.peel_ok,
                "direction_fractions": nums(&p.direction_fractions),
                "independence": num(p.independence),
            })
        })
        .collect();
    let glued: Vec<Value> = dec
        .glued
        .iter()
        .map(|r| serde_json::to_value(RepFile::from_rep(r, &l.space)).expect("representation serializes"))
        .collect();
    let report = json!({
        "k": k,
        "cones": cones.iter().map(|c| json!({"axis": c.axis, "alpha": c.alpha})).collect::<Vec<_>>(),
        "mass": nums(&dec.mass),
        "coverage_defect": num(dec.coverage_defect),
        "rounds": dec.rounds,
        "pieces": pieces,
        "glued": glued,
    });
    let unmet = dec.coverage_defect > cfg.tol;
    Ok(Outcome {
        report,
        summary: format!(
            "{} piece(s) in {} round(s); coverage defect {}{}",
            dec.pieces.len(),
            dec.rounds,
            dec.coverage_defect,
            if unmet { " exceeds the tolerance" } else { "" }
        ),
        csv: Vec::new(),
        tolerance_unmet: unmet,
    })
}

pub fn approx_report(r: &NormalApproxReport, space: &MetricSpace) -> Value {
    let steps: Vec<Value> = r
        .steps
        .iter()
        .map(|s| {
            json!({
                "level": s.level,
                "intervals": s.intervals,
                "fit_residual": num(s.fit_residual),
                "error": num(s.error),
                "boundary_tv": num(s.boundary_tv),
                "normal": s.normal,
                "g": nums(&s.g),
            })
        })
        .collect();
    json!({
        "mass": num(r.mass),
        "target": r.target,
        "reached": r.reached,
        "final_error": num(r.final_error()),
        "errors": nums(&r.errors),
        "steps": steps,
        "curves": r.curves.iter().map(|f| FragmentFile::from_fragment(f, space)).map(|f| serde_json::to_value(f).expect("fragment serializes")).collect::<Vec<_>>(),
        "filled_gaps": r.filled_gaps,
    })
}

pub fn errors_csv(r: &NormalApproxReport) -> String {
    let mut s = String::from("n,intervals,error\n");
    for (i, step) in r.steps.iter().enumerate() {
        s.push_str(&format!("{},{},{}\n", i + 1, step.intervals, step.error));
    }
    s
}

fn cmd_approx(common: &Common, current: &Path, cfg: &ApproxConfig) -> Result<Outcome> {
    let l = load(common)?;
    let t = load_current(current, &l)?;
    let r = approximate_by_normal(&t, &l.space, &l.dict, cfg)?;
    Ok(Outcome {
        report: approx_report(&r, &l.space),
        summary: format!(
            "{} step(s), final error {} (target {}){}",
            r.steps.len(),
            r.final_error(),
            r.target,
            if r.reached { "" } else { ": target not reached" }
        ),
        csv: vec![("errors.csv", errors_csv(&r))],
        tolerance_unmet: !r.reached,
    })
}

fn pseudodual_report(pd: &Pseudodual, dict: &FnDict, space: &MetricSpace) -> Value {
    let pieces: Vec<Value> = pd
        .pieces
        .iter()
        .map(|p| {
            json!({
                "set": ids(space, &p.set),
                "g": p.g.iter().map(|g| g.name(dict)).collect::<Vec<_>>(),
                "min_diagonal": num(p.min_diagonal),
                "min_det": num(p.min_det),
                "max_det": num(p.max_det),
            })
        })
        .collect();
    json!({
        "eps": pd.eps,
        "k": pd.pieces.first().map_or(0, |p| p.derivations.len()),
        "pieces": pieces,
        "norm_bound": num(pd.norm_bound),
        "duality_defect": num(pd.duality_defect),
        "span_residual": num(pd.span_residual),
        "max_span_coefficient": num(pd.max_span_coefficient),
        "max_norm": num(pd.max_norm),
    })
}

fn basis_of(t: &Current) -> Result<Vec<Derivation>> {
    match t {
        Current::Precurrent { xi, .. } => Ok(xi.basis.to_vec()),
        _ => Err(Error::UnsupportedForm("a derivation list or a precurrent")),
    }
}

fn cmd_pseudodual(common: &Common, derivations: Option<&Path>, current: Option<&Path>, eps: f64) -> Result<Outcome> {
    let l = load(common)?;
    let ds = match (derivations, current) {
        (Some(p), _) => load_derivations(p, &l)?,
        (None, Some(c)) => basis_of(&load_current(c, &l)?)?,
        (None, None) => return Err(Error::InvalidArgument("pseudodual needs --derivations or --current".into())),
    };
    let pd = pseudodual_basis(&ds, &l.dict, eps, &l.space, None)?;
    Ok(Outcome {
        report: pseudodual_report(&pd, &l.dict, &l.space),
        summary: format!("{} piece(s), duality defect {}", pd.pieces.len(), pd.duality_defect),
        csv: Vec::new(),
        tolerance_unmet: false,
    })
}

fn cmd_represent(common: &Common, current: &Path, derivations: Option<&Path>, eps: f64) -> Result<Outcome> {
    let l = load(common)?;
    let t = load_current(current, &l)?;
    let ds = match derivations {
        Some(p) => load_derivations(p, &l)?,
        None => basis_of(&t)?,
    };
    let pd = pseudodual_basis(&ds, &l.dict, eps, &l.space, None)?;
    let est = mass_estimate(&t, &l.space, &l.dict, MassConfig::default())?;
    let rep = represent_current(&t, &pd, &l.space, &l.dict, &est.lower)?;
    let omega = &rep.omega;
    let mut csv = String::from("point,tuple,lambda\n");
    let mut table = Vec::new();
    for x in 0..l.space.len() {
        for (tuple, c) in omega.tuples.iter().zip(&omega.coeffs) {
            let label = tuple.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
            csv.push_str(&format!("{},{},{}\n", l.space.ids()[x], label, c[x]));
            table.push(json!({"point": l.space.ids()[x], "tuple": tuple, "lambda": num(c[x])}));
        }
    }
    let report = json!({
        "k": t.k(),
        "omega": serde_json::to_value(KVectorFile::from_kvector(omega)).expect("k-vector serializes"),
        "lambda": table,
        "mass": nums(&rep.mass),
        "max_lambda": num(rep.max_lambda),
        "reconstruction_error": num(rep.reconstruction_error),
        "omega_norm": num(rep.omega_norm),
        "norm_bound": num(rep.norm_bound),
        "excluded": ids(&l.space, &rep.excluded),
        "pseudodual": pseudodual_report(&pd, &l.dict, &l.space),
    });
    let unmet = rep.reconstruction_error > common.tol;
    Ok(Outcome {
        report,
        summary: format!(
            "max |λ| {}, reconstruction error {}{}",
            rep.max_lambda,
            rep.reconstruction_error,
            if unmet { " exceeds the tolerance" } else { "" }
        ),
        csv: vec![("lambda.csv", csv)],
        tolerance_unmet: unmet,
    })
}

fn cmd_renorm(common: &Common, eps: f64, m: usize) -> Result<Outcome> {
    let (space, _) = read_json::<SpaceFile>(&common.space)?.build()?;
    let gen = match &common.functions {
        Some(p) => {
            let entries = functions_from_value(&read_json::<Value>(p)?, &space)?;
            GeneratingSet::from_dict(&dictionary_from_functions(&space, entries)?, m)?
        }
        None => GeneratingSet::distance_functions(&space, 0, m)?,
    };
    let xe = renorm_distance(&space, &gen, eps)?;
    let report = json!({
        "eps": eps,
        "M": m,
        "sandwich_ok": xe.sandwich_ok,
        "d_eps": xe.d_eps.iter().map(|r| nums(r)).collect::<Vec<_>>(),
    });
    Ok(Outcome {
        report,
        summary: format!(
            "renormed distance with ε = {eps}, M = {m}: sandwich {}",
            if xe.sandwich_ok { "holds" } else { "fails" }
        ),
        csv: Vec::new(),
        tolerance_unmet: false,
    })
}

fn cmd_validate(common: &Common, rep: &Path) -> Result<Outcome> {
    let l = load(common)?;
    let r = read_json::<RepFile>(rep)?.build(&l.fragments, &l.space)?;
    let v = validate(&r, &l.mu, common.tol);
    let report = json!({
        "max_defect": num(v.max_defect),
        "decomposition_ok": v.decomposition_ok,
        "ac_violations": v.ac_violations.iter().map(|(j, i)| json!([j, i])).collect::<Vec<_>>(),
        "p_sum": num(v.p_sum),
        "p_ok": v.p_ok,
        "ok": v.ok,
    });
    Ok(Outcome {
        report,
        summary: format!("representation {} (max defect {})", if v.ok { "valid" } else { "invalid" }, v.max_defect),
        csv: Vec::new(),
        tolerance_unmet: !v.ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let mut all = vec!["metric-currents"];
        all.extend_from_slice(args);
        let code = run(all, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    fn seg_dir() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("space.json"), r#"{"points":["a","b","c"],"coords":[[0],[0.5],[1]],"mu":[0.5,0.5,0]}"#)
            .unwrap();
        fs::write(
            dir.path().join("current.json"),
            r#"{"k":1,"form":"fragments","terms":[{"fragment":{"domain":[0,0.5,1],"trace":["a","b","c"]}}]}"#,
        )
        .unwrap();
        dir
    }

    fn p(dir: &tempfile::TempDir, name: &str) -> String {
        dir.path().join(name).to_string_lossy().into_owned()
    }

    #[test]
    fn mass_on_segment() {
        let d = seg_dir();
        let (code, out, err) = run_args(&["mass", "--space", &p(&d, "space.json"), "--current", &p(&d, "current.json")]);
        assert_eq!(code, 0, "{err}");
        let v: Value = serde_json::from_str(&out).unwrap();
        assert!((v["lower_total"].as_f64().unwrap() - 1.0).abs() < 1e-12);
        assert!((v["upper_total"].as_f64().unwrap() - 1.0).abs() < 1e-12);
        assert!(err.contains("mass"));
        let (_, quiet_out, quiet_err) =
            run_args(&["mass", "--quiet", "--space", &p(&d, "space.json"), "--current", &p(&d, "current.json")]);
        assert_eq!(quiet_out, out);
        assert!(quiet_err.is_empty());
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run_args(&["frobnicate"]).0, 2);
        assert_eq!(run_args(&["mass"]).0, 2);
        assert_eq!(run_args(&["--help"]).0, 0);
        let d = seg_dir();
        fs::write(d.path().join("bad.json"), "{\"points\": [").unwrap();
        let (code, _, err) = run_args(&["renorm", "--space", &p(&d, "bad.json")]);
        assert_eq!(code, 2);
        assert!(err.contains("line"));
    }

    #[test]
    fn renorm_on_segment() {
        let d = seg_dir();
        let (code, out, _) = run_args(&["renorm", "--space", &p(&d, "space.json"), "--eps", "0.1"]);
        assert_eq!(code, 0);
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["sandwich_ok"], json!(true));
        assert_eq!(v["M"], json!(16));
        assert_eq!(v["d_eps"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn decompose_exit_codes() {
        let d = seg_dir();
        let (code, out, err) =
            run_args(&["decompose", "--space", &p(&d, "space.json"), "--current", &p(&d, "current.json")]);
        assert_eq!(code, 0, "{err}");
        let v: Value = serde_json::from_str(&out).unwrap();
        assert!(v["coverage_defect"].as_f64().unwrap() <= 1e-9);
        let args = ["decompose", "--space", &p(&d, "space.json"), "--current", &p(&d, "current.json"), "--cone-axis", "1,0"];
        assert_eq!(run_args(&args).0, 2);
        fs::write(d.path().join("zero.json"), r#"{"k":1,"form":"fragments","terms":[]}"#).unwrap();
        let (code, _, err) = run_args(&["decompose", "--space", &p(&d, "space.json"), "--current", &p(&d, "zero.json")]);
        assert_eq!(code, 3);
        assert!(err.contains("zero current"));
    }

    #[test]
    fn axis_parsing() {
        assert_eq!(parse_axis("3, 4").unwrap(), vec![0.6, 0.8]);
        assert!(parse_axis("0,0").is_err());
        assert!(parse_axis("x").is_err());
    }
}
