//! The `run`, `invert` and `verify` commands. Each produces an [`Outcome`]
//! holding a status, a JSON report and CSV files; nothing but the report
//! is written unless the status is [`Status::Ok`].

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::controls::{AdmissibleControl, GridNode};
use crate::error::{Error, Result};
use crate::fields::{involution_residual, FIT_ACCEPTANCE};
use crate::flows::displacement_check;
use crate::inversion::{estimate_constants, solve_psi, ContractionConstants};
use crate::jumpflow::{evolve, ode_residual};
use crate::sampling::{ball_points, derive_seed};
use crate::scenario::{load, Scenario, SCHEMA_VERSION};
use crate::verify::{
    box_ball_samples, gradient_bound_check, gradient_samples, hj_jump_residual_v, hj_residual_psi, hj_residual_z,
    interior_times, ode_refinement, ResidualReport,
};

/// Points used for the involution gate.
pub const INVOLUTION_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    GateFailure,
    ParseError,
    NumericError,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::GateFailure => 1,
            Status::ParseError => 2,
            Status::NumericError => 3,
        }
    }
}

/// Command-line overrides applied on top of the config.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tol_scale: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub status: Status,
    pub report: Value,
    /// `(file name, contents)` in creation order.
    pub files: Vec<(String, String)>,
}

impl Outcome {
    pub fn code(&self) -> i32 {
        self.status.code()
    }

    pub fn report_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.report).expect("report serializes");
        s.push('\n');
        s
    }

    /// Writes the CSV files (on success only) and `report.json`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        if self.status == Status::Ok {
            for (name, body) in &self.files {
                fs::write(dir.join(name), body)?;
            }
        }
        fs::write(dir.join("report.json"), self.report_json())
    }
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn vec_json(v: &DVector<f64>) -> Value {
    json!(v.as_slice())
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

struct Report {
    command: &'static str,
    body: serde_json::Map<String, Value>,
    failed: Vec<String>,
    files: Vec<(String, String)>,
}

impl Report {
    fn new(command: &'static str) -> Self {
        Self { command, body: serde_json::Map::new(), failed: Vec::new(), files: Vec::new() }
    }

    fn set(&mut self, key: &str, value: Value) {
        self.body.insert(key.to_string(), value);
    }

    fn gate(&mut self, name: &str, pass: bool) {
        if !pass {
            self.failed.push(name.to_string());
        }
    }

    fn finish(mut self, status: Status, error: Option<String>) -> Outcome {
        let status = if status == Status::Ok && !self.failed.is_empty() { Status::GateFailure } else { status };
        self.body.insert("command".into(), json!(self.command));
        self.body.insert("schema_version".into(), json!(SCHEMA_VERSION));
        self.body.insert("status".into(), to_value(&status));
        self.body.insert("failed".into(), json!(self.failed));
        self.body.insert("error".into(), json!(error));
        Outcome { status, report: Value::Object(self.body), files: self.files }
    }

    fn fail(self, err: Error) -> Outcome {
        let status = match err {
            Error::GateRefused { .. } => Status::GateFailure,
            Error::Config { .. } => Status::ParseError,
            _ => Status::NumericError,
        };
        let mut r = self;
        if let Error::Config { line, column, .. } = &err {
            r.set("parse", json!({ "line": line, "column": column }));
        }
        if let Error::GateRefused { .. } = &err {
            r.failed.push("contraction".into());
        }
        r.finish(status, Some(err.to_string()))
    }
}

fn prepare(text: &str, overrides: &Overrides, report: &mut Report) -> Result<Scenario> {
    let mut s = load(text)?;
    if let Some(seed) = overrides.seed {
        s.seed = seed;
    }
    if let Some(f) = overrides.tol_scale {
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::Config {
                line: 0,
                column: 0,
                message: format!("tolerance scale must be positive, got {f}"),
            });
        }
        s.tolerances = s.tolerances.scaled(f);
    }
    report.set("scenario", json!(s.system.name()));
    report.set("seed", json!(s.seed));
    report.set("drift", json!(s.drift()));
    report.set("tolerances", to_value(&s.tolerances));
    Ok(s)
}

/// Displacement, involution and control gates shared by every command.
fn gates(s: &Scenario, report: &mut Report) -> Result<()> {
    let sys = &s.system;
    let disp = displacement_check(sys, s.control.horizon(), s.seed);
    report.gate("displacement_check", disp.pass);
    let samples = ball_points(sys.center(), 3.0 * sys.radius(), INVOLUTION_SAMPLES, derive_seed(s.seed, 61));
    let residual = involution_residual(sys, &samples)?;
    let involution_pass = residual <= FIT_ACCEPTANCE;
    report.gate("involution_residual", involution_pass);
    let mut gates = serde_json::Map::new();
    gates.insert("displacement_check".into(), to_value(&disp));
    gates.insert(
        "involution_residual".into(),
        json!({ "residual": residual, "threshold": FIT_ACCEPTANCE, "samples": INVOLUTION_SAMPLES, "pass": involution_pass }),
    );
    if let Some(fit) = &s.fit {
        report.gate("structure_fit", fit.accepted);
        gates.insert("structure_fit".into(), json!({ "residual": fit.residual, "accepted": fit.accepted }));
    }
    let control = s.control.validate(sys, s.seed);
    report.gate("control", control.pass);
    gates.insert("control".into(), to_value(&control));
    report.set("gates", Value::Object(gates));
    Ok(())
}

fn constants_json(c: &ContractionConstants) -> Value {
    json!({
        "c1": c.c1,
        "c2": c.c2,
        "k1": c.k1,
        "rho": c.rho,
        "raw_rho": c.raw_rho(),
        "samples": c.samples,
        "gate_pass": c.gate_pass,
    })
}

fn contraction(s: &Scenario, report: &mut Report) -> Result<ContractionConstants> {
    let c = estimate_constants(&s.system, &s.algebra, &s.control, s.drift(), s.seed)?;
    report.set("constants", constants_json(&c));
    report.gate("contraction", c.gate_pass);
    Ok(c)
}

fn jump_flag(u: &AdmissibleControl, nodes: &[GridNode], idx: usize, lambda: &DVector<f64>) -> u8 {
    let crossed = idx > 0 && nodes[idx - 1].left;
    u8::from(crossed && u.jump(nodes[idx].interval, lambda).iter().any(|d| *d != 0.0))
}

fn header(out: &mut String, first: &str, prefix: &str, n: usize, tail: &[&str]) {
    out.push_str(first);
    for i in 1..=n {
        let _ = write!(out, ",{prefix}_{i}");
    }
    for t in tail {
        let _ = write!(out, ",{t}");
    }
    out.push('\n');
}

struct TrajectoryRun {
    summary: Value,
    trajectory_csv: String,
    alpha_beta_csv: String,
}

fn run_one(s: &Scenario, index: usize, lambda: &DVector<f64>) -> Result<TrajectoryRun> {
    let (sys, u) = (&s.system, &s.control);
    let traj = evolve(sys, &s.algebra, u, lambda, s.drift(), s.tolerances.cells)?;
    let residual = ode_residual(&traj, sys)?;
    let nodes = traj.nodes();
    let n = sys.dim();
    let m = u.channels();

    let mut tcsv = String::new();
    header(&mut tcsv, "t", "x", n, &["jump", "residual"]);
    for (idx, (node, x)) in nodes.iter().zip(traj.values()).enumerate() {
        tcsv.push_str(&num(node.t));
        for v in x.iter() {
            let _ = write!(tcsv, ",{}", num(*v));
        }
        let _ = writeln!(tcsv, ",{},{}", jump_flag(u, nodes, idx, lambda), num(residual.per_node[idx]));
    }

    let path = traj.path();
    let mut acsv = String::from("t");
    for r in 1..=m {
        for c in 1..=m {
            let _ = write!(acsv, ",alpha_{r}_{c}");
        }
    }
    let mut rest = String::new();
    header(&mut rest, "", "beta", m, &["jump"]);
    acsv.push_str(&rest);
    for (idx, node) in nodes.iter().enumerate() {
        acsv.push_str(&num(node.t));
        let a = &path.alpha()[idx];
        for r in 0..m {
            for c in 0..m {
                let _ = write!(acsv, ",{}", num(a[(r, c)]));
            }
        }
        for b in path.beta()[idx].iter() {
            let _ = write!(acsv, ",{}", num(*b));
        }
        let _ = writeln!(acsv, ",{}", jump_flag(u, nodes, idx, lambda));
    }

    let summary = json!({
        "index": index,
        "lambda": vec_json(lambda),
        "nodes": nodes.len(),
        "max_distance": traj.max_distance(sys),
        "ode_residual": residual.max,
        "alpha_max_variation": path.max_variation(),
        "jumps": path.jump_log().len(),
    });
    Ok(TrajectoryRun { summary, trajectory_csv: tcsv, alpha_beta_csv: acsv })
}

/// Evolves every configured `lambda` after the gates pass.
pub fn run(text: &str, overrides: &Overrides) -> Outcome {
    let mut report = Report::new("run");
    match run_inner(text, overrides, &mut report) {
        Ok(()) => report.finish(Status::Ok, None),
        Err(e) => report.fail(e),
    }
}

fn run_inner(text: &str, overrides: &Overrides, report: &mut Report) -> Result<()> {
    let s = prepare(text, overrides, report)?;
    gates(&s, report)?;
    if !report.failed.is_empty() {
        return Ok(());
    }
    let runs: Vec<TrajectoryRun> =
        s.lambdas.par_iter().enumerate().map(|(i, l)| run_one(&s, i, l)).collect::<Result<_>>()?;
    report.set("trajectories", Value::Array(runs.iter().map(|r| r.summary.clone()).collect()));
    for (i, r) in runs.into_iter().enumerate() {
        if s.config.outputs.trajectories {
            report.files.push((format!("trajectory_{i}.csv"), r.trajectory_csv));
        }
        if s.config.outputs.alpha_beta {
            report.files.push((format!("alpha_beta_{i}.csv"), r.alpha_beta_csv));
        }
    }
    Ok(())
}

/// Solves for `psi` at every configured `x` after the gates and the contraction check.
pub fn invert(text: &str, overrides: &Overrides) -> Outcome {
    let mut report = Report::new("invert");
    match invert_inner(text, overrides, &mut report) {
        Ok(()) => report.finish(Status::Ok, None),
        Err(e) => report.fail(e),
    }
}

fn invert_inner(text: &str, overrides: &Overrides, report: &mut Report) -> Result<()> {
    let s = prepare(text, overrides, report)?;
    gates(&s, report)?;
    if !report.failed.is_empty() {
        return Ok(());
    }
    let c = contraction(&s, report)?;
    if !c.gate_pass {
        let detail = format!(
            "rho = {:.6e} (C1 = {:.6e}, C2 = {:.6e}, K1 = {:.6e}, safety 1.2) exceeds 1/2",
            c.rho, c.c1, c.c2, c.k1
        );
        report.set("contraction_detail", json!(detail));
        return Ok(());
    }
    let (sys, n) = (&s.system, s.system.dim());
    let tol = &s.tolerances;
    let results =
        s.xs.par_iter()
            .map(|x| solve_psi(sys, &s.control, &c, x, s.drift(), tol.cells, false))
            .collect::<Result<Vec<_>>>()?;
    let mut summaries = Vec::with_capacity(results.len());
    let mut round_trip_ok = true;
    let mut gamma_ok = true;
    for (i, r) in results.iter().enumerate() {
        let within = r.max_displacement() <= sys.radius();
        let rt = r.max_round_trip();
        round_trip_ok &= rt <= tol.round_trip;
        gamma_ok &= within;
        summaries.push(json!({
            "index": i,
            "x": vec_json(&r.x),
            "max_round_trip": rt,
            "max_displacement": r.max_displacement(),
            "within_gamma": within,
            "max_iterations": r.iterations.iter().max().copied().unwrap_or(0),
        }));
        if s.config.outputs.psi {
            let mut csv = String::new();
            header(&mut csv, "t", "psi", n, &["iterations", "first_increment", "last_increment", "round_trip"]);
            for (idx, node) in r.nodes.iter().enumerate() {
                csv.push_str(&num(node.t));
                for v in r.psi[idx].iter() {
                    let _ = write!(csv, ",{}", num(*v));
                }
                let inc = &r.increments[idx];
                let first = inc.first().copied().unwrap_or(0.0);
                let last = inc.last().copied().unwrap_or(0.0);
                let _ = writeln!(csv, ",{},{},{},{}", r.iterations[idx], num(first), num(last), num(r.round_trip[idx]));
            }
            report.files.push((format!("psi_{i}.csv"), csv));
        }
    }
    report.gate("round_trip", round_trip_ok);
    report.gate("psi_displacement", gamma_ok);
    report.set("queries", Value::Array(summaries));
    Ok(())
}

/// Runs every residual identity with its refinement study.
pub fn verify(text: &str, overrides: &Overrides) -> Outcome {
    let mut report = Report::new("verify");
    match verify_inner(text, overrides, &mut report) {
        Ok(()) => report.finish(Status::Ok, None),
        Err(e) => report.fail(e),
    }
}

fn verify_inner(text: &str, overrides: &Overrides, report: &mut Report) -> Result<()> {
    let s = prepare(text, overrides, report)?;
    gates(&s, report)?;
    if !report.failed.is_empty() {
        return Ok(());
    }
    let c = contraction(&s, report)?;
    let (sys, alg, u, tol) = (&s.system, &s.algebra, &s.control, &s.tolerances);
    let drift = s.drift();
    let inner = sys.radius() * (1.0 - tol.sample_margin);
    let mut identities: Vec<ResidualReport> = Vec::new();
    let mut studies = serde_json::Map::new();

    let z_samples = box_ball_samples(sys, inner, tol.z_samples, derive_seed(s.seed, 71));
    identities.push(hj_residual_z(sys, alg, &z_samples, tol)?);

    let xs = ball_points(sys.center(), inner, tol.jump_samples, derive_seed(s.seed, 72));
    let per_lambda = s
        .lambdas
        .par_iter()
        .map(|l| {
            Ok((hj_jump_residual_v(sys, alg, u, l, &xs, drift, tol)?, ode_refinement(sys, alg, u, l, drift, tol)?))
        })
        .collect::<Result<Vec<_>>>()?;
    for (i, ((jump, jump_study), (ode, ode_study))) in per_lambda.into_iter().enumerate() {
        studies.insert(format!("{}_{i}", jump.identity), to_value(&jump_study));
        studies.insert(format!("{}_{i}", ode.identity), to_value(&ode_study));
        identities.push(jump);
        identities.push(ode);
    }

    if c.gate_pass {
        let shortest = u.breakpoints().windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        let times = interior_times(u, tol.psi_samples, 0.01 * shortest, derive_seed(s.seed, 73));
        let points = ball_points(sys.center(), inner, tol.psi_samples, derive_seed(s.seed, 74));
        let samples: Vec<_> = times.into_iter().zip(points).collect();
        identities.push(hj_residual_psi(sys, alg, u, &c, &samples, drift, tol)?);
    }
    let grads = gradient_samples(sys, u, tol.gradient_samples, tol.sample_margin, derive_seed(s.seed, 75));
    identities.push(gradient_bound_check(sys, u, &c, &grads, drift, tol)?);

    for r in &identities {
        report.gate(&r.identity, r.verdict);
    }
    report.set("identities", to_value(&identities));
    report.set("refinement", Value::Object(studies));
    Ok(())
}

/// Reads the config, runs `command` and writes the outputs; returns the exit code.
pub fn execute(command: fn(&str, &Overrides) -> Outcome, config: &Path, out: &Path, overrides: &Overrides) -> i32 {
    let outcome = match fs::read_to_string(config) {
        Ok(text) => command(&text, overrides),
        Err(e) => {
            let mut r = Report::new("read");
            r.set("config", json!(config.display().to_string()));
            r.finish(Status::ParseError, Some(format!("cannot read config: {e}")))
        }
    };
    match outcome.write(out) {
        Ok(()) => outcome.code(),
        Err(_) => Status::NumericError.code(),
    }
}

pub fn cmd_run(config: &Path, out: &Path, overrides: &Overrides) -> i32 {
    execute(run, config, out, overrides)
}

pub fn cmd_invert(config: &Path, out: &Path, overrides: &Overrides) -> i32 {
    execute(invert, config, out, overrides)
}

pub fn cmd_verify(config: &Path, out: &Path, overrides: &Overrides) -> i32 {
    execute(verify, config, out, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRANSLATIONS: &str = r#"{
  "version": 1,
  "system": { "builtin": { "name": "translations", "dim": 2 } },
  "geometry": { "center": [0, 0], "radius": 1.0, "half_widths": [0.1, 0.1], "horizon": 1.0 },
  "control": {
    "breakpoints": [0.0, 0.5, 1.0],
    "pieces": [[[0, 0.1, 0, 0], [0, 0, 0.1, 0]], [[0, 0.1, 0, 0], [0, 0, 0, -0.05]]],
    "shapes": [{ "kind": "ridge", "direction": [1, 0], "center": [0, 0] }, { "kind": "constant" }],
    "jumps": [{ "at": 0.5, "delta": [-0.02, 0.01] }],
    "k1": 0.2
  },
  "queries": { "lambdas": [[0.3, -0.2], [0.0, 0.4]], "xs": [[0.2, 0.1]] },
  "tolerances": { "refinements": 1, "z_samples": 10, "jump_samples": 2, "psi_samples": 5, "gradient_samples": 20 }
}"#;

    fn column(csv: &str, row: usize) -> Vec<f64> {
        csv.lines().nth(row + 1).unwrap().split(',').map(|v| v.parse().unwrap()).collect()
    }

    #[test]
    fn run_translations_closed_form() {
        let out = run(TRANSLATIONS, &Overrides::default());
        assert_eq!(out.status, Status::Ok, "{}", out.report_json());
        assert_eq!(out.files.len(), 4);
        let (name, csv) = &out.files[0];
        assert_eq!(name, "trajectory_0.csv");
        assert!(csv.starts_with("t,x_1,x_2,jump,residual\n"));
        let text = parse_control();
        for row in 0..csv.lines().count() - 1 {
            let r = column(csv, row);
            let lam = DVector::from_vec(vec![0.3, -0.2]);
            let uv = if row == 200 { text.eval_left(r[0], &lam).unwrap() } else { text.eval(r[0], &lam).unwrap() };
            assert!((r[1] - 0.3 - uv[0]).abs() < 1e-14 && (r[2] + 0.2 - uv[1]).abs() < 1e-14, "row {row}");
        }
        assert_eq!(column(csv, 201)[3], 1.0);
        assert_eq!(column(csv, 200)[3], 0.0);
        assert!(out.files[1].1.starts_with("t,alpha_1_1,alpha_1_2,alpha_2_1,alpha_2_2,beta_1,beta_2,jump\n"));
    }

    fn parse_control() -> AdmissibleControl {
        load(TRANSLATIONS).unwrap().control
    }

    #[test]
    fn csv_numbers_have_seventeen_digits() {
        let out = run(TRANSLATIONS, &Overrides::default());
        let row = out.files[0].1.lines().nth(3).unwrap().to_string();
        let first = row.split(',').next().unwrap();
        assert!((first.parse::<f64>().unwrap() - 0.005).abs() < 1e-15, "{first}");
        assert_eq!(first.split('e').next().unwrap().len(), 18);
    }

    #[test]
    fn displacement_gate_failure() {
        let big = TRANSLATIONS.replace("\"half_widths\": [0.1, 0.1]", "\"half_widths\": [0.6, 0.1]");
        let out = run(&big, &Overrides::default());
        assert_eq!(out.code(), 1);
        assert!(out.files.is_empty());
        assert_eq!(out.report["failed"][0], "displacement_check");
    }

    #[test]
    fn malformed_config_is_exit_two() {
        let out = run("{\n  \"version\": 1,\n  oops\n}", &Overrides::default());
        assert_eq!(out.code(), 2);
        assert_eq!(out.report["parse"]["line"], 3);
    }

    #[test]
    fn invert_and_gate_refusal() {
        let out = invert(TRANSLATIONS, &Overrides::default());
        assert_eq!(out.status, Status::Ok, "{}", out.report_json());
        assert!((out.report["constants"]["rho"].as_f64().unwrap() - 0.24).abs() < 1e-12);
        assert!(out.report["queries"][0]["max_round_trip"].as_f64().unwrap() <= 1e-12);
        let big = TRANSLATIONS.replace("\"k1\": 0.2", "\"k1\": 0.5");
        let out = invert(&big, &Overrides::default());
        assert_eq!(out.code(), 1);
        assert_eq!(out.report["failed"][0], "contraction");
        assert!(out.report["contraction_detail"].as_str().unwrap().contains("rho"));
    }

    #[test]
    fn verify_translations_passes_and_is_deterministic() {
        let a = verify(TRANSLATIONS, &Overrides::default());
        assert_eq!(a.status, Status::Ok, "{}", a.report_json());
        let b = verify(TRANSLATIONS, &Overrides::default());
        assert_eq!(a.report_json(), b.report_json());
        let c = verify(TRANSLATIONS, &Overrides { seed: Some(7), tol_scale: None });
        assert_ne!(a.report_json(), c.report_json());
        for id in a.report["identities"].as_array().unwrap() {
            let name = id["identity"].as_str().unwrap();
            if name != "gradient_bound" && name != "ode" {
                assert!(id["max_residual"].as_f64().unwrap() <= 1e-10, "{name}");
            }
        }
    }

    #[test]
    fn outputs_only_on_success() {
        let dir = tempfile::tempdir().unwrap();
        let big = TRANSLATIONS.replace("\"half_widths\": [0.1, 0.1]", "\"half_widths\": [0.6, 0.1]");
        let out = run(&big, &Overrides::default());
        out.write(dir.path()).unwrap();
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec!["report.json"]);
        let cfg = dir.path().join("missing.json");
        assert_eq!(cmd_run(&cfg, dir.path(), &Overrides::default()), 2);
    }
}
