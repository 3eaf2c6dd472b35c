//! Run configuration, validation and the report writer.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::constants::FracParams;
use crate::error::{Error, Result};
use crate::lattice::SingularSet;
use crate::suite::{run_experiment, Check, Context, Experiment, Outcome};

/// JSON run configuration; every key is optional and command-line flags
/// override it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Option<String>,
    pub n: Option<usize>,
    pub sigma: Option<f64>,
    pub k: Option<usize>,
    /// Set grammar: `point(x1,..)`, `ball(c1,..;r)`, `strip(k;extent)`,
    /// joined with `+`.
    pub set: Option<String>,
    pub levels: Option<usize>,
    pub seed: Option<u64>,
    pub output_dir: Option<String>,
}

impl RunConfig {
    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Keys set in `other` replace those of `self`.
    pub fn overridden_by(mut self, other: &RunConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => {$(if other.$f.is_some() { self.$f = other.$f.clone(); })*};
        }
        take!(experiment, n, sigma, k, set, levels, seed, output_dir);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Note,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn error(message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            message: message.into(),
        }
    }

    fn note(message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Note,
            message: message.into(),
        }
    }
}

pub const DEFAULT_OUT: &str = "./out";
pub const DEFAULT_SEED: u64 = 20240601;

/// A configuration with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub experiment: Experiment,
    pub n: usize,
    pub sigma: f64,
    pub k: Option<usize>,
    pub set: Option<String>,
    pub levels: usize,
    pub seed: u64,
    /// Left out of the summary so that reruns elsewhere compare equal.
    #[serde(skip)]
    pub output_dir: String,
}

/// Every problem with the configuration; never stops at the first one.
pub fn validate(cfg: &RunConfig) -> Vec<Diagnostic> {
    resolve(cfg).1
}

/// Applies defaults and collects diagnostics; the resolved configuration is
/// returned only when there is no error.
pub fn resolve(cfg: &RunConfig) -> (Option<Resolved>, Vec<Diagnostic>) {
    let mut diags = Vec::new();
    let exp = match cfg.experiment.as_deref() {
        None => {
            diags.push(Diagnostic::error("no experiment given"));
            None
        }
        Some(s) => match s.parse::<Experiment>() {
            Ok(e) => Some(e),
            Err(_) => {
                let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
                diags.push(Diagnostic::error(format!(
                    "unknown experiment '{s}' (one of {})",
                    names.join(", ")
                )));
                None
            }
        },
    };
    let (dn, ds, dk) = exp.map_or((2, 0.5, None), |e| e.defaults());
    let n = cfg.n.unwrap_or(dn);
    let sigma = cfg.sigma.unwrap_or(ds);
    let k = cfg.k.or(dk);
    if !(sigma > 0.0 && sigma < 1.0) {
        diags.push(Diagnostic::error("sigma out of (0,1)"));
    } else if !(0.05..=0.95).contains(&sigma) {
        diags.push(Diagnostic::error("sigma outside the supported range [0.05, 0.95]"));
    }
    if let Some(k) = k {
        if k + 1 > n {
            diags.push(Diagnostic::error("k must be ≤ n−1"));
        }
    }
    if let Some(e) = exp {
        if e == Experiment::FullSuite {
            if cfg.n.is_some() || cfg.sigma.is_some() || cfg.k.is_some() || cfg.set.is_some() {
                diags.push(Diagnostic::note(
                    "full-suite runs every experiment at its own default parameters; n, sigma, k and set are ignored",
                ));
            }
        } else {
            if n < e.min_n() || n > e.max_n() {
                diags.push(Diagnostic::error(format!(
                    "n = {n} unsupported by {e} (needs {}..={})",
                    e.min_n(),
                    e.max_n()
                )));
            }
            if matches!(e, Experiment::Blowup | Experiment::Symmetry) && k.is_none() {
                diags.push(Diagnostic::error(format!("{e} needs k")));
            }
            if e == Experiment::Symmetry {
                if let Some(k) = k {
                    if n < k + 2 {
                        diags.push(Diagnostic::error("symmetry needs a normal fiber of dimension ≥ 2 (k ≤ n−2)"));
                    }
                }
            }
            let lower = n as f64 - 2.0 * sigma;
            if e != Experiment::Constants && e != Experiment::ExtensionCheck && e != Experiment::Poincare && !(lower > 0.0) {
                diags.push(Diagnostic::error("n − 2σ must be positive"));
            }
        }
    }
    let set = match exp {
        Some(Experiment::FullSuite) => None,
        _ => cfg.set.clone().or_else(|| exp.and_then(|e| e.default_set(n))),
    };
    if let Some(spec) = &set {
        if let Err(e) = SingularSet::parse(spec, n) {
            diags.push(Diagnostic::error(format!("bad set '{spec}': {e}")));
        }
    }
    if exp == Some(Experiment::Equivalence) && set.is_none() {
        diags.push(Diagnostic::error("equivalence needs a set"));
    }
    let levels = cfg.levels.unwrap_or(if exp == Some(Experiment::FullSuite) { 1 } else { 3 });
    if !(1..=3).contains(&levels) {
        diags.push(Diagnostic::error(format!("levels must be 1, 2 or 3, got {levels}")));
    }
    let output_dir = match cfg.output_dir.as_deref() {
        None | Some("") => {
            diags.push(Diagnostic::note(format!("empty output_dir: default {DEFAULT_OUT} applied")));
            DEFAULT_OUT.to_string()
        }
        Some(d) => d.to_string(),
    };
    if diags.iter().any(|d| d.severity == Severity::Error) {
        return (None, diags);
    }
    let resolved = Resolved {
        experiment: exp.expect("checked above"),
        n,
        sigma,
        k,
        set,
        levels,
        seed: cfg.seed.unwrap_or(DEFAULT_SEED),
        output_dir,
    };
    (Some(resolved), diags)
}

#[derive(Debug, Clone, Serialize)]
struct Summary<'a> {
    experiment: String,
    config: &'a Resolved,
    all_pass: bool,
    failing: Vec<String>,
    notes: &'a [Diagnostic],
    checks: &'a [Check],
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub exit_code: i32,
    pub diagnostics: Vec<Diagnostic>,
    pub outcome: Option<Outcome>,
}

impl RunResult {
    pub fn failing(&self) -> Vec<String> {
        self.outcome.as_ref().map_or_else(Vec::new, |o| {
            o.checks
                .iter()
                .filter(|c| !c.report.pass)
                .map(|c| format!("{}/{}", c.experiment, c.report.name))
                .collect()
        })
    }
}

fn context(r: &Resolved) -> Result<Context> {
    let mut p = FracParams::linear(r.n, r.sigma)?;
    p.k = r.k;
    let set = r.set.as_deref().map(|s| SingularSet::parse(s, r.n)).transpose()?;
    Ok(Context {
        p,
        set,
        levels: r.levels,
        seed: r.seed,
    })
}

/// Runs the experiment and writes `results.csv`, `summary.json` and
/// `plotdata/*.tsv`. Exit code 0 when every check passes, 1 when one fails,
/// 2 when the configuration is invalid.
pub fn run(cfg: &RunConfig) -> Result<RunResult> {
    let (resolved, diagnostics) = resolve(cfg);
    let Some(resolved) = resolved else {
        return Ok(RunResult {
            exit_code: 2,
            diagnostics,
            outcome: None,
        });
    };
    let ctx = context(&resolved)?;
    let outcome = run_experiment(resolved.experiment, &ctx);
    write_outputs(&resolved, &diagnostics, &outcome)?;
    let all_pass = outcome.checks.iter().all(|c| c.report.pass);
    Ok(RunResult {
        exit_code: if all_pass { 0 } else { 1 },
        diagnostics,
        outcome: Some(outcome),
    })
}

fn write_outputs(r: &Resolved, notes: &[Diagnostic], o: &Outcome) -> Result<()> {
    let dir = PathBuf::from(&r.output_dir);
    fs::create_dir_all(dir.join("plotdata"))?;
    let mut w = csv::Writer::from_path(dir.join("results.csv")).map_err(csv_err)?;
    w.write_record([
        "experiment",
        "check",
        "anchor",
        "inputs",
        "measured",
        "predicted",
        "tolerance",
        "one_sided",
        "pass",
    ])
    .map_err(csv_err)?;
    for c in &o.checks {
        let rp = &c.report;
        w.write_record([
            c.experiment.clone(),
            rp.name.clone(),
            c.anchor.clone(),
            rp.inputs.clone(),
            num(rp.measured),
            num(rp.predicted),
            num(rp.tolerance),
            rp.one_sided.to_string(),
            rp.pass.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    let failing: Vec<String> = o
        .checks
        .iter()
        .filter(|c| !c.report.pass)
        .map(|c| format!("{}/{}", c.experiment, c.report.name))
        .collect();
    let summary = Summary {
        experiment: r.experiment.name().into(),
        config: r,
        all_pass: failing.is_empty(),
        failing,
        notes,
        checks: &o.checks,
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    for p in &o.plots {
        let mut s = format!("# {}\t{}\n", p.x, p.y);
        for (x, y) in &p.points {
            s.push_str(&format!("{}\t{}\n", num(*x), num(*y)));
        }
        fs::write(dir.join("plotdata").join(format!("{}.tsv", p.name)), s)?;
    }
    Ok(())
}

/// Shortest round-trip form, in exponent notation outside `[1e-4, 1e6)`.
/// Plain decimal in [1e-4, 1e6), exponent notation elsewhere.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e6).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(exp: &str) -> RunConfig {
        RunConfig {
            experiment: Some(exp.into()),
            output_dir: Some("x".into()),
            ..RunConfig::default()
        }
    }

    #[test]
    fn validation_collects_every_problem() {
        let c = RunConfig {
            sigma: Some(1.2),
            k: Some(2),
            n: Some(2),
            levels: Some(9),
            ..cfg("bogus")
        };
        let msgs: Vec<String> = validate(&c).into_iter().map(|d| d.message).collect();
        assert!(msgs.iter().any(|m| m == "sigma out of (0,1)"), "{msgs:?}");
        assert!(msgs.iter().any(|m| m == "k must be ≤ n−1"));
        assert!(msgs.iter().any(|m| m.contains("unknown experiment")));
        assert!(msgs.iter().any(|m| m.contains("levels")));
    }

    #[test]
    fn empty_output_dir_gets_the_default() {
        let c = RunConfig {
            output_dir: Some(String::new()),
            ..cfg("constants")
        };
        let (r, d) = resolve(&c);
        assert_eq!(r.unwrap().output_dir, DEFAULT_OUT);
        assert!(d.iter().any(|d| d.severity == Severity::Note));
    }

    #[test]
    fn flags_override_file_keys() {
        let file: RunConfig = serde_json::from_str(r#"{"experiment":"solve","n":3,"seed":4}"#).unwrap();
        let flags = RunConfig {
            n: Some(2),
            ..RunConfig::default()
        };
        let m = file.overridden_by(&flags);
        assert_eq!((m.n, m.seed, m.experiment.as_deref()), (Some(2), Some(4), Some("solve")));
        assert!(serde_json::from_str::<RunConfig>(r#"{"nn":1}"#).is_err());
    }

    #[test]
    fn constants_run_writes_reports() {
        let dir = tempfile::tempdir().unwrap();
        let c = RunConfig {
            output_dir: Some(dir.path().to_string_lossy().into()),
            ..cfg("constants")
        };
        let res = run(&c).unwrap();
        assert_eq!(res.exit_code, 0, "{:?}", res.failing());
        let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert!(csv.lines().next().unwrap().starts_with("experiment,check"));
        let js: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(js["all_pass"], true);
        assert!(js["checks"].as_array().unwrap().iter().all(|c| c["anchor"].is_string()));
        assert!(dir.path().join("plotdata/normalizer.tsv").exists());
        let bad = RunConfig {
            sigma: Some(1.5),
            ..c
        };
        assert_eq!(run(&bad).unwrap().exit_code, 2);
    }
}
