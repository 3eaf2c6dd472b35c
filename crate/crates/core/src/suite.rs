//! The experiments behind the command line: each one runs a family of
//! checks at a chosen number of refinement levels and returns pass/fail
//! records plus two-column plot data.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::capacity::{
    cap_fourier, dyadic_cover, covering_upper_bound, default_coarse_mesh, equivalence_check, loglog_slope, mu_extension,
    FourierConfig, MeshSpec,
};
use crate::conformal::{constancy_certificate, kelvin, moving_sphere_sweep, KelvinMap};
use crate::constants::{extension_normalizer, gamma, gamma_ratio_condition, poisson_unit_integral, FracParams};
use crate::error::{Error, Result};
use crate::extension::{energy_identity_study, extend_on, neumann_trace, EnergyLevel};
use crate::fraclap::{bubble, bubble_residual, cylindrical_solution, frac_laplacian_point, QuadConfig};
use crate::lattice::{graded_heights, grading_exponent, Component, Grid, GridFn, HalfGridFn, SingularSet};
use crate::probes::{
    blowup_exponent, poincare_family, poincare_ratio, symmetry_ratio, ProbeReport, DEFAULT_EPS,
};
use crate::solver::{
    assemble, discrete_energy, harnack_quotient, max_principle_margin, pcg, solve_bvp, solve_semilinear, Domain,
    ExcludedRule, FlatData, MixedBVP,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Constants,
    FraclapCheck,
    ExtensionCheck,
    Solve,
    Capacity,
    Equivalence,
    Movesphere,
    Blowup,
    Symmetry,
    Poincare,
    FullSuite,
}

impl Experiment {
    pub const ALL: [Experiment; 11] = [
        Experiment::Constants,
        Experiment::FraclapCheck,
        Experiment::ExtensionCheck,
        Experiment::Solve,
        Experiment::Capacity,
        Experiment::Equivalence,
        Experiment::Movesphere,
        Experiment::Blowup,
        Experiment::Symmetry,
        Experiment::Poincare,
        Experiment::FullSuite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Constants => "constants",
            Experiment::FraclapCheck => "fraclap-check",
            Experiment::ExtensionCheck => "extension-check",
            Experiment::Solve => "solve",
            Experiment::Capacity => "capacity",
            Experiment::Equivalence => "equivalence",
            Experiment::Movesphere => "movesphere",
            Experiment::Blowup => "blowup",
            Experiment::Symmetry => "symmetry",
            Experiment::Poincare => "poincare",
            Experiment::FullSuite => "full-suite",
        }
    }

    /// `(n, sigma, k)` used when the configuration leaves them open.
    pub fn defaults(self) -> (usize, f64, Option<usize>) {
        match self {
            Experiment::ExtensionCheck => (2, 0.5, None),
            Experiment::Blowup => (3, 0.5, Some(1)),
            Experiment::Symmetry => (3, 0.5, Some(1)),
            _ => (2, 0.5, None),
        }
    }

    pub fn default_set(self, n: usize) -> Option<String> {
        let zeros = vec!["0"; n].join(",");
        match self {
            Experiment::Capacity | Experiment::Solve => Some(format!("point({zeros})")),
            Experiment::Equivalence => Some(format!("ball({zeros};0.25)")),
            _ => None,
        }
    }

    /// Largest dimension the experiment accepts at desk scale.
    pub fn max_n(self) -> usize {
        match self {
            Experiment::ExtensionCheck | Experiment::Equivalence | Experiment::Capacity => 2,
            Experiment::Constants | Experiment::Blowup | Experiment::Symmetry => 8,
            _ => 3,
        }
    }

    pub fn min_n(self) -> usize {
        match self {
            Experiment::Constants | Experiment::ExtensionCheck | Experiment::Poincare => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .iter()
            .copied()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown experiment '{s}'")))
    }
}

/// One pass/fail record with the statement it exercises.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub experiment: String,
    pub anchor: String,
    #[serde(flatten)]
    pub report: ProbeReport,
}

/// Two-column plot data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Plot {
    pub name: String,
    pub x: String,
    pub y: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub plots: Vec<Plot>,
}

/// Resolved inputs of an experiment.
#[derive(Debug, Clone)]
pub struct Context {
    pub p: FracParams,
    pub set: Option<SingularSet>,
    pub levels: usize,
    pub seed: u64,
}

struct Recorder<'a> {
    exp: &'a str,
    out: Outcome,
}

impl<'a> Recorder<'a> {
    fn new(exp: &'a str) -> Self {
        Self {
            exp,
            out: Outcome::default(),
        }
    }

    fn push(&mut self, anchor: &str, report: ProbeReport) {
        self.out.checks.push(Check {
            experiment: self.exp.into(),
            anchor: anchor.into(),
            report,
        });
    }

    fn flag(&mut self, anchor: &str, name: &str, inputs: String, ok: bool) {
        let v = if ok { 1.0 } else { 0.0 };
        self.push(anchor, ProbeReport::two_sided(name, inputs, v, 1.0, 0.0));
    }

    fn plot(&mut self, name: &str, x: &str, y: &str, points: Vec<(f64, f64)>) {
        self.out.plots.push(Plot {
            name: name.into(),
            x: x.into(),
            y: y.into(),
            points,
        });
    }

    /// Records a failed check for an experiment step that raised an error.
    fn error(&mut self, name: &str, e: &Error) {
        self.push(
            "execution",
            ProbeReport {
                name: format!("{name}:error"),
                inputs: e.to_string(),
                measured: f64::NAN,
                predicted: f64::NAN,
                tolerance: 0.0,
                one_sided: false,
                pass: false,
            },
        );
    }

    fn attempt<F: FnOnce(&mut Self) -> Result<()>>(&mut self, name: &str, f: F) {
        if let Err(e) = f(self) {
            self.error(name, &e);
        }
    }
}

pub fn run_experiment(exp: Experiment, ctx: &Context) -> Outcome {
    let mut rec = Recorder::new(exp.name());
    match exp {
        Experiment::Constants => rec.attempt("constants", |r| constants(r, ctx)),
        Experiment::FraclapCheck => rec.attempt("fraclap", |r| fraclap_check(r, ctx)),
        Experiment::ExtensionCheck => rec.attempt("extension", |r| extension_check(r, ctx)),
        Experiment::Solve => rec.attempt("solve", |r| solve(r, ctx)),
        Experiment::Capacity => rec.attempt("capacity", |r| capacity(r, ctx)),
        Experiment::Equivalence => rec.attempt("equivalence", |r| equivalence(r, ctx)),
        Experiment::Movesphere => rec.attempt("movesphere", |r| movesphere(r, ctx)),
        Experiment::Blowup => rec.attempt("blowup", |r| blowup(r, ctx)),
        Experiment::Symmetry => rec.attempt("symmetry", |r| symmetry(r, ctx)),
        Experiment::Poincare => rec.attempt("poincare", |r| poincare(r, ctx)),
        Experiment::FullSuite => {
            let mut all = Outcome::default();
            for e in Experiment::ALL.iter().copied().filter(|e| *e != Experiment::FullSuite) {
                let (n, sigma, k) = e.defaults();
                let mut p = FracParams::linear(n, sigma).expect("default parameters are valid");
                p.k = k;
                let set = e
                    .default_set(n)
                    .map(|s| SingularSet::parse(&s, n).expect("default set parses"));
                let sub = Context {
                    p,
                    set,
                    levels: ctx.levels,
                    seed: ctx.seed,
                };
                let o = run_experiment(e, &sub);
                all.checks.extend(o.checks);
                all.plots.extend(o.plots.into_iter().map(|mut pl| {
                    pl.name = format!("{}-{}", e.name(), pl.name);
                    pl
                }));
            }
            return all;
        }
    }
    rec.out
}

const ANCHOR_NORMALIZER: &str = "extension normalizer N(sigma) = 2^{1-2sigma} Gamma(1-sigma)/Gamma(sigma)";
const ANCHOR_LIOUVILLE: &str = "bubble solves the critical equation (Liouville classification)";
const ANCHOR_ENERGY: &str = "weighted Dirichlet energy of the extension = N(sigma) x Fourier energy";
const ANCHOR_TRACE: &str = "(-Delta)^sigma u = -lim t^{1-2sigma} d_t U up to N(sigma)";
const ANCHOR_EXT_EQ: &str = "div(t^{1-2sigma} grad U) = 0";
const ANCHOR_EQUIV: &str = "mu_sigma = 2 N(sigma) Cap_sigma";
const ANCHOR_HOMOG: &str = "capacity scales as r^{n-2sigma}; cover bound sum C r_i^{n-2sigma}";
const ANCHOR_ZERO: &str = "finite H^{n-2sigma} measure implies zero capacity";
const ANCHOR_MAX: &str = "zero-capacity sets are removable for super-solutions";
const ANCHOR_HARNACK: &str = "Harnack inequality for the extension";
const ANCHOR_SPHERE: &str = "moving spheres: w_{x,lambda} <= w";
const ANCHOR_CALCULUS: &str = "w_{x,lambda} <= w for all x, lambda forces w constant";
const ANCHOR_BLOWUP: &str = "u(x) <= C dist(x, Lambda)^{-(n-2sigma)/2}";
const ANCHOR_SYM: &str = "near-symmetry bound (8r/eps+1)^{(n-2sigma)/2}";
const ANCHOR_POINCARE: &str = "trace Poincare inequality with r^{2sigma+1} scaling";
const ANCHOR_GAMMA: &str = "dimension restriction Gamma(n/4-k/2+sigma/2)/Gamma(n/4-k/2-sigma/2) > 0";

fn constants(r: &mut Recorder, ctx: &Context) -> Result<()> {
    let p = &ctx.p;
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let x = 0.05 + 0.1 * i as f64;
        let g = gamma(x)?;
        worst = worst.max((gamma(x + 1.0)? - x * g).abs() / (x * g).abs());
    }
    r.push(ANCHOR_NORMALIZER, ProbeReport::upper("gamma-recurrence", "100 points in [0.05, 9.95]".into(), worst, 0.0, 1e-10));
    let half = extension_normalizer(0.5)?;
    r.push(ANCHOR_NORMALIZER, ProbeReport::two_sided("N(1/2)", "sigma=0.5".into(), half, 1.0, 1e-12));
    let ns = extension_normalizer(p.sigma)?;
    let refl = ns * extension_normalizer(1.0 - p.sigma)?;
    r.push(
        ANCHOR_NORMALIZER,
        ProbeReport::two_sided("N(sigma)N(1-sigma)", format!("sigma={}", p.sigma), refl, 1.0, 1e-12),
    );
    let q = poisson_unit_integral(p.n, p.sigma)?;
    r.push(
        ANCHOR_TRACE,
        ProbeReport::two_sided("poisson-unit-mass", format!("n={} sigma={}", p.n, p.sigma), q, 1.0, 1e-4),
    );
    let mut bad = 0;
    let mut cases = 0;
    for n in 2..=8usize {
        for k in 0..n {
            for s in 1..=9 {
                let sigma = 0.1 * s as f64;
                if (k as f64) < 0.5 * (n as f64 - 2.0 * sigma) {
                    cases += 1;
                    if !gamma_ratio_condition(n, k, sigma)?.positive {
                        bad += 1;
                    }
                }
            }
        }
    }
    r.push(
        ANCHOR_GAMMA,
        ProbeReport::two_sided("gamma-ratio-sweep", format!("{cases} cases with k < (n-2sigma)/2"), bad as f64, 0.0, 0.0),
    );
    let counter = gamma_ratio_condition(4, 2, 0.9)?;
    r.flag(ANCHOR_GAMMA, "gamma-ratio-counter-case", format!("(4,2,0.9) value {}", counter.value), !counter.positive);
    let pts = (1..=19)
        .map(|i| {
            let s = 0.05 * i as f64;
            (s, extension_normalizer(s).unwrap_or(f64::NAN))
        })
        .collect();
    r.plot("normalizer", "sigma", "N(sigma)", pts);
    Ok(())
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, count: usize, radius: f64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..n).map(|_| rng.gen_range(-radius..radius)).collect())
        .collect()
}

fn fraclap_check(r: &mut Recorder, ctx: &Context) -> Result<()> {
    let p = FracParams::linear(ctx.p.n, ctx.p.sigma)?;
    let mut q = QuadConfig {
        outer_radius: 256.0,
        tail_exponent_assumed: Some(f64::INFINITY),
        ..QuadConfig::default()
    };
    if p.n == 3 {
        q.angular = 48;
    }
    let v = frac_laplacian_point(&|x: &[f64]| x[0].cos(), &vec![0.0; p.n], &p, &q)?;
    r.push(
        ANCHOR_TRACE,
        ProbeReport::two_sided("cosine-symbol", format!("n={} sigma={}", p.n, p.sigma), v, 1.0, 1e-2),
    );
    if p.n >= 2 {
        let p = FracParams::new(p.n, p.sigma)?;
        let q = if p.n == 3 {
            QuadConfig {
                angular: 48,
                ..QuadConfig::default()
            }
        } else {
            QuadConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        let mut worst: f64 = 0.0;
        let mut pts = Vec::new();
        for y in random_points(&mut rng, p.n, 20, 2.0) {
            let res = bubble_residual(&y, &p, &q)?;
            worst = worst.max(res);
            pts.push((y.iter().map(|v| v * v).sum::<f64>().sqrt(), res));
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        r.push(
            ANCHOR_LIOUVILLE,
            ProbeReport::upper("bubble-residual", format!("20 seeded points, n={} sigma={}", p.n, p.sigma), worst, 0.02, 0.0),
        );
        r.plot("bubble-residual", "|y|", "relative residual", pts);
    }
    Ok(())
}

/// Sequence of (spacing, layers) for the energy identity and its box.
pub fn energy_levels(n: usize) -> (f64, Vec<EnergyLevel>) {
    let (half, lv): (f64, [(f64, usize); 3]) = if n == 1 {
        (64.0, [(0.2, 32), (0.1, 64), (0.05, 128)])
    } else {
        (6.0, [(0.6, 16), (0.3, 32), (0.15, 64)])
    };
    (
        half,
        lv.iter()
            .map(|&(spacing, layers)| EnergyLevel { spacing, layers })
            .collect(),
    )
}

/// Radial test functions of the trace comparison.
pub fn trace_test_functions() -> Vec<(&'static str, Box<dyn Fn(&[f64]) -> f64 + Send + Sync>)> {
    fn rad(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
    fn smooth_step(s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        if s >= 1.0 {
            return 1.0;
        }
        let a = (-1.0 / s).exp();
        let b = (-1.0 / (1.0 - s)).exp();
        a / (a + b)
    }
    vec![
        ("gaussian", Box::new(|x: &[f64]| (-0.5 * rad(x).powi(2)).exp())),
        (
            "cut-bubble",
            Box::new(|x: &[f64]| (1.0 + rad(x).powi(2)).powf(-0.5) * (1.0 - smooth_step((rad(x) - 2.0) / 2.0))),
        ),
        (
            "cosine-bump",
            Box::new(|x: &[f64]| {
                let q = rad(x);
                if q < 3.0 {
                    0.5 * (1.0 + (PI * q / 3.0).cos())
                } else {
                    0.0
                }
            }),
        ),
    ]
}

/// Largest `|trace - N fraclap| / max |N fraclap|` over the nodes of
/// `[-1, 1]^n` with spacing 1.
pub fn trace_discrepancy(f: &(dyn Fn(&[f64]) -> f64 + Send + Sync), p: &FracParams, h: f64) -> Result<f64> {
    let nn = extension_normalizer(p.sigma)?;
    let grid = Grid::cube(p.n, 5.0, h)?;
    let base = Grid::cube(p.n, 1.0, 1.0)?;
    let t = graded_heights(0.01, 32, p.sigma, grading_exponent(p.sigma))?;
    let g = GridFn::from_fn(grid, f);
    let half = extend_on(&g, p, &base, &t[..3])?;
    let tr = neumann_trace(&half, p.sigma)?;
    let q = QuadConfig {
        tail_exponent_assumed: Some(f64::INFINITY),
        ..QuadConfig::default()
    };
    let (mut worst, mut scale) = (0.0f64, 0.0f64);
    for i in 0..base.len() {
        let x = base.point(i);
        let fl = nn * frac_laplacian_point(&|y: &[f64]| f(y), &x, p, &q)?;
        worst = worst.max((fl - tr.values[i]).abs());
        scale = scale.max(fl.abs());
    }
    Ok(worst / scale)
}

fn extension_check(r: &mut Recorder, ctx: &Context) -> Result<()> {
    let p = FracParams::linear(ctx.p.n, ctx.p.sigma)?;
    let (half, all) = energy_levels(p.n);
    let levels = &all[..ctx.levels.clamp(1, 3)];
    let g = |x: &[f64]| (-0.5 * x.iter().map(|v| v * v).sum::<f64>()).exp();
    let study = energy_identity_study(&g, &p, half, levels, half, 4)?;
    let last = study.checks.last().expect("at least one level");
    let inputs = format!("gaussian n={} sigma={} levels={}", p.n, p.sigma, levels.len());
    r.push(ANCHOR_ENERGY, ProbeReport::upper("energy-identity", inputs.clone(), last.relerr, 0.05, 0.0));
    if levels.len() > 1 {
        r.flag(ANCHOR_ENERGY, "energy-identity-monotone", inputs, study.monotone);
    }
    r.plot(
        "energy-refinement",
        "spacing",
        "relative error",
        levels.iter().zip(&study.checks).map(|(l, c)| (l.spacing, c.relerr)).collect(),
    );
    let h = if ctx.levels >= 2 { 0.05 } else { 0.1 };
    for (name, f) in trace_test_functions() {
        let d = trace_discrepancy(f.as_ref(), &p, h)?;
        r.push(
            ANCHOR_TRACE,
            ProbeReport::upper(&format!("trace-{name}"), format!("n={} sigma={} h={h}", p.n, p.sigma), d, 0.05, 0.0),
        );
    }
    Ok(())
}

fn bubble_extension_field(x: &[f64], t: f64) -> f64 {
    // exact extension of (1 + |x|^2)^{-1/2} at sigma = 1/2, n = 2
    ((1.0 + t).powi(2) + x.iter().map(|v| v * v).sum::<f64>()).powf(-0.5)
}

fn solve(r: &mut Recorder, ctx: &Context) -> Result<()> {
    let p = ctx.p;
    let sigma = p.sigma;
    let h = if p.n == 3 { 0.25 } else { 0.125 };
    let layers = 16;
    let base = Grid::cube(p.n, 1.0, h)?;
    let t = graded_heights(1.0, layers, sigma, grading_exponent(sigma))?;
    let inputs = format!("n={} sigma={sigma} h={h} M={layers}", p.n);
    // constants
    let bvp = MixedBVP::neumann(base.clone(), t.clone(), sigma, Box::new(|_, _| 2.5), Box::new(|_| 0.0));
    let (u, _) = solve_bvp(&bvp, 1e-12)?;
    let err = u.values.iter().map(|v| (v - 2.5).abs()).fold(0.0, f64::max);
    r.push(ANCHOR_EXT_EQ, ProbeReport::upper("constant-reproduced", inputs.clone(), err, 0.0, 1e-10));
    // t^{2 sigma} with its flux -2 sigma
    let s2 = 2.0 * sigma;
    let bvp = MixedBVP::neumann(
        base.clone(),
        t.clone(),
        sigma,
        Box::new(move |_, t| t.powf(s2)),
        Box::new(move |_| -s2),
    );
    let sys = assemble(&bvp)?;
    let (x, stats) = pcg(&sys, 1e-12, None)?;
    let u = sys.field(&x)?;
    let mut err: f64 = 0.0;
    for (node, v) in u.values.iter().enumerate() {
        let tt = t[node / base.len()];
        err = err.max((v - tt.powf(s2)).abs());
    }
    r.push(ANCHOR_EXT_EQ, ProbeReport::upper("t-power-reproduced", inputs.clone(), err, 0.0, 1e-2));
    let flux = sys.flux_residual(&u);
    r.push(
        ANCHOR_EXT_EQ,
        ProbeReport::upper("flux-conservation", format!("{inputs} pcg residual {:.1e}", stats.residual), flux, 0.0, 1e-9),
    );
    // Dirichlet principle: zero-flux solution minimizes the energy among
    // fields with the same prescribed values
    let data = |x: &[f64], t: f64| 1.0 + x[0] * x[0] - 0.5 * t + 0.3 * x[x.len() - 1];
    let bvp = MixedBVP::neumann(base.clone(), t.clone(), sigma, Box::new(data), Box::new(|_| 0.0));
    let sys = assemble(&bvp)?;
    let (x, _) = pcg(&sys, 1e-12, None)?;
    let e0 = discrete_energy(&sys.field(&x)?, sigma);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ 0x5eed);
    let mut least = f64::INFINITY;
    for _ in 0..5 {
        let y: Vec<f64> = x.iter().map(|v| v + 0.05 * rng.gen_range(-1.0..1.0)).collect();
        least = least.min(discrete_energy(&sys.field(&y)?, sigma) - e0);
    }
    r.push(ANCHOR_EXT_EQ, ProbeReport::lower("dirichlet-principle", inputs, least, 0.0, 0.0));

    // Harnack on the exact bubble extension problem, n = 2, sigma = 1/2
    let hl = [0.2, 0.1, 0.05];
    let levels = ctx.levels.clamp(1, 3);
    let mut qs = Vec::new();
    for &hh in &hl[..levels.max(2)] {
        let b = Grid::cube(2, 1.0, hh)?;
        let m = (1.6 / hh).round() as usize;
        let tt = graded_heights(1.0, m, 0.5, grading_exponent(0.5))?;
        let bvp = MixedBVP {
            domain: Domain::HalfBall { radius: 1.0 },
            ..MixedBVP::neumann(
                b,
                tt,
                0.5,
                Box::new(bubble_extension_field),
                Box::new(|x| bubble_extension_field(x, 0.0).powi(3)),
            )
        };
        let (u, _) = solve_bvp(&bvp, 1e-10)?;
        qs.push((hh, harnack_quotient(&u, 1.0)?));
    }
    let spread = qs
        .windows(2)
        .map(|w| (w[1].1 - w[0].1).abs() / w[0].1)
        .fold(0.0, f64::max);
    r.push(
        ANCHOR_HARNACK,
        ProbeReport::upper("harnack-stability", format!("bubble extension, h in {:?}", &hl[..qs.len()]), spread, 0.05, 0.0),
    );
    r.plot("harnack", "spacing", "sup/inf", qs);

    // maximum principle with the set removed from the source
    if let Some(set) = &ctx.set {
        let n = set.n;
        let hh = if n == 3 { 0.125 } else { 0.0625 };
        let m = if n == 3 { 16 } else { 32 };
        let b = Grid::cube(n, 1.0, hh)?;
        let tt = graded_heights(1.0, m, sigma, grading_exponent(sigma))?;
        let bvp = MixedBVP {
            base: b,
            t: tt,
            sigma,
            dirichlet: Box::new(|x, t| 1.0 + 0.5 * x[0] + 0.25 * t),
            flat: FlatData::Neumann(Box::new(|x| 1.0 / (1.0 + x.iter().map(|v| v * v).sum::<f64>()))),
            excluded: set.clone(),
            excluded_rule: ExcludedRule::OmitSource,
            domain: Domain::HalfBall { radius: 1.0 },
        };
        let (u, _) = solve_bvp(&bvp, 1e-10)?;
        let margin = max_principle_margin(&u, set, 0.25, 1.0)?;
        let sup = u.sup();
        r.push(
            ANCHOR_MAX,
            ProbeReport::lower(
                "max-principle-margin",
                format!("set {} sigma={sigma} h={hh}", set.descriptor()),
                margin,
                0.0,
                1e-3 * sup,
            ),
        );
    }
    Ok(())
}

/// Mesh of the capacity scaling study. The smallest radius must span a
/// few cells, so there is no coarser variant.
pub fn scaling_mesh() -> MeshSpec {
    MeshSpec {
        half_width: 3.0,
        spacing: 1.0 / 24.0,
        layers: 48,
    }
}

/// Refinements of the zero-capacity study.
pub fn zero_capacity_meshes() -> [MeshSpec; 3] {
    [(0.25, 8), (0.125, 16), (0.0625, 32)].map(|(spacing, layers)| MeshSpec {
        half_width: 1.0,
        spacing,
        layers,
    })
}

fn is_lower_dimensional(set: &SingularSet) -> bool {
    set.components.iter().all(|c| !matches!(c, Component::Ball { .. }))
}

fn capacity(r: &mut Recorder, ctx: &Context) -> Result<()> {
    let p = FracParams::new(ctx.p.n, ctx.p.sigma)?;
    let mesh = scaling_mesh();
    let radii = [0.1, 0.2, 0.4];
    let grid = Grid::cube(p.n, mesh.half_width, mesh.spacing)?;
    let (mut caps, mut mus) = (Vec::new(), Vec::new());
    for &rad in &radii {
        let ball = SingularSet::ball(vec![0.0; p.n], rad);
        caps.push(cap_fourier(&ball, &grid, &p, &FourierConfig::default())?.value);
        mus.push(mu_extension(&ball, &mesh, &p)?.value);
    }
    let want = p.decay();
    let inputs = format!("balls r in {radii:?}, {}", mesh.descriptor());
    let sf = loglog_slope(&radii, &caps)?;
    let se = loglog_slope(&radii, &mus)?;
    r.push(ANCHOR_HOMOG, ProbeReport::two_sided("scaling-fourier", inputs.clone(), sf, want, 0.05 * want));
    r.push(ANCHOR_HOMOG, ProbeReport::two_sided("scaling-extension", inputs.clone(), se, want, 0.05 * want));
    r.flag(
        ANCHOR_HOMOG,
        "monotone-in-set",
        inputs,
        caps.windows(2).all(|w| w[0] <= w[1] + 1e-8) && mus.windows(2).all(|w| w[0] <= w[1] + 1e-8),
    );
    r.plot("cap-vs-radius-fourier", "radius", "cap", radii.iter().copied().zip(caps.iter().copied()).collect());
    r.plot("cap-vs-radius-extension", "radius", "mu", radii.iter().copied().zip(mus.iter().copied()).collect());
    // tent covers of the largest ball bound its two-sided energy
    let big = SingularSet::ball(vec![0.0; p.n], 0.4);
    let cover = dyadic_cover(&big, 0.5)?;
    let bound = covering_upper_bound(&cover, &p)?;
    let nn = extension_normalizer(p.sigma)?;
    r.push(
        ANCHOR_HOMOG,
        ProbeReport::upper("covering-bound", format!("{} balls", cover.len()), 2.0 * nn * caps[2], bound, 0.0),
    );
    if let Some(set) = ctx.set.as_ref().filter(|s| is_lower_dimensional(s)) {
        let mut pts = Vec::new();
        for m in zero_capacity_meshes() {
            pts.push((m.spacing, mu_extension(set, &m, &p)?.value));
        }
        let hs: Vec<f64> = pts.iter().map(|q| q.0).collect();
        let vs: Vec<f64> = pts.iter().map(|q| q.1).collect();
        let inputs = format!("set {} n={} sigma={}", set.descriptor(), p.n, p.sigma);
        r.flag(ANCHOR_ZERO, "zero-capacity-decreasing", inputs.clone(), vs.windows(2).all(|w| w[1] < w[0]));
        r.push(ANCHOR_ZERO, ProbeReport::lower("zero-capacity-decay-exponent", inputs, loglog_slope(&hs, &vs)?, 0.0, 0.0));
        r.plot("zero-capacity", "spacing", "mu", pts);
    }
    Ok(())
}

fn equivalence(r: &mut Recorder, ctx: &Context) -> Result<()> {
    let p = FracParams::new(ctx.p.n, ctx.p.sigma)?;
    let set = ctx
        .set
        .clone()
        .ok_or_else(|| Error::InvalidParams("equivalence needs a set".into()))?;
    let coarse = match set.components.as_slice() {
        [Component::Ball { radius, .. }] => default_coarse_mesh(*radius),
        _ => MeshSpec {
            half_width: 1.0,
            spacing: 0.125,
            layers: 8,
        },
    };
    let rep = equivalence_check(&set, &p, &coarse, ctx.levels.clamp(1, 3))?;
    let inputs = format!("set {} levels {}", set.descriptor(), rep.levels.len());
    r.push(ANCHOR_EQUIV, ProbeReport::two_sided("equivalence-ratio", inputs.clone(), rep.ratio, 1.0, 0.15));
    if rep.levels.len() >= 3 {
        r.flag(ANCHOR_EQUIV, "equivalence-trend", inputs.clone(), rep.trend_to_one);
    }
    if rep.levels.len() >= 2 {
        r.flag(ANCHOR_EQUIV, "equivalence-converged", inputs, !rep.unconverged);
    }
    r.plot(
        "equivalence",
        "spacing",
        "ratio",
        rep.levels.iter().map(|l| (l.mesh.spacing, l.ratio)).collect(),
    );
    Ok(())
}

fn movesphere(r: &mut Recorder, ctx: &Context) -> Result<()> {
    let p = FracParams::new(ctx.p.n, ctx.p.sigma)?;
    let e = p.decay();
    let half = if p.n == 3 { 2.0 } else { 4.0 };
    let hs = [0.2, 0.1, 0.05];
    let levels = if p.n == 3 { ctx.levels.clamp(1, 2) } else { ctx.levels.clamp(1, 3) };
    let origin = vec![0.0; p.n];
    let mut pts = Vec::new();
    let mut coarse = None;
    for &h in &hs[..levels] {
        let w = GridFn::from_fn(Grid::cube(p.n, half, h)?, |y| bubble(y, &p));
        let lambdas: Vec<f64> = (1..)
            .map(|i| 0.5 * h * i as f64)
            .take_while(|&l| l <= 0.5 * half)
            .collect();
        let res = moving_sphere_sweep(&w, &origin, &lambdas, &SingularSet::empty(p.n), e)?;
        r.push(
            ANCHOR_SPHERE,
            ProbeReport::two_sided("lambda-bar", format!("bubble n={} sigma={} h={h}", p.n, p.sigma), res.lambda_bar, 1.0, 2.0 * h),
        );
        pts.push((h, res.lambda_bar));
        coarse.get_or_insert(w);
    }
    r.plot("lambda-bar", "spacing", "lambda_bar", pts);
    let w = coarse.expect("one level");
    let cert = constancy_certificate(&w, std::slice::from_ref(&origin), &[0.5, 1.5, 2.0], e)?;
    let witness_ok = cert.witness.as_ref().is_some_and(|x| x.lambda > 1.0);
    r.flag(ANCHOR_CALCULUS, "bubble-refuted", format!("{:?}", cert.witness.as_ref().map(|x| x.lambda)), !cert.constant && witness_ok);
    let inside: Vec<f64> = (1..=10).map(|i| 0.1 * i as f64).collect();
    let cert = constancy_certificate(&w, std::slice::from_ref(&origin), &inside, e)?;
    r.flag(ANCHOR_CALCULUS, "bubble-unrefuted-below-one", "lambda <= 1 at 0".into(), cert.constant);
    let c = GridFn::from_fn(w.grid.clone(), |_| 2.0);
    let centers = vec![origin.clone(), vec![0.5; p.n]];
    let cert = constancy_certificate(&c, &centers, &[0.5, 1.0, 1.5], e)?;
    r.flag(ANCHOR_CALCULUS, "constant-unrefuted", format!("{} pairs", cert.pairs_checked), cert.constant);
    // inversion is an involution
    let u = |y: &[f64]| 1.0 + y.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v * v).sum::<f64>();
    let map = KelvinMap::new(vec![0.1; p.n], 0.8, e)?;
    let once = |y: &[f64]| kelvin(&u, &map, y).unwrap_or(f64::NAN);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut worst: f64 = 0.0;
    for mut y in random_points(&mut rng, p.n + 1, 1000, 3.0) {
        y[p.n] = y[p.n].abs() + 0.01;
        let twice = kelvin(&once, &map, &y)?;
        worst = worst.max((twice - u(&y)).abs() / u(&y));
    }
    r.push(ANCHOR_SPHERE, ProbeReport::upper("kelvin-involution", "1000 seeded points".into(), worst, 0.0, 1e-12));
    Ok(())
}

/// The semilinear problem with the exact bubble extension as boundary data
/// and a point removed from the source, on `[-1/2, 1/2]^2 x [0, 1/2]`.
pub fn semilinear_point_problem() -> Result<MixedBVP> {
    let base = Grid::cube(2, 0.5, 0.05)?;
    let t = graded_heights(0.5, 16, 0.5, grading_exponent(0.5))?;
    Ok(MixedBVP {
        base,
        t,
        sigma: 0.5,
        dirichlet: Box::new(bubble_extension_field),
        flat: FlatData::Semilinear,
        excluded: SingularSet::point(vec![0.0, 0.0]),
        excluded_rule: ExcludedRule::OmitSource,
        domain: Domain::HalfBox,
    })
}

fn trace_sampler(u: &HalfGridFn) -> impl Fn(&[f64]) -> f64 + '_ {
    let tr = u.trace();
    move |x: &[f64]| tr.interpolate(x).unwrap_or(f64::NAN)
}

fn blowup(r: &mut Recorder, ctx: &Context) -> Result<()> {
    let k = ctx.p.k.unwrap_or(1);
    let p = FracParams::new(ctx.p.n, ctx.p.sigma)?.with_k(k)?;
    let set = SingularSet::strip(p.n, k, 2.0);
    let base = vec![0.0; p.n];
    let radii = [0.4, 0.2, 0.1, 0.05, 0.025];
    let u = |x: &[f64]| cylindrical_solution(x, &p, 1.0).unwrap_or(f64::NAN);
    let fit = blowup_exponent(&u, &set, &base, &radii, &p)?;
    let inputs = format!("n={} k={k} sigma={}", p.n, p.sigma);
    r.push(ANCHOR_BLOWUP, ProbeReport::two_sided("cylinder-slope", inputs.clone(), fit.slope, fit.rate, 1e-10));
    r.flag(ANCHOR_BLOWUP, "cylinder-bound-ok", inputs.clone(), fit.bound_ok);
    r.plot(
        "cylinder-slope-fit",
        "log r",
        "log u",
        fit.distances.iter().zip(&fit.values).map(|(d, v)| (d.ln(), v.ln())).collect(),
    );
    let sup = |x: &[f64]| set.dist(x).powf(-p.decay());
    let fit = blowup_exponent(&sup, &set, &base, &radii, &p)?;
    r.flag(ANCHOR_BLOWUP, "supercritical-rejected", format!("{inputs} slope {}", fit.slope), !fit.bound_ok);
    let bvp = semilinear_point_problem()?;
    let (u, rep) = solve_semilinear(&bvp, 1e-8)?;
    let p2 = FracParams::new(2, 0.5)?;
    let s = trace_sampler(&u);
    let fit = blowup_exponent(&s, &bvp.excluded, &[0.0, 0.0], &[0.2, 0.1, 0.05], &p2)?;
    r.flag(
        ANCHOR_BLOWUP,
        "semilinear-bound-ok",
        format!("n=2 sigma=0.5 point set, {} iterations, slope {}", rep.iterations, fit.slope),
        fit.bound_ok && rep.converged,
    );
    Ok(())
}

fn symmetry(r: &mut Recorder, ctx: &Context) -> Result<()> {
    let k = ctx.p.k.unwrap_or(1);
    let p = FracParams::new(ctx.p.n, ctx.p.sigma)?.with_k(k)?;
    let set = SingularSet::strip(p.n, k, 2.0);
    let z = vec![0.0; p.n];
    let u = |x: &[f64]| cylindrical_solution(x, &p, 1.0).unwrap_or(f64::NAN);
    let s = symmetry_ratio(&u, &set, &z, 0.01, DEFAULT_EPS, &p)?;
    let inputs = format!("n={} k={k} sigma={} eps={DEFAULT_EPS}", p.n, p.sigma);
    r.push(ANCHOR_SYM, ProbeReport::two_sided("cylinder-ratio", inputs.clone(), s.ratio, 1.0, 1e-6));
    let tilt = |x: &[f64]| u(x) * (1.0 + 0.1 * x[k]);
    let rs = [0.004, 0.008, 0.016, 0.032];
    let mut pts = Vec::new();
    let mut ok = true;
    for &rr in &rs {
        let s = symmetry_ratio(&tilt, &set, &z, rr, DEFAULT_EPS, &p)?;
        ok &= s.pass;
        pts.push((rr, s.ratio - 1.0));
    }
    let slope = loglog_slope(&rs, &pts.iter().map(|q| q.1).collect::<Vec<_>>())?;
    r.push(ANCHOR_SYM, ProbeReport::two_sided("tilted-excess-rate", inputs.clone(), slope, 1.0, 0.1));
    r.flag(ANCHOR_SYM, "tilted-within-bound", inputs, ok);
    r.plot("tilted-excess", "r", "ratio - 1", pts);
    Ok(())
}

fn poincare(r: &mut Recorder, ctx: &Context) -> Result<()> {
    let n = ctx.p.n;
    let sigma = ctx.p.sigma;
    let h = [0.2, 0.1, 0.05][ctx.levels.clamp(1, 3) - 1];
    let mk = |half: f64, hh: f64, f: &dyn Fn(&[f64], f64) -> f64| -> Result<HalfGridFn> {
        let base = Grid::cube(n, half, hh)?;
        let m = (half / hh).round() as usize;
        let t = graded_heights(half, m, sigma, grading_exponent(sigma))?;
        HalfGridFn::from_fn(base, t, f)
    };
    let mut worst_dil: f64 = 0.0;
    let mut largest: f64 = 0.0;
    let mut pts = Vec::new();
    for (i, (_, g)) in poincare_family(n).into_iter().enumerate() {
        let a = poincare_ratio(&mk(1.0, h, &|x, t| g(x, t))?, 1.0, sigma)?;
        let b = poincare_ratio(
            &mk(2.0, 2.0 * h, &|x, t| {
                let y: Vec<f64> = x.iter().map(|v| v / 2.0).collect();
                g(&y, t / 2.0)
            })?,
            2.0,
            sigma,
        )?;
        worst_dil = worst_dil.max((a - b).abs() / a.abs().max(f64::MIN_POSITIVE));
        largest = largest.max(a);
        pts.push((i as f64, a));
    }
    let inputs = format!("10 functions n={n} sigma={sigma} h={h}");
    r.push(ANCHOR_POINCARE, ProbeReport::upper("dilation-invariance", inputs.clone(), worst_dil, 0.0, 0.01));
    r.push(
        ANCHOR_POINCARE,
        ProbeReport::upper("family-constant-finite", inputs, largest, f64::MAX, 0.0),
    );
    r.plot("poincare-family", "function", "ratio", pts);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        assert!("nope".parse::<Experiment>().is_err());
    }

    #[test]
    fn constants_experiment_passes() {
        let ctx = Context {
            p: FracParams::new(2, 0.5).unwrap(),
            set: None,
            levels: 1,
            seed: 1,
        };
        let out = run_experiment(Experiment::Constants, &ctx);
        assert!(out.checks.iter().all(|c| c.report.pass), "{:?}", out.checks);
        assert!(out.checks.iter().any(|c| c.report.name == "N(1/2)"));
    }
}
