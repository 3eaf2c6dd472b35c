//! Fractional capacity of a set on the boundary, by two independent routes:
//! the Fourier energy `int |xi|^{2 sigma} |f^|^2` over `f >= 1` on the set,
//! and the weighted Dirichlet energy of the capacitary potential of the
//! degenerate extension problem (two-sided weight, so twice the half-space
//! energy). Also tent-function covering bounds and a dyadic Hausdorff
//! premeasure.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use crate::constants::{extension_normalizer, FracParams};
use crate::error::{Error, Result};
use crate::lattice::{graded_heights, grading_exponent, weighted_energy, Grid, HalfGridFn, SingularSet};
use crate::quad::{gauss_legendre, sphere_area};
use crate::solver::{pcg, Domain, ExcludedRule, FlatData, MixedBVP, SolveStats};
use crate::spectral::SpectralForm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fourier,
    Extension,
    Covering,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Fourier => "fourier",
            Method::Extension => "extension",
            Method::Covering => "covering",
        })
    }
}

/// Lattice on which an estimate was computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeshSpec {
    /// Half-width `R` of the box `[-R, R]^n` (and height of the half-box).
    pub half_width: f64,
    pub spacing: f64,
    /// Graded t-cells (extension only).
    pub layers: usize,
}

impl MeshSpec {
    pub fn descriptor(&self) -> String {
        format!("R={} h={} M={}", self.half_width, self.spacing, self.layers)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityEstimate {
    pub value: f64,
    pub method: Method,
    pub mesh: Option<MeshSpec>,
    /// Number of lattice nodes representing the set.
    pub set_nodes: usize,
    pub iterations: usize,
}

/// Settings of the constrained minimization of the Fourier energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FourierConfig {
    /// Zero padding of the periodic box.
    pub pad: usize,
    /// Relative energy decrement at which the iteration stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FourierConfig {
    fn default() -> Self {
        Self {
            pad: 4,
            tol: 1e-8,
            max_iter: 20_000,
        }
    }
}

fn check_set(set: &SingularSet, grid: &Grid) -> Result<Vec<bool>> {
    if !set.is_empty() && set.n != grid.dim() {
        return Err(Error::InvalidParams("set and grid dimensions differ".into()));
    }
    let mask = set.node_mask(grid);
    if mask.iter().enumerate().any(|(i, &m)| m && grid.on_boundary(i)) {
        return Err(Error::InvalidParams(format!(
            "set {} reaches the boundary of the grid box",
            set.descriptor()
        )));
    }
    Ok(mask)
}

/// `min { E(f) : f >= 1 on the set nodes }`, `f` supported in the grid box.
///
/// Conjugate gradients on the free nodes; a set node reaching the bound is
/// fixed there and the iteration restarts (Fletcher-Reeves restart), a
/// fixed node whose gradient points inward is released.
pub fn cap_fourier(set: &SingularSet, grid: &Grid, p: &FracParams, cfg: &FourierConfig) -> Result<CapacityEstimate> {
    let mask = check_set(set, grid)?;
    let mesh = Some(MeshSpec {
        half_width: 0.5 * (grid.upper[0] - grid.lower[0]),
        spacing: grid.max_h(),
        layers: 0,
    });
    let set_nodes = mask.iter().filter(|&&m| m).count();
    if set_nodes == 0 {
        return Ok(CapacityEstimate {
            value: 0.0,
            method: Method::Fourier,
            mesh,
            set_nodes,
            iterations: 0,
        });
    }
    let form = SpectralForm::new(&grid.shape, &grid.h, p.sigma, cfg.pad)?;
    let len = grid.len();
    // boundary ring stays zero
    let ring: Vec<bool> = (0..len).map(|i| grid.on_boundary(i)).collect();
    let mut x: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let mut active = mask.clone();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
    let mut iterations = 0;
    let mut energy = dot(&x, &form.apply(&x));
    'outer: loop {
        let free = |i: usize| !ring[i] && !active[i];
        let ax = form.apply(&x);
        // residual = -gradient / 2 on free nodes
        let mut r: Vec<f64> = (0..len).map(|i| if free(i) { -ax[i] } else { 0.0 }).collect();
        let mut d = r.clone();
        let mut rr = dot(&r, &r);
        let r0 = rr.sqrt().max(f64::MIN_POSITIVE);
        loop {
            if iterations >= cfg.max_iter {
                return Err(Error::NoConvergence {
                    iterations,
                    residual: rr.sqrt() / r0,
                    history: vec![energy],
                });
            }
            if rr.sqrt() <= 1e-10 * r0 || rr == 0.0 {
                break;
            }
            let mut ad = form.apply(&d);
            for i in 0..len {
                if !free(i) {
                    ad[i] = 0.0;
                }
            }
            let dad = dot(&d, &ad);
            if !(dad > 0.0) {
                break;
            }
            let mut alpha = rr / dad;
            // largest step keeping free set nodes above 1
            let mut hit = None;
            for i in 0..len {
                if mask[i] && free(i) && d[i] < 0.0 {
                    let a = (1.0 - x[i]) / d[i];
                    if a < alpha {
                        alpha = a.max(0.0);
                        hit = Some(i);
                    }
                }
            }
            for i in 0..len {
                x[i] += alpha * d[i];
                r[i] -= alpha * ad[i];
            }
            iterations += 1;
            let e_new = dot(&x, &form.apply(&x));
            let dec = (energy - e_new) / energy.abs().max(f64::MIN_POSITIVE);
            energy = e_new;
            if let Some(i) = hit {
                x[i] = 1.0;
                active[i] = true;
                continue 'outer;
            }
            if dec.abs() < cfg.tol * 1e-2 {
                break;
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..len {
                d[i] = r[i] + beta * d[i];
            }
        }
        // release fixed nodes whose multiplier is negative
        let ax = form.apply(&x);
        let mut released = false;
        for i in 0..len {
            if active[i] && ax[i] < -1e-10 * energy.abs().max(1.0) / set_nodes as f64 {
                active[i] = false;
                released = true;
            }
        }
        if !released {
            break;
        }
        let before = energy;
        energy = dot(&x, &ax);
        if (before - energy).abs() < cfg.tol * energy.abs() && iterations > 0 && !released {
            break;
        }
    }
    Ok(CapacityEstimate {
        value: dot(&x, &form.apply(&x)),
        method: Method::Fourier,
        mesh,
        set_nodes,
        iterations,
    })
}

/// Capacitary potential on `[-R, R]^n x [0, R]`: `1` on the set nodes, `0`
/// on the sides and the top, zero flux elsewhere on `t = 0`.
pub fn capacitary_potential(set: &SingularSet, mesh: &MeshSpec, p: &FracParams) -> Result<(HalfGridFn, SolveStats)> {
    let base = Grid::cube(p.n, mesh.half_width, mesh.spacing)?;
    check_set(set, &base)?;
    let t = graded_heights(mesh.half_width, mesh.layers, p.sigma, grading_exponent(p.sigma))?;
    let bvp = MixedBVP {
        base,
        t,
        sigma: p.sigma,
        dirichlet: Box::new(|_, _| 0.0),
        flat: FlatData::Neumann(Box::new(|_| 0.0)),
        excluded: set.clone(),
        excluded_rule: ExcludedRule::Dirichlet(1.0),
        domain: Domain::HalfBox,
    };
    let sys = crate::solver::assemble(&bvp)?;
    let (x, stats) = pcg(&sys, 1e-10, None)?;
    Ok((sys.field(&x)?, stats))
}

/// `mu_sigma(set)`: twice the half-space energy of the capacitary potential.
pub fn mu_extension(set: &SingularSet, mesh: &MeshSpec, p: &FracParams) -> Result<CapacityEstimate> {
    let base = Grid::cube(p.n, mesh.half_width, mesh.spacing)?;
    let set_nodes = check_set(set, &base)?.iter().filter(|&&m| m).count();
    if set_nodes == 0 {
        return Ok(CapacityEstimate {
            value: 0.0,
            method: Method::Extension,
            mesh: Some(*mesh),
            set_nodes,
            iterations: 0,
        });
    }
    let (u, stats) = capacitary_potential(set, mesh, p)?;
    Ok(CapacityEstimate {
        value: 2.0 * weighted_energy(&u, p.sigma),
        method: Method::Extension,
        mesh: Some(*mesh),
        set_nodes,
        iterations: stats.iterations,
    })
}

/// One level of an equivalence study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceLevel {
    pub mesh: MeshSpec,
    pub mu: f64,
    pub cap: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub levels: Vec<EquivalenceLevel>,
    /// `mu / (2 N(sigma) cap)` at the finest level.
    pub ratio: f64,
    /// Distance of the ratio to 1 shrinks at every refinement.
    pub trend_to_one: bool,
    /// Some estimator moved more than 5% at the last refinement.
    pub unconverged: bool,
}

/// Mesh of level `l` of the refinement sequence. Box truncation dominates
/// the error of the extension route, so the box grows with the level:
/// `R_l = (1 + l) R_0`, `h_l = 2 h_0 / (2 + l)`, and the layer count keeps
/// the graded t-mesh proportionally refined.
pub fn equivalence_mesh(coarse: &MeshSpec, level: usize) -> MeshSpec {
    let l = level as f64;
    MeshSpec {
        half_width: coarse.half_width * (1.0 + l),
        spacing: coarse.spacing * 2.0 / (2.0 + l),
        layers: coarse.layers * (1 + level) * (2 + level) / 2,
    }
}

/// Coarsest level used for a ball of radius `r`.
pub fn default_coarse_mesh(r: f64) -> MeshSpec {
    MeshSpec {
        half_width: 4.0 * r,
        spacing: 0.5 * r,
        layers: 8,
    }
}

/// `mu_extension / (2 N(sigma) cap_fourier)` over `levels` refinements of
/// `coarse`.
pub fn equivalence_check(set: &SingularSet, p: &FracParams, coarse: &MeshSpec, levels: usize) -> Result<EquivalenceReport> {
    if levels == 0 {
        return Err(Error::InvalidParams("need at least one level".into()));
    }
    let nn = extension_normalizer(p.sigma)?;
    let mut out = Vec::with_capacity(levels);
    for l in 0..levels {
        let mesh = equivalence_mesh(coarse, l);
        let mu = mu_extension(set, &mesh, p)?.value;
        let grid = Grid::cube(p.n, mesh.half_width, mesh.spacing)?;
        let cap = cap_fourier(set, &grid, p, &FourierConfig::default())?.value;
        out.push(EquivalenceLevel {
            mesh,
            mu,
            cap,
            ratio: mu / (2.0 * nn * cap),
        });
    }
    let trend_to_one = out
        .windows(2)
        .all(|w| (w[1].ratio - 1.0).abs() < (w[0].ratio - 1.0).abs());
    let unconverged = out.len() >= 2 && {
        let a = &out[out.len() - 2];
        let b = &out[out.len() - 1];
        (b.mu - a.mu).abs() > 0.05 * b.mu.abs() || (b.cap - a.cap).abs() > 0.05 * b.cap.abs()
    };
    Ok(EquivalenceReport {
        ratio: out.last().map_or(f64::NAN, |l| l.ratio),
        levels: out,
        trend_to_one,
        unconverged,
    })
}

/// Two-sided weighted energy of the tent `min(1, max(0, 2 - |X|/r))` at
/// `r = 1`: `int |t|^{1-2 sigma} |grad f|^2` over `1 < |X| < 2` in
/// `R^{n+1}`, by radial and polar-angle quadrature.
pub fn tent_energy(p: &FracParams) -> f64 {
    let n = p.nf();
    let s = p.sigma;
    // radial part: int_1^2 rho^{1-2 sigma} rho^n d rho (|grad f| = 1)
    let rule = gauss_legendre(24);
    let radial: f64 = rule
        .nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&x, &w)| {
            let rho = 1.5 + 0.5 * x;
            0.5 * w * rho.powf(1.0 - 2.0 * s + n)
        })
        .sum();
    // angular part: |S^{n-1}| int_0^pi |cos phi|^{1-2 sigma} sin^{n-1} phi d phi,
    // on [0, pi/2] with u = 1 - cos phi graded towards the equator
    let g = gauss_legendre(32);
    let mut ang = 0.0;
    let levels = 40;
    let mut hi = std::f64::consts::FRAC_PI_2;
    for _ in 0..levels {
        let lo = 0.5 * hi;
        // panel in psi = pi/2 - phi, where cos phi = sin psi
        let c = 0.5 * (hi - lo);
        for (&x, &w) in g.nodes.iter().zip(&g.weights) {
            let psi = lo + c * (1.0 + x);
            ang += c * w * psi.sin().powf(1.0 - 2.0 * s) * psi.cos().powf(n - 1.0);
        }
        hi = lo;
    }
    // remaining sliver, sin psi ~ psi, cos psi ~ 1
    ang += hi.powf(2.0 - 2.0 * s) / (2.0 - 2.0 * s);
    2.0 * sphere_area(p.n) * ang * radial
}

/// `sum_i E_tent r_i^{n - 2 sigma}` for balls centered on the boundary.
pub fn covering_upper_bound(balls: &[(Vec<f64>, f64)], p: &FracParams) -> Result<f64> {
    if balls.iter().any(|(_, r)| !(*r > 0.0)) {
        return Err(Error::InvalidParams("cover radii must be positive".into()));
    }
    let e = tent_energy(p);
    Ok(balls.iter().map(|(_, r)| e * r.powf(p.decay())).sum())
}

/// Cover of the set by the balls circumscribing the dyadic cubes of the
/// coarsest level whose balls have diameter at most `delta`.
pub fn dyadic_cover(set: &SingularSet, delta: f64) -> Result<Vec<(Vec<f64>, f64)>> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParams("delta must be positive".into()));
    }
    if set.is_empty() {
        return Ok(Vec::new());
    }
    let n = set.n as f64;
    // cube side l = 2^-j with l sqrt(n) <= delta
    let j = (n.sqrt() / delta).log2().ceil() as i32;
    let side = 0.5f64.powi(j);
    let radius = 0.5 * side * n.sqrt();
    let mut cubes = BTreeSet::new();
    for x in set.sample_points(0.25 * side) {
        let idx: Vec<i64> = x.iter().map(|v| (v / side).floor() as i64).collect();
        cubes.insert(idx);
    }
    Ok(cubes
        .into_iter()
        .map(|idx| {
            let c = idx.iter().map(|&i| (i as f64 + 0.5) * side).collect();
            (c, radius)
        })
        .collect())
}

/// `sum r_i^s` over the dyadic `delta`-cover.
pub fn hausdorff_premeasure(set: &SingularSet, s: f64, delta: f64) -> Result<f64> {
    if !(s > 0.0 && s <= set.n as f64) {
        return Err(Error::InvalidParams(format!("s out of (0, n]: {s}")));
    }
    Ok(dyadic_cover(set, delta)?.iter().map(|(_, r)| r.powf(s)).sum())
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidParams("need two or more samples".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParams("log-log fit needs positive data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::gamma;

    #[test]
    fn tent_energy_matches_closed_form() {
        for (n, s) in [(2usize, 0.5), (2, 0.25), (3, 0.7), (1, 0.4)] {
            let p = FracParams::linear(n, s).unwrap();
            let nf = n as f64;
            let e = nf + 2.0 - 2.0 * s;
            let beta = gamma(1.0 - s).unwrap() * gamma(0.5 * nf).unwrap() / gamma(1.0 - s + 0.5 * nf).unwrap();
            let exact = (2f64.powf(e) - 1.0) / e * sphere_area(n) * beta;
            let got = tent_energy(&p);
            assert!((got - exact).abs() < 1e-9 * exact, "{n} {s}: {got} vs {exact}");
        }
    }

    #[test]
    fn covers_and_premeasures() {
        let p = FracParams::new(2, 0.5).unwrap();
        let e = tent_energy(&p);
        let one = covering_upper_bound(&[(vec![0.0, 0.0], 0.3)], &p).unwrap();
        assert!((one - e * 0.3).abs() < 1e-14);
        let seg = SingularSet::strip(2, 1, 0.5);
        let a = hausdorff_premeasure(&seg, 1.0, 0.1).unwrap();
        let b = hausdorff_premeasure(&seg, 1.0, 0.05).unwrap();
        assert!((0.5..=4.0).contains(&a) && (0.5..=4.0).contains(&b), "{a} {b}");
        assert!((a - b).abs() < 0.2 * a);
        let c = hausdorff_premeasure(&seg, 1.5, 0.1).unwrap();
        let d = hausdorff_premeasure(&seg, 1.5, 0.05).unwrap();
        assert!(d < c);
        let pt = SingularSet::point(vec![0.1, 0.2]);
        assert!(hausdorff_premeasure(&pt, 0.5, 1e-3).unwrap() < 0.05);
    }

    #[test]
    fn empty_set_has_zero_capacity() {
        let p = FracParams::new(2, 0.5).unwrap();
        let grid = Grid::cube(2, 1.0, 0.25).unwrap();
        let e = SingularSet::empty(2);
        assert_eq!(cap_fourier(&e, &grid, &p, &FourierConfig::default()).unwrap().value, 0.0);
        let mesh = MeshSpec { half_width: 1.0, spacing: 0.25, layers: 8 };
        assert_eq!(mu_extension(&e, &mesh, &p).unwrap().value, 0.0);
    }

    #[test]
    fn loglog_slope_recovers_powers() {
        let x = [0.1, 0.2, 0.4];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.3)).collect();
        assert!((loglog_slope(&x, &y).unwrap() - 1.3).abs() < 1e-12);
    }
}
