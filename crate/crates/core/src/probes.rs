//! Checks of the pointwise consequences of the main results on exact and
//! computed fields: blow-up rate near the singular set, approximate
//! cylindrical symmetry on normal fibers, and the scaling of the trace
//! Poincare inequality.

use serde::Serialize;

use crate::capacity::loglog_slope;
use crate::constants::FracParams;
use crate::error::{Error, Result};
use crate::lattice::{for_each_link, Component, HalfGridFn, SingularSet};

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub name: String,
    pub inputs: String,
    pub measured: f64,
    /// Target value, or the bound of a one-sided check.
    pub predicted: f64,
    pub tolerance: f64,
    pub one_sided: bool,
    pub pass: bool,
}

impl ProbeReport {
    pub fn two_sided(name: &str, inputs: String, measured: f64, predicted: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            inputs,
            measured,
            predicted,
            tolerance,
            one_sided: false,
            pass: (measured - predicted).abs() <= tolerance,
        }
    }

    /// Passes when `measured <= bound + tolerance`.
    pub fn upper(name: &str, inputs: String, measured: f64, bound: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            inputs,
            measured,
            predicted: bound,
            tolerance,
            one_sided: true,
            pass: measured <= bound + tolerance,
        }
    }

    /// Passes when `measured >= bound - tolerance`.
    pub fn lower(name: &str, inputs: String, measured: f64, bound: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            inputs,
            measured,
            predicted: bound,
            tolerance,
            one_sided: true,
            pass: measured >= bound - tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowupFit {
    pub slope: f64,
    /// `-(n - 2 sigma)/2`.
    pub rate: f64,
    pub bound_ok: bool,
    pub distances: Vec<f64>,
    pub values: Vec<f64>,
}

/// Slack allowed below `-(n - 2 sigma)/2` before a fit counts as faster
/// blow-up.
pub const SLOPE_SLACK: f64 = 0.1;

/// Unit vector normal to the set at `base`: the last coordinate axis, which
/// no strip of dimension `k <= n - 1` spans.
fn default_ray(n: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[n - 1] = 1.0;
    e
}

/// Least-squares slope of `log u` against `log r` at `x = base + r e`, `r`
/// in `radii`, along the last coordinate axis. For `base` on the set and a
/// normal ray, `r = dist(x, set)` near the set.
pub fn blowup_exponent<F: Fn(&[f64]) -> f64 + ?Sized>(
    u: &F,
    set: &SingularSet,
    base: &[f64],
    radii: &[f64],
    p: &FracParams,
) -> Result<BlowupFit> {
    blowup_exponent_along(u, set, base, &default_ray(p.n), radii, p)
}

pub fn blowup_exponent_along<F: Fn(&[f64]) -> f64 + ?Sized>(
    u: &F,
    set: &SingularSet,
    base: &[f64],
    dir: &[f64],
    radii: &[f64],
    p: &FracParams,
) -> Result<BlowupFit> {
    if base.len() != p.n || dir.len() != p.n {
        return Err(Error::InvalidParams("ray has the wrong dimension".into()));
    }
    if radii.len() < 2 || radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::InvalidParams("need two or more positive radii".into()));
    }
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut distances = Vec::with_capacity(radii.len());
    let mut values = Vec::with_capacity(radii.len());
    for &r in radii {
        let x: Vec<f64> = base.iter().zip(dir).map(|(b, d)| b + r * d / norm).collect();
        let v = u(&x);
        if !(v > 0.0) {
            return Err(Error::NonPositive {
                value: v,
                location: format!("{x:?}"),
            });
        }
        if !set.is_empty() && !(set.dist(&x) > 0.0) {
            return Err(Error::Singular(format!("sample {x:?} lies on the set")));
        }
        distances.push(r);
        values.push(v);
    }
    let slope = loglog_slope(&distances, &values)?;
    let rate = -p.blowup_rate();
    Ok(BlowupFit {
        slope,
        rate,
        bound_ok: slope >= rate - SLOPE_SLACK,
        distances,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymmetryReport {
    pub ratio: f64,
    pub bound: f64,
    pub pass: bool,
    pub samples: usize,
}

/// `eps` of the bound when none is given.
pub const DEFAULT_EPS: f64 = 0.2;

/// Unit vectors of `R^m`: equal angles on the circle (rotated by `phase`),
/// a Fibonacci lattice on `S^2`, coordinate and diagonal directions above.
pub fn sphere_directions(m: usize, count: usize, phase: f64) -> Vec<Vec<f64>> {
    match m {
        0 => Vec::new(),
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|i| {
                let a = phase + 2.0 * std::f64::consts::PI * i as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|i| {
                    let z = 1.0 - (2.0 * i as f64 + 1.0) / count as f64;
                    let s = (1.0 - z * z).sqrt();
                    let a = phase + golden * i as f64;
                    vec![s * a.cos(), s * a.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut out = Vec::new();
            for d in 0..m {
                for s in [1.0, -1.0] {
                    let mut e = vec![0.0; m];
                    e[d] = s;
                    out.push(e);
                }
            }
            let c = 1.0 / (m as f64).sqrt();
            for mask in 0..(1usize << m).min(64) {
                out.push((0..m).map(|d| if mask >> d & 1 == 1 { -c } else { c }).collect());
            }
            out
        }
    }
}

/// Normal frame of an affine strip: orthonormal complement of its basis.
fn normal_frame(set: &SingularSet) -> Result<(usize, Vec<Vec<f64>>)> {
    let [Component::Strip { basis, .. }] = set.components.as_slice() else {
        return Err(Error::InvalidParams("symmetry probe needs a single affine strip".into()));
    };
    let n = set.n;
    let mut frame: Vec<Vec<f64>> = basis.clone();
    for d in 0..n {
        let mut v: Vec<f64> = (0..n).map(|i| if i == d { 1.0 } else { 0.0 }).collect();
        for b in &frame {
            let c: f64 = v.iter().zip(b).map(|(a, b)| a * b).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= c * bi;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            frame.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let k = basis.len();
    Ok((k, frame.split_off(k)))
}

/// `max / min` of `u` on the normal sphere of radius `r` about `z`, against
/// `(8 r / eps + 1)^{(n - 2 sigma)/2}`.
pub fn symmetry_ratio<F: Fn(&[f64]) -> f64 + ?Sized>(
    u: &F,
    set: &SingularSet,
    z: &[f64],
    r: f64,
    eps: f64,
    p: &FracParams,
) -> Result<SymmetryReport> {
    symmetry_ratio_sampled(u, set, z, r, eps, p, 32, 0.0)
}

#[allow(clippy::too_many_arguments)]
pub fn symmetry_ratio_sampled<F: Fn(&[f64]) -> f64 + ?Sized>(
    u: &F,
    set: &SingularSet,
    z: &[f64],
    r: f64,
    eps: f64,
    p: &FracParams,
    count: usize,
    phase: f64,
) -> Result<SymmetryReport> {
    if !(r > 0.0 && eps > 0.0 && r < eps * eps) {
        return Err(Error::InvalidParams(format!("need 0 < r < eps^2, got r = {r}, eps = {eps}")));
    }
    if z.len() != set.n || set.dist(z) > 1e-12 {
        return Err(Error::InvalidParams("fiber base must lie on the set".into()));
    }
    let (_, normals) = normal_frame(set)?;
    let dirs = sphere_directions(normals.len(), count.max(16), phase);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for d in &dirs {
        let mut x = z.to_vec();
        for (c, nv) in d.iter().zip(&normals) {
            for (xi, ni) in x.iter_mut().zip(nv) {
                *xi += r * c * ni;
            }
        }
        let v = u(&x);
        if !v.is_finite() {
            return Err(Error::OutsideDomain(format!("fiber point {x:?}")));
        }
        if !(v > 0.0) {
            return Err(Error::NonPositive {
                value: v,
                location: format!("{x:?}"),
            });
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let ratio = hi / lo;
    let bound = (8.0 * r / eps + 1.0).powf(p.blowup_rate());
    Ok(SymmetryReport {
        ratio,
        bound,
        pass: ratio <= bound * 1.05,
        samples: dirs.len(),
    })
}

/// Volume of the half ball of radius `r` in `R^{m}_+`.
fn half_ball_volume(m: usize, r: f64) -> f64 {
    let mf = m as f64;
    let unit = std::f64::consts::PI.powf(0.5 * mf) / statrs::function::gamma::gamma(0.5 * mf + 1.0);
    0.5 * unit * r.powf(mf)
}

/// `avg_{B_r} |f(., 0) - mean|^2 / (r^{2 sigma + 1} avg_{half ball} t^{1-2 sigma} |grad f|^2)`,
/// balls centered at the origin. Averages divide by the exact volumes; the
/// energy keeps the links whose endpoints both lie in the closed half ball.
pub fn poincare_ratio(f: &HalfGridFn, r: f64, sigma: f64) -> Result<f64> {
    let base = &f.base;
    let n = base.dim();
    if !(r > 0.0) {
        return Err(Error::InvalidParams("radius must be positive".into()));
    }
    let reach = base
        .lower
        .iter()
        .zip(&base.upper)
        .all(|(a, b)| -a >= r - 1e-12 && *b >= r - 1e-12);
    if !reach || *f.t.last().unwrap_or(&0.0) < r - 1e-12 {
        return Err(Error::OutsideDomain(format!("half ball of radius {r} exceeds the lattice")));
    }
    let trap = base.trap_weights();
    let trace = f.layer(0);
    let inside = |i: usize| {
        let x = base.point(i);
        x.iter().map(|v| v * v).sum::<f64>() <= r * r * (1.0 + 1e-12)
    };
    let (mut m0, mut m1) = (0.0, 0.0);
    for i in 0..base.len() {
        if inside(i) {
            m0 += trap[i];
            m1 += trap[i] * trace[i];
        }
    }
    let mean = m1 / m0;
    let mut dev = 0.0;
    for i in 0..base.len() {
        if inside(i) {
            dev += trap[i] * (trace[i] - mean).powi(2);
        }
    }
    let numer = dev / m0;
    let nx = base.len();
    let in_half = |a: usize| {
        let x = base.point(a % nx);
        let t = f.t[a / nx];
        x.iter().map(|v| v * v).sum::<f64>() + t * t <= r * r * (1.0 + 1e-12)
    };
    let mut energy = 0.0;
    for_each_link(base, &f.t, sigma, |a, b, k| {
        if in_half(a) && in_half(b) {
            let d = f.values[a] - f.values[b];
            energy += k * d * d;
        }
    });
    if energy == 0.0 {
        return Err(Error::InvalidParams("zero gradient: the ratio is undefined".into()));
    }
    let denom = r.powf(2.0 * sigma + 1.0) * energy / half_ball_volume(n + 1, r);
    Ok(numer / denom)
}

/// Test family for the Poincare constant: ten polynomials in `(x, t)` times
/// the cutoff `(1 - |X|^2)_+^2`.
pub fn poincare_family(n: usize) -> Vec<(String, Box<dyn Fn(&[f64], f64) -> f64 + Send + Sync>)> {
    let cut = |x: &[f64], t: f64| {
        let s = 1.0 - x.iter().map(|v| v * v).sum::<f64>() - t * t;
        if s > 0.0 {
            s * s
        } else {
            0.0
        }
    };
    let last = n - 1;
    let mut out: Vec<(String, Box<dyn Fn(&[f64], f64) -> f64 + Send + Sync>)> = Vec::new();
    out.push(("x1".into(), Box::new(|x, _| x[0])));
    out.push(("x1*cut".into(), Box::new(move |x, t| x[0] * cut(x, t))));
    out.push(("cut".into(), Box::new(move |x, t| cut(x, t))));
    out.push(("x1^2*cut".into(), Box::new(move |x, t| x[0] * x[0] * cut(x, t))));
    out.push(("(x1+t)*cut".into(), Box::new(move |x, t| (x[0] + t) * cut(x, t))));
    out.push(("x1*xn*cut".into(), Box::new(move |x, t| x[0] * x[last] * cut(x, t))));
    out.push(("(1+x1)^3*cut".into(), Box::new(move |x, t| (1.0 + x[0]).powi(3) * cut(x, t))));
    out.push(("(|x|^2-t)*cut".into(), Box::new(move |x, t| (x.iter().map(|v| v * v).sum::<f64>() - t) * cut(x, t))));
    out.push(("x1-2xn^3".into(), Box::new(move |x, _| x[0] - 2.0 * x[last].powi(3))));
    out.push(("(x1+1/2)(1+t)*cut".into(), Box::new(move |x, t| (x[0] + 0.5) * (1.0 + t) * cut(x, t))));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fraclap::{bubble, cylindrical_solution};
    use crate::lattice::{graded_heights, grading_exponent, Grid};

    #[test]
    fn cylindrical_profile_has_the_exact_rate() {
        let p = FracParams::new(3, 0.5).unwrap().with_k(1).unwrap();
        let set = SingularSet::strip(3, 1, 2.0);
        let u = |x: &[f64]| cylindrical_solution(x, &p, 1.7).unwrap();
        let fit = blowup_exponent(&u, &set, &[0.3, 0.0, 0.0], &[0.4, 0.2, 0.1, 0.05], &p).unwrap();
        assert!((fit.slope + 0.5 * p.decay()).abs() < 1e-10);
        assert!(fit.bound_ok);
        // amplitude does not move the slope
        let v = |x: &[f64]| 40.0 * u(x);
        let g = blowup_exponent(&v, &set, &[0.3, 0.0, 0.0], &[0.4, 0.2, 0.1, 0.05], &p).unwrap();
        assert!((fit.slope - g.slope).abs() < 1e-13);
        let sup = |x: &[f64]| set.dist(x).powf(-p.decay());
        assert!(!blowup_exponent(&sup, &set, &[0.3, 0.0, 0.0], &[0.4, 0.2, 0.1, 0.05], &p).unwrap().bound_ok);
    }

    #[test]
    fn regular_points_are_flat() {
        let p = FracParams::new(2, 0.5).unwrap();
        let set = SingularSet::point(vec![0.2, 0.1]);
        let w = |x: &[f64]| bubble(x, &p);
        let fit = blowup_exponent(&w, &set, &[0.2, 0.1], &[0.04, 0.02, 0.01], &p).unwrap();
        assert!(fit.slope.abs() < 0.05 && fit.bound_ok, "{fit:?}");
        let neg = |_: &[f64]| -1.0;
        assert!(matches!(
            blowup_exponent(&neg, &set, &[0.2, 0.1], &[0.04, 0.02], &p),
            Err(Error::NonPositive { .. })
        ));
    }

    #[test]
    fn exact_cylinder_is_symmetric_under_any_sampling() {
        let p = FracParams::new(4, 0.4).unwrap().with_k(1).unwrap();
        let set = SingularSet::strip(4, 1, 2.0);
        let u = |x: &[f64]| cylindrical_solution(x, &p, 1.0).unwrap();
        for phase in [0.0, 0.3, 1.1] {
            let s = symmetry_ratio_sampled(&u, &set, &[0.5, 0.0, 0.0, 0.0], 0.01, 0.2, &p, 40, phase).unwrap();
            assert!((s.ratio - 1.0).abs() < 1e-6 && s.pass && s.samples >= 16);
        }
        assert!(symmetry_ratio(&u, &set, &[0.0; 4], 0.1, 0.2, &p).is_err());
    }

    #[test]
    fn tilted_cylinder_ratio_is_linear_in_r() {
        let p = FracParams::new(3, 0.5).unwrap().with_k(1).unwrap();
        let set = SingularSet::strip(3, 1, 2.0);
        let u = |x: &[f64]| cylindrical_solution(x, &p, 1.0).unwrap() * (1.0 + 0.1 * x[1]);
        let rs = [0.004, 0.008, 0.016, 0.032];
        let mut excess = Vec::new();
        for &r in &rs {
            let s = symmetry_ratio(&u, &set, &[0.0; 3], r, 0.2, &p).unwrap();
            assert!(s.pass && s.ratio < s.bound);
            // (1 + 0.1 r) / (1 - 0.1 r) - 1
            let exact = 0.2 * r / (1.0 - 0.1 * r);
            assert!((s.ratio - 1.0 - exact).abs() < 1e-12);
            excess.push(s.ratio - 1.0);
        }
        assert!((loglog_slope(&rs, &excess).unwrap() - 1.0).abs() < 0.01);
    }

    fn half_field<F: Fn(&[f64], f64) -> f64>(n: usize, half: f64, h: f64, sigma: f64, f: F) -> HalfGridFn {
        let base = Grid::cube(n, half, h).unwrap();
        let m = (half / h).round() as usize;
        let t = graded_heights(half, m, sigma, grading_exponent(sigma)).unwrap();
        HalfGridFn::from_fn(base, t, f).unwrap()
    }

    #[test]
    fn poincare_ratio_of_a_linear_function() {
        // n = 1, sigma = 1/2: avg x^2 = r^2/3, avg |grad|^2 = 1
        let r = 1.0;
        let mut last = f64::INFINITY;
        for h in [0.05, 0.025, 0.0125] {
            let f = half_field(1, 1.0, h, 0.5, |x, _| x[0]);
            let q = poincare_ratio(&f, r, 0.5).unwrap();
            let err = (q - 1.0 / 3.0).abs();
            assert!(err < last, "{q}");
            last = err;
        }
        assert!(last < 0.02, "{last}");
        let f = half_field(1, 1.0, 0.05, 0.5, |_, t| t);
        assert_eq!(poincare_ratio(&f, r, 0.5).unwrap(), 0.0);
        let c = half_field(1, 1.0, 0.05, 0.5, |_, _| 2.0);
        assert!(poincare_ratio(&c, r, 0.5).is_err());
    }

    #[test]
    fn poincare_ratio_is_dilation_invariant() {
        for sigma in [0.3, 0.5, 0.7] {
            for (name, g) in poincare_family(2) {
                let small = half_field(2, 1.0, 0.1, sigma, |x, t| g(x, t));
                let big = half_field(2, 2.0, 0.2, sigma, |x, t| g(&[x[0] / 2.0, x[1] / 2.0], t / 2.0));
                let a = poincare_ratio(&small, 1.0, sigma).unwrap();
                let b = poincare_ratio(&big, 2.0, sigma).unwrap();
                assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-300), "{name}: {a} vs {b}");
                assert!(a.is_finite());
            }
        }
    }
}
