//! Kelvin transforms about spheres centered on `{t = 0}` and the discrete
//! moving-sphere comparison.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{euclid, GridFn, SingularSet};

/// Inversion in the sphere of radius `lambda` about `(center, 0)`, with the
/// conformal weight `(lambda / |xi - center|)^exponent`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KelvinMap {
    pub center: Vec<f64>,
    pub lambda: f64,
    pub exponent: f64,
}

impl KelvinMap {
    pub fn new(center: Vec<f64>, lambda: f64, exponent: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParams(format!("Kelvin radius must be positive, got {lambda}")));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParams("Kelvin center must be finite".into()));
        }
        Ok(Self { center, lambda, exponent })
    }

    /// Center padded with zeros to the dimension of `target` (points of the
    /// half-space carry the extra coordinate `t`).
    fn center_for(&self, target: &[f64]) -> Result<Vec<f64>> {
        let n = self.center.len();
        if target.len() != n && target.len() != n + 1 {
            return Err(Error::InvalidParams(format!(
                "target has dimension {}, center {}",
                target.len(),
                n
            )));
        }
        let mut c = self.center.clone();
        c.resize(target.len(), 0.0);
        Ok(c)
    }

    /// Image `center + lambda^2 (xi - center) / |xi - center|^2` and the weight.
    pub fn invert(&self, target: &[f64]) -> Result<(Vec<f64>, f64)> {
        let c = self.center_for(target)?;
        let r = euclid(target, &c);
        if r == 0.0 {
            return Err(Error::Singular("Kelvin transform at its own center".into()));
        }
        let s = self.lambda * self.lambda / (r * r);
        let image = target.iter().zip(&c).map(|(x, c)| c + s * (x - c)).collect();
        Ok((image, (self.lambda / r).powf(self.exponent)))
    }
}

/// `(lambda / |xi - X|)^{n - 2 sigma} u(X + lambda^2 (xi - X) / |xi - X|^2)`.
pub fn kelvin<F: Fn(&[f64]) -> f64 + ?Sized>(u: &F, map: &KelvinMap, target: &[f64]) -> Result<f64> {
    let (image, weight) = map.invert(target)?;
    Ok(weight * u(&image))
}

/// A node where the Kelvin image exceeds the field beyond the tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub center: Vec<f64>,
    pub lambda: f64,
    pub point: Vec<f64>,
    pub kelvin_value: f64,
    pub value: f64,
}

impl Witness {
    /// `w_{x, lambda}(y) / w(y) - 1`.
    pub fn excess(&self) -> f64 {
        self.kelvin_value / self.value - 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub lambda_bar: f64,
    pub tol: f64,
    /// First failure above `lambda_bar`, if the sweep stopped early.
    pub witness: Option<Witness>,
}

/// `1e-6 + 2 h Lip(w)`: the comparison is made through multilinear
/// interpolation, whose error this allowance dominates.
pub fn sweep_tolerance(w: &GridFn) -> f64 {
    1e-6 + 2.0 * w.grid.max_h() * w.lipschitz_estimate()
}

/// Worst violation of `w_{x, lambda}(y) <= w(y) (1 + tol)` over the nodes
/// `y` with `|y - x| >= lambda` away from the `2h`-tube around the set.
fn violation(w: &GridFn, map: &KelvinMap, set: &SingularSet, tol: f64) -> Option<Witness> {
    let g = &w.grid;
    let tube = 2.0 * g.max_h();
    let mut worst: Option<Witness> = None;
    for idx in 0..g.len() {
        let y = g.point(idx);
        let value = w.values[idx];
        if !value.is_finite() || euclid(&y, &map.center) < map.lambda {
            continue;
        }
        if !set.is_empty() && set.dist(&y) < tube {
            continue;
        }
        let (image, weight) = match map.invert(&y) {
            Ok(v) => v,
            Err(_) => continue,
        };
        let Some(inner) = w.interpolate(&image) else {
            continue;
        };
        let kv = weight * inner;
        if kv > value * (1.0 + tol) {
            let wit = Witness {
                center: map.center.clone(),
                lambda: map.lambda,
                point: y,
                kelvin_value: kv,
                value,
            };
            if worst.as_ref().is_none_or(|o| wit.excess() > o.excess()) {
                worst = Some(wit);
            }
        }
    }
    worst
}

/// Largest `lambda` of the increasing grid such that every `lambda' <= lambda`
/// of the grid passes the comparison; `0` if the first one fails.
pub fn moving_sphere_sweep(
    w: &GridFn,
    x: &[f64],
    lambda_grid: &[f64],
    set: &SingularSet,
    exponent: f64,
) -> Result<SweepResult> {
    moving_sphere_sweep_with(w, x, lambda_grid, set, exponent, sweep_tolerance(w))
}

pub fn moving_sphere_sweep_with(
    w: &GridFn,
    x: &[f64],
    lambda_grid: &[f64],
    set: &SingularSet,
    exponent: f64,
    tol: f64,
) -> Result<SweepResult> {
    if x.len() != w.grid.dim() {
        return Err(Error::InvalidParams("sweep center has the wrong dimension".into()));
    }
    if lambda_grid.windows(2).any(|p| !(p[1] > p[0])) {
        return Err(Error::InvalidParams("lambda grid must be increasing".into()));
    }
    let mut lambda_bar = 0.0;
    for &lambda in lambda_grid {
        let map = KelvinMap::new(x.to_vec(), lambda, exponent)?;
        if let Some(wit) = violation(w, &map, set, tol) {
            return Ok(SweepResult {
                lambda_bar,
                tol,
                witness: Some(wit),
            });
        }
        lambda_bar = lambda;
    }
    Ok(SweepResult {
        lambda_bar,
        tol,
        witness: None,
    })
}

/// Sampled test of "`w_{x, lambda} <= w` for all `x`, `lambda`": a witness
/// refutes constancy, its absence only fails to refute it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub constant: bool,
    pub witness: Option<Witness>,
    pub pairs_checked: usize,
}

pub fn constancy_certificate(w: &GridFn, centers: &[Vec<f64>], lambda_grid: &[f64], exponent: f64) -> Result<Certificate> {
    let tol = sweep_tolerance(w);
    let none = SingularSet::empty(w.grid.dim());
    let mut worst: Option<Witness> = None;
    let mut pairs = 0;
    for x in centers {
        if x.len() != w.grid.dim() || !w.grid.contains(x) {
            return Err(Error::InvalidParams(format!("center {x:?} outside the grid box")));
        }
        for &lambda in lambda_grid {
            pairs += 1;
            let map = KelvinMap::new(x.clone(), lambda, exponent)?;
            if let Some(wit) = violation(w, &map, &none, tol) {
                if worst.as_ref().is_none_or(|o| wit.excess() > o.excess()) {
                    worst = Some(wit);
                }
            }
        }
    }
    Ok(Certificate {
        constant: worst.is_none(),
        witness: worst,
        pairs_checked: pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::FracParams;
    use crate::fraclap::bubble;
    use crate::lattice::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kelvin_fixes_the_sphere_and_is_involutive() {
        let u = |y: &[f64]| 1.0 + y[0] * y[0] + 0.3 * y[1] + y.get(2).map_or(0.0, |t| t * t);
        let map = KelvinMap::new(vec![0.2, -0.1], 0.7, 1.4).unwrap();
        let on = [0.2 + 0.7 * 0.6, -0.1 + 0.7 * 0.8];
        assert!((kelvin(&u, &map, &on).unwrap() - u(&on)).abs() < 1e-14);
        let one = |_: &[f64]| 1.0;
        let far = [0.2 + 1.4, -0.1];
        assert!((kelvin(&one, &map, &far).unwrap() - 2f64.powf(-1.4)).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let once = |y: &[f64]| kelvin(&u, &map, y).unwrap();
        for _ in 0..1000 {
            let y = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(0.01..2.0)];
            let twice = kelvin(&once, &map, &y).unwrap();
            assert!((twice - u(&y)).abs() < 1e-12 * u(&y).abs().max(1.0));
        }
        assert!(matches!(kelvin(&u, &map, &[0.2, -0.1]), Err(Error::Singular(_))));
    }

    #[test]
    fn kelvin_is_scale_equivariant_on_powers() {
        // (u(./r))_{x, lam}(y) = u_{x/r, lam/r}(y/r) exactly
        let q = 0.8;
        let e = 1.0;
        let a = [0.5, 0.25];
        let u = |y: &[f64]| euclid(y, &a).powf(q);
        let r = 2.5;
        let ur = |y: &[f64]| u(&[y[0] / r, y[1] / r]);
        let x = [0.3, -0.4];
        let lam = 0.9;
        let big = KelvinMap::new(x.to_vec(), lam, e).unwrap();
        let small = KelvinMap::new(vec![x[0] / r, x[1] / r], lam / r, e).unwrap();
        for y in [[1.0, 2.0], [-0.7, 0.1], [3.0, -2.0]] {
            let lhs = kelvin(&ur, &big, &y).unwrap();
            let rhs = kelvin(&u, &small, &[y[0] / r, y[1] / r]).unwrap();
            assert!((lhs - rhs).abs() < 1e-13 * lhs.abs());
        }
    }

    fn bubble_field(h: f64, half: f64) -> (GridFn, FracParams) {
        let p = FracParams::new(2, 0.5).unwrap();
        let g = Grid::cube(2, half, h).unwrap();
        (GridFn::from_fn(g, |y| bubble(y, &p)), p)
    }

    #[test]
    fn bubble_sphere_sweep_stops_near_one() {
        let (w, p) = bubble_field(0.1, 4.0);
        let lambdas: Vec<f64> = (1..=60).map(|i| 0.05 * i as f64).collect();
        let res = moving_sphere_sweep(&w, &[0.0, 0.0], &lambdas, &SingularSet::empty(2), p.decay()).unwrap();
        assert!((res.lambda_bar - 1.0).abs() <= 0.2, "{res:?}");
        assert!(res.witness.unwrap().lambda > 1.0);
        // strict inequality at lambda = 1/2, no tolerance needed
        let map = KelvinMap::new(vec![0.0, 0.0], 0.5, p.decay()).unwrap();
        for i in 0..w.grid.len() {
            let y = w.grid.point(i);
            if euclid(&y, &[0.0, 0.0]) > 0.5 {
                let kv = kelvin(&|z: &[f64]| bubble(z, &p), &map, &y).unwrap();
                assert!(kv < w.values[i]);
            }
        }
    }

    #[test]
    fn constants_pass_every_sphere() {
        let g = Grid::cube(2, 2.0, 0.1).unwrap();
        let w = GridFn::from_fn(g, |_| 3.0);
        let lambdas = [0.1, 0.5, 1.0, 1.5];
        let res = moving_sphere_sweep(&w, &[0.3, 0.0], &lambdas, &SingularSet::empty(2), 1.0).unwrap();
        assert_eq!(res.lambda_bar, 1.5);
        let cert = constancy_certificate(&w, &[vec![0.0, 0.0], vec![0.5, -0.5]], &lambdas, 1.0).unwrap();
        assert!(cert.constant && cert.witness.is_none());
        assert_eq!(cert.pairs_checked, 8);
    }

    #[test]
    fn bubble_is_refuted_only_beyond_unit_radius() {
        let (w, p) = bubble_field(0.1, 4.0);
        let up: Vec<f64> = (1..=20).map(|i| 0.05 * i as f64).collect();
        let cert = constancy_certificate(&w, &[vec![0.0, 0.0]], &up, p.decay()).unwrap();
        assert!(cert.constant, "{cert:?}");
        let cert = constancy_certificate(&w, &[vec![0.0, 0.0]], &[0.5, 1.5, 2.0], p.decay()).unwrap();
        let wit = cert.witness.unwrap();
        assert!(!cert.constant && wit.lambda > 1.0);
    }

    #[test]
    fn larger_tolerance_never_lowers_lambda_bar() {
        let (w, p) = bubble_field(0.2, 3.0);
        let lambdas: Vec<f64> = (1..=25).map(|i| 0.1 * i as f64).collect();
        let set = SingularSet::empty(2);
        let mut last = 0.0;
        for tol in [0.0, 1e-3, 1e-2, 0.05, 0.2] {
            let l = moving_sphere_sweep_with(&w, &[0.0, 0.0], &lambdas, &set, p.decay(), tol).unwrap().lambda_bar;
            assert!(l >= last);
            last = l;
        }
    }
}
