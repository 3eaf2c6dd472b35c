//! Quadrature rules shared by the integral evaluators.
//!
//! Gauss–Legendre rules are computed by Newton iteration on the Legendre
//! recurrence and cached per order. Sphere rules are antipodally symmetric so
//! that averaging `u(x + r w)` over the rule equals averaging the symmetric
//! second difference.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn legendre_rule(order: usize) -> GaussRule {
    let m = order;
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if m == 1 { x } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = m as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[m - 1 - i] = x;
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    GaussRule { nodes, weights }
}

/// Gauss–Legendre rule of the given order on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> Arc<GaussRule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussRule>>>> = OnceLock::new();
    let order = order.max(1);
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("quadrature cache poisoned");
    map.entry(order)
        .or_insert_with(|| Arc::new(legendre_rule(order)))
        .clone()
}

/// Integrates `f` over `[a, b]` with an `order`-point Gauss–Legendre rule.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, order: usize) -> f64 {
    let rule = gauss_legendre(order);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&x, &w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Composite Gauss–Legendre over consecutive breakpoints.
pub fn integrate_composite<F: FnMut(f64) -> f64>(mut f: F, breaks: &[f64], order: usize) -> f64 {
    breaks
        .windows(2)
        .map(|w| integrate(&mut f, w[0], w[1], order))
        .sum()
}

/// Surface measure of the unit sphere `S^{n-1}` in `R^n`.
pub fn sphere_area(n: usize) -> f64 {
    let nf = n as f64;
    2.0 * PI.powf(0.5 * nf) / statrs::function::gamma::gamma(0.5 * nf)
}

/// Volume of the unit ball in `R^n`.
pub fn ball_volume(n: usize) -> f64 {
    let nf = n as f64;
    PI.powf(0.5 * nf) / statrs::function::gamma::gamma(0.5 * nf + 1.0)
}

/// Directions on `S^{n-1}` with weights summing to the sphere area.
#[derive(Debug, Clone)]
pub struct SphereRule {
    pub dim: usize,
    pub dirs: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl SphereRule {
    /// `resolution` is the number of angles on a great circle (rounded up to
    /// an even number). For `n = 3` the polar direction uses half as many
    /// Gauss nodes in `cos(theta)`.
    pub fn new(n: usize, resolution: usize) -> Result<Self> {
        let m = resolution.max(4).div_ceil(2) * 2;
        match n {
            1 => Ok(Self {
                dim: 1,
                dirs: vec![vec![1.0], vec![-1.0]],
                weights: vec![1.0, 1.0],
            }),
            2 => {
                let w = 2.0 * PI / m as f64;
                let dirs = (0..m)
                    .map(|i| {
                        let a = 2.0 * PI * (i as f64 + 0.5) / m as f64;
                        vec![a.cos(), a.sin()]
                    })
                    .collect();
                Ok(Self {
                    dim: 2,
                    dirs,
                    weights: vec![w; m],
                })
            }
            3 => {
                let gz = gauss_legendre(m / 2);
                let mut dirs = Vec::with_capacity(m * m / 2);
                let mut weights = Vec::with_capacity(m * m / 2);
                for (&z, &wz) in gz.nodes.iter().zip(&gz.weights) {
                    let s = (1.0 - z * z).sqrt();
                    for i in 0..m {
                        let a = 2.0 * PI * (i as f64 + 0.5) / m as f64;
                        dirs.push(vec![s * a.cos(), s * a.sin(), z]);
                        weights.push(wz * 2.0 * PI / m as f64);
                    }
                }
                Ok(Self { dim: 3, dirs, weights })
            }
            _ => Err(Error::InvalidParams(format!(
                "sphere rules implemented for n <= 3, got n = {n}"
            ))),
        }
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}
