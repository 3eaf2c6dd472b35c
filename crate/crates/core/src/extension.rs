//! Poisson extension of lattice data to the half-space, the weighted energy
//! identity and the weighted Neumann trace.
//!
//! Convention: for `F = P_sigma(., t) * f` the trace returned by
//! [`neumann_trace`] is `-lim t^{1-2 sigma} d_t F`, which equals
//! `N(sigma) (-Delta)^sigma f`. At `sigma = 1/2`, `N = 1` and the trace is the
//! half Laplacian itself.
//!
//! The convolution is a trapezoid sum over the data grid. Below six grid
//! spacings the kernel is too peaked for that, and the node value is
//! computed as `f(x) m(x, t) + sum_y w_y P(x - y, t) (f(y) - f(x))` with
//! `m(x, t)` the exact kernel mass of the box, so the singular part never
//! meets the lattice. What the sum still misses of the quadratic part of
//! `f(y) - f(x)` near `y = x` is added back from central second differences.

use serde::Serialize;

use crate::constants::{extension_normalizer, poisson_beta, FracParams};
use crate::error::{Error, Result};
use crate::lattice::{grading_exponent, graded_heights, weighted_energy, Grid, GridFn, HalfGridFn};
use crate::quad::{gauss_legendre, SphereRule};
use crate::spectral::fourier_energy;

/// Heights below `NEAR_FIELD * h` use the subtracted formula.
const NEAR_FIELD: f64 = 6.0;
/// Half-width in cells of the window of [`PoissonKernel::lattice_defect`].
const WINDOW: usize = 4;

/// `P_sigma(x, t) = beta t^{2 sigma} (|x|^2 + t^2)^{-(n + 2 sigma)/2}`.
#[derive(Debug, Clone)]
pub struct PoissonKernel {
    pub p: FracParams,
    pub beta: f64,
    rule: SphereRule,
}

impl PoissonKernel {
    pub fn new(p: FracParams) -> Result<Self> {
        if p.n > 3 {
            return Err(Error::InvalidParams(format!(
                "extension implemented for n <= 3, got n = {}",
                p.n
            )));
        }
        let res = if p.n == 3 { 32 } else { 128 };
        Ok(Self {
            p,
            beta: poisson_beta(p.n, p.sigma)?,
            rule: SphereRule::new(p.n, res)?,
        })
    }

    /// Kernel at squared horizontal distance `r2`.
    pub fn at_r2(&self, r2: f64, t: f64) -> f64 {
        let s = self.p.sigma;
        self.beta * t.powf(2.0 * s) * (r2 + t * t).powf(-0.5 * (self.p.nf() + 2.0 * s))
    }

    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        self.at_r2(x.iter().map(|v| v * v).sum(), t)
    }

    /// Kernel mass outside the ball of radius `rho`, per unit solid angle
    /// and divided by `beta`: `int_{rho/t}^inf s^{n-1} (1+s^2)^{-(n+2 sigma)/2} ds`.
    pub fn radial_tail(&self, rho: f64, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let s = self.p.sigma;
        let e = 0.5 * (self.p.nf() + 2.0 * s);
        let u = rho / t;
        let rule = gauss_legendre(24);
        if u <= 1.0 {
            // full integral minus the smooth part on [0, u]
            let nh = 0.5 * self.p.nf();
            let full = 0.5 * statrs::function::gamma::gamma(nh) * statrs::function::gamma::gamma(s)
                / statrs::function::gamma::gamma(nh + s);
            let head: f64 = rule
                .nodes
                .iter()
                .zip(&rule.weights)
                .map(|(&x, &w)| {
                    let r = 0.5 * u * (1.0 + x);
                    0.5 * u * w * r.powf(self.p.nf() - 1.0) * (1.0 + r * r).powf(-e)
                })
                .sum();
            return full - head;
        }
        let lead = u.powf(-2.0 * s) / (2.0 * s);
        if u > 40.0 {
            return lead * (1.0 - e * s / (1.0 + s) / (u * u));
        }
        // substitution s = u v^{-1/(2 sigma)}
        let mut acc = 0.0;
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            let v = 0.5 * (1.0 + x);
            acc += 0.5 * w * (1.0 + v.powf(1.0 / s) / (u * u)).powf(-e);
        }
        lead * acc
    }

    /// Per axis `d`, `int_W P(z, t) z_d^2 dz` minus its lattice sum over the
    /// cube window `W` of `2 WINDOW + 1` cells per axis. This is what the
    /// trapezoid sum misses of the quadratic part of `f(y) - f(x)`.
    pub fn lattice_defect(&self, h: &[f64], t: f64) -> Vec<f64> {
        let n = h.len();
        let half: Vec<f64> = h.iter().map(|v| (WINDOW as f64 + 0.5) * v).collect();
        let rule = gauss_legendre(8);
        let e = 0.5 * (self.p.nf() + 2.0 * self.p.sigma);
        let ts = t.powf(2.0 * self.p.sigma);
        let mut exact = vec![0.0; n];
        for (dir, &w) in self.rule.dirs.iter().zip(&self.rule.weights) {
            let rho = (0..n)
                .filter(|&d| dir[d] != 0.0)
                .map(|d| half[d] / dir[d].abs())
                .fold(f64::INFINITY, f64::min);
            // geometric panels towards r = 0
            let mut radial = 0.0;
            let mut hi = rho;
            for _ in 0..40 {
                let lo = 0.5 * hi;
                let c = 0.5 * (hi - lo);
                for (&x, &gw) in rule.nodes.iter().zip(&rule.weights) {
                    let r = lo + c * (1.0 + x);
                    radial += c * gw * r.powf(self.p.nf() + 1.0) * (r * r + t * t).powf(-e);
                }
                hi = lo;
            }
            for d in 0..n {
                exact[d] += w * dir[d] * dir[d] * radial;
            }
        }
        let cell: f64 = h.iter().product();
        let side = 2 * WINDOW + 1;
        let mut lattice = vec![0.0; n];
        let mut z = vec![0.0; n];
        for idx in 0..side.pow(n as u32) {
            let mut rem = idx;
            for d in 0..n {
                z[d] = ((rem % side) as f64 - WINDOW as f64) * h[d];
                rem /= side;
            }
            let k = self.value(&z, t);
            for d in 0..n {
                lattice[d] += cell * k * z[d] * z[d];
            }
        }
        (0..n)
            .map(|d| self.beta * ts * exact[d] - lattice[d])
            .collect()
    }

    /// `int_box P(x - y, t) dy` for `x` inside the box.
    pub fn box_mass(&self, x: &[f64], lower: &[f64], upper: &[f64], t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        let mut out = 0.0;
        for (dir, &w) in self.rule.dirs.iter().zip(&self.rule.weights) {
            let mut rho = f64::INFINITY;
            for d in 0..x.len() {
                let step = if dir[d] > 0.0 {
                    (upper[d] - x[d]) / dir[d]
                } else if dir[d] < 0.0 {
                    (lower[d] - x[d]) / dir[d]
                } else {
                    f64::INFINITY
                };
                rho = rho.min(step.max(0.0));
            }
            out += w * self.radial_tail(rho, t);
        }
        1.0 - self.beta * out
    }
}

/// Pads a shape to three axes.
fn shape3(shape: &[usize]) -> [usize; 3] {
    let mut s = [1; 3];
    let off = 3 - shape.len();
    s[off..].copy_from_slice(shape);
    s
}

/// `out_i = sum_a table[a - i] src_a` on a grid of shape `s`, where `table`
/// holds offsets `-(s_d - 1)..=(s_d - 1)` per axis.
fn correlate(src: &[f64], s: [usize; 3], table: &[f64]) -> Vec<f64> {
    let t1 = 2 * s[1] - 1;
    let t2 = 2 * s[2] - 1;
    let mut out = vec![0.0; src.len()];
    for i0 in 0..s[0] {
        for i1 in 0..s[1] {
            for i2 in 0..s[2] {
                let mut acc = 0.0;
                for a0 in 0..s[0] {
                    let o0 = a0 + s[0] - 1 - i0;
                    for a1 in 0..s[1] {
                        let o1 = a1 + s[1] - 1 - i1;
                        let row = &src[(a0 * s[1] + a1) * s[2]..(a0 * s[1] + a1 + 1) * s[2]];
                        let start = (o0 * t1 + o1) * t2 + s[2] - 1 - i2;
                        let krow = &table[start..start + s[2]];
                        acc += row.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                out[(i0 * s[1] + i1) * s[2] + i2] = acc;
            }
        }
    }
    out
}

fn kernel_table(kernel: &PoissonKernel, grid: &Grid, t: f64) -> Vec<f64> {
    let s = shape3(&grid.shape);
    let off = 3 - grid.dim();
    let mut h = [0.0; 3];
    h[off..].copy_from_slice(&grid.h);
    let dims = [2 * s[0] - 1, 2 * s[1] - 1, 2 * s[2] - 1];
    let mut table = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for a in 0..dims[0] {
        let z0 = (a as f64 - (s[0] - 1) as f64) * h[0];
        for b in 0..dims[1] {
            let z1 = (b as f64 - (s[1] - 1) as f64) * h[1];
            for c in 0..dims[2] {
                let z2 = (c as f64 - (s[2] - 1) as f64) * h[2];
                table.push(kernel.at_r2(z0 * z0 + z1 * z1 + z2 * z2, t));
            }
        }
    }
    table
}

fn zero_ring(f: &GridFn) -> GridFn {
    let mut g = f.clone();
    for i in 0..g.grid.len() {
        if g.grid.on_boundary(i) {
            g.values[i] = 0.0;
        }
    }
    g
}

fn check_target(x: &[f64], n: usize) -> Result<()> {
    if x.len() != n + 1 {
        return Err(Error::InvalidParams(format!(
            "half-space target needs {} coordinates, got {}",
            n + 1,
            x.len()
        )));
    }
    if !(x[n] >= 0.0) {
        return Err(Error::OutsideDomain(format!("target below the boundary: t = {}", x[n])));
    }
    Ok(())
}

/// `1/2 sum_d defect_d d_dd f(x_i)` by central differences; zero on the
/// boundary ring.
fn quadratic_correction(f: &GridFn, i: usize, defect: &[f64]) -> f64 {
    let g = &f.grid;
    if g.on_boundary(i) {
        return 0.0;
    }
    let st = g.strides();
    let fi = f.values[i];
    (0..g.dim())
        .map(|d| {
            let dd = (f.values[i + st[d]] - 2.0 * fi + f.values[i - st[d]]) / (g.h[d] * g.h[d]);
            0.5 * defect[d] * dd
        })
        .sum()
}

/// Extension of data on `grid` at node `i`, height `t > 0`.
fn node_value(kernel: &PoissonKernel, f: &GridFn, w: &[f64], i: usize, t: f64) -> f64 {
    let g = &f.grid;
    let x = g.point(i);
    let mut direct = 0.0;
    let mut mass = 0.0;
    let mut y = vec![0.0; x.len()];
    let near = t < NEAR_FIELD * g.max_h();
    for j in 0..g.len() {
        // the self term cancels in the subtracted formula
        if near && j == i {
            continue;
        }
        let m = g.multi_index(j);
        for (d, yd) in y.iter_mut().enumerate() {
            *yd = x[d] - g.coord(d, m[d]);
        }
        let k = w[j] * kernel.value(&y, t);
        direct += k * f.values[j];
        mass += k;
    }
    if near && f.values[i] != 0.0 {
        let defect = kernel.lattice_defect(&g.h, t);
        direct
            + f.values[i] * (kernel.box_mass(&x, &g.lower, &g.upper, t) - mass)
            + quadratic_correction(f, i, &defect)
    } else {
        direct
    }
}

fn extend_impl(f: &GridFn, p: &FracParams, targets: &[Vec<f64>]) -> Result<Vec<f64>> {
    let kernel = PoissonKernel::new(*p)?;
    let g = &f.grid;
    if g.dim() != p.n {
        return Err(Error::InvalidParams("data grid dimension differs from n".into()));
    }
    let w = g.trap_weights();
    let n = p.n;
    let mut out = Vec::with_capacity(targets.len());
    for x in targets {
        check_target(x, n)?;
        let t = x[n];
        let xs = &x[..n];
        if t == 0.0 {
            out.push(f.interpolate(xs).unwrap_or(0.0));
            continue;
        }
        if t >= NEAR_FIELD * g.max_h() || !g.contains(xs) {
            let mut acc = 0.0;
            let mut y = vec![0.0; n];
            for j in 0..g.len() {
                if f.values[j] == 0.0 {
                    continue;
                }
                let m = g.multi_index(j);
                for d in 0..n {
                    y[d] = xs[d] - g.coord(d, m[d]);
                }
                acc += w[j] * f.values[j] * kernel.value(&y, t);
            }
            out.push(acc);
            continue;
        }
        // near the boundary: multilinear blend of the surrounding node values
        let mut base = vec![0usize; n];
        let mut frac = vec![0.0; n];
        for d in 0..n {
            let s = ((xs[d] - g.lower[d]) / g.h[d]).clamp(0.0, (g.shape[d] - 1) as f64);
            let mut i = s.round() as usize;
            if (s - i as f64).abs() > 1e-9 {
                i = (s.floor() as usize).min(g.shape[d] - 2);
            }
            base[d] = i.min(g.shape[d] - 1);
            frac[d] = if (s - i as f64).abs() <= 1e-9 { 0.0 } else { s - i as f64 };
        }
        let strides = g.strides();
        let origin: usize = base.iter().zip(&strides).map(|(a, b)| a * b).sum();
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut wt = 1.0;
            let mut off = 0;
            for d in 0..n {
                if corner >> d & 1 == 1 {
                    wt *= frac[d];
                    off += strides[d];
                } else {
                    wt *= 1.0 - frac[d];
                }
            }
            if wt != 0.0 {
                acc += wt * node_value(&kernel, f, &w, origin + off, t);
            }
        }
        out.push(acc);
    }
    Ok(out)
}

/// Poisson extension of `f` at half-space points `(x, t)` (each of length
/// `n + 1`). The data are set to zero on the boundary ring of their box.
pub fn extend(f: &GridFn, p: &FracParams, targets: &[Vec<f64>]) -> Result<Vec<f64>> {
    extend_impl(&zero_ring(f), p, targets)
}

/// [`extend`] without zeroing the boundary ring: the data are a patch and
/// the integral is over the box only (used for normalization checks).
pub fn extend_unchecked(f: &GridFn, p: &FracParams, targets: &[Vec<f64>]) -> Result<Vec<f64>> {
    extend_impl(f, p, targets)
}

/// Extension sampled on the half-grid `f.grid x t`, one kernel table per
/// layer.
pub fn extend_to_half_grid(f: &GridFn, p: &FracParams, t: &[f64]) -> Result<HalfGridFn> {
    let f = zero_ring(f);
    let g = &f.grid;
    if g.dim() != p.n {
        return Err(Error::InvalidParams("data grid dimension differs from n".into()));
    }
    if t.first() != Some(&0.0) {
        return Err(Error::InvalidParams("t nodes must start at 0".into()));
    }
    HalfGridFn::new(g.clone(), t.to_vec(), vec![0.0; g.len() * t.len()])?;
    let kernel = PoissonKernel::new(*p)?;
    let s = shape3(&g.shape);
    let w = g.trap_weights();
    let fw: Vec<f64> = f.values.iter().zip(&w).map(|(a, b)| a * b).collect();
    let pts = g.points();
    let mut values = Vec::with_capacity(g.len() * t.len());
    values.extend_from_slice(&f.values);
    for &tj in &t[1..] {
        let near = tj < NEAR_FIELD * g.max_h();
        let mut table = kernel_table(&kernel, g, tj);
        if near {
            // drop the self term, which cancels in the subtracted formula
            let centre = ((s[0] - 1) * (2 * s[1] - 1) + s[1] - 1) * (2 * s[2] - 1) + s[2] - 1;
            table[centre] = 0.0;
        }
        let direct = correlate(&fw, s, &table);
        if near {
            let mass = correlate(&w, s, &table);
            let defect = kernel.lattice_defect(&g.h, tj);
            for i in 0..g.len() {
                let fi = f.values[i];
                let corr = if fi == 0.0 {
                    0.0
                } else {
                    fi * (kernel.box_mass(&pts[i], &g.lower, &g.upper, tj) - mass[i])
                        + quadratic_correction(&f, i, &defect)
                };
                values.push(direct[i] + corr);
            }
        } else {
            values.extend_from_slice(&direct);
        }
    }
    HalfGridFn::new(g.clone(), t.to_vec(), values)
}

/// Extension on an arbitrary regular `base` grid at heights `t`. Uses the
/// layer tables when `base` is the data grid.
pub fn extend_on(f: &GridFn, p: &FracParams, base: &Grid, t: &[f64]) -> Result<HalfGridFn> {
    if *base == f.grid {
        return extend_to_half_grid(f, p, t);
    }
    let pts = base.points();
    let targets: Vec<Vec<f64>> = t
        .iter()
        .flat_map(|&tj| {
            pts.iter().map(move |x| {
                let mut y = x.clone();
                y.push(tj);
                y
            })
        })
        .collect();
    let values = extend(f, p, &targets)?;
    HalfGridFn::new(base.clone(), t.to_vec(), values)
}

/// Half-space mesh used by the energy identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyConfig {
    /// Height `T` of the half-box.
    pub height: f64,
    /// Number of graded t-cells.
    pub layers: usize,
    /// Zero padding of the Fourier side.
    pub pad: usize,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            height: 6.0,
            layers: 32,
            pad: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyCheck {
    /// Weighted Dirichlet energy of the sampled extension.
    pub lhs: f64,
    /// `N(sigma)` times the Fourier energy of the data.
    pub rhs: f64,
    pub relerr: f64,
    /// Same energy with half as many t-cells.
    pub lhs_coarse: f64,
    /// Set when halving the t-mesh moves the energy by more than 2%.
    pub warning: Option<String>,
}

/// Compares `int t^{1-2 sigma} |grad F|^2` with `N(sigma) int |xi|^{2 sigma} |f^|^2`.
pub fn energy_identity_check(f: &GridFn, p: &FracParams, cfg: &EnergyConfig) -> Result<EnergyCheck> {
    let f = zero_ring(f);
    let gamma = grading_exponent(p.sigma);
    let t = graded_heights(cfg.height, cfg.layers, p.sigma, gamma)?;
    let lhs = weighted_energy(&extend_to_half_grid(&f, p, &t)?, p.sigma);
    let tc = graded_heights(cfg.height, (cfg.layers / 2).max(2), p.sigma, gamma)?;
    let lhs_coarse = weighted_energy(&extend_to_half_grid(&f, p, &tc)?, p.sigma);
    let rhs = extension_normalizer(p.sigma)?
        * fourier_energy(&f.values, &f.grid.shape, &f.grid.h, p.sigma, cfg.pad)?;
    let change = (lhs - lhs_coarse).abs() / lhs.abs().max(f64::MIN_POSITIVE);
    let warning = (change > 0.02).then(|| {
        format!("weighted energy moved {:.2}% when the t-mesh was halved", 100.0 * change)
    });
    Ok(EnergyCheck {
        lhs,
        rhs,
        relerr: (lhs - rhs).abs() / rhs.abs(),
        lhs_coarse,
        warning,
    })
}

/// One refinement level of an energy study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyLevel {
    pub spacing: f64,
    pub layers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyStudy {
    pub levels: Vec<EnergyLevel>,
    pub checks: Vec<EnergyCheck>,
    /// Relative errors strictly decrease along the levels.
    pub monotone: bool,
}

/// Energy identity for `u` sampled on `[-L, L]^n` at each level.
pub fn energy_identity_study(
    u: &dyn Fn(&[f64]) -> f64,
    p: &FracParams,
    half_width: f64,
    levels: &[EnergyLevel],
    height: f64,
    pad: usize,
) -> Result<EnergyStudy> {
    let mut checks = Vec::with_capacity(levels.len());
    for lv in levels {
        let grid = Grid::cube(p.n, half_width, lv.spacing)?;
        let f = GridFn::from_fn(grid, u);
        let cfg = EnergyConfig {
            height,
            layers: lv.layers,
            pad,
        };
        checks.push(energy_identity_check(&f, p, &cfg)?);
    }
    let monotone = checks.windows(2).all(|c| c[1].relerr < c[0].relerr);
    Ok(EnergyStudy {
        levels: levels.to_vec(),
        checks,
        monotone,
    })
}

/// `-lim t^{1-2 sigma} d_t F` from a least-squares fit of the first three
/// layers to `a + b t^{2 sigma}`; returns `-2 sigma b` per base node, so
/// `F = t^{2 sigma}` gives exactly `-2 sigma`.
pub fn neumann_trace(f: &HalfGridFn, sigma: f64) -> Result<GridFn> {
    if f.nt() < 3 {
        return Err(Error::MeshTooCoarse("the trace fit needs three t-layers".into()));
    }
    let s: Vec<f64> = f.t[..3].iter().map(|t| t.powf(2.0 * sigma)).collect();
    let mean = s.iter().sum::<f64>() / 3.0;
    let var: f64 = s.iter().map(|v| (v - mean) * (v - mean)).sum();
    // condition number of the normal matrix of the rescaled design [1, s / s_2]
    let a = 3.0;
    let b: f64 = s.iter().map(|v| v / s[2]).sum();
    let c: f64 = s.iter().map(|v| (v / s[2]).powi(2)).sum();
    let tr = a + c;
    let disc = ((a - c) * (a - c) + 4.0 * b * b).sqrt();
    let cond = (tr + disc) / (tr - disc).max(f64::MIN_POSITIVE);
    if !(var > 0.0) || cond > 1e12 {
        return Err(Error::MeshTooCoarse(format!(
            "trace fit ill-conditioned (condition {cond:.2e}); first layers at {:?}",
            &f.t[..3]
        )));
    }
    let values = (0..f.nx())
        .map(|i| {
            let fm = (0..3).map(|j| f.get(i, j)).sum::<f64>() / 3.0;
            let slope: f64 = (0..3).map(|j| (s[j] - mean) * (f.get(i, j) - fm)).sum::<f64>() / var;
            -2.0 * sigma * slope
        })
        .collect();
    GridFn::new(f.base.clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(x: &[f64]) -> f64 {
        (-0.5 * x.iter().map(|v| v * v).sum::<f64>()).exp()
    }

    #[test]
    fn box_mass_tends_to_one_and_matches_a_lattice_sum() {
        let p = FracParams::linear(2, 0.5).unwrap();
        let k = PoissonKernel::new(p).unwrap();
        let lo = [-1.0, -1.0];
        let hi = [1.0, 1.0];
        assert!((k.box_mass(&[0.0, 0.0], &lo, &hi, 1e-6) - 1.0).abs() < 1e-5);
        // brute-force midpoint sum at t = 0.5
        let m = 800;
        let h = 2.0 / m as f64;
        let mut acc = 0.0;
        for i in 0..m {
            for j in 0..m {
                let x = -1.0 + (i as f64 + 0.5) * h - 0.3;
                let y = -1.0 + (j as f64 + 0.5) * h;
                acc += h * h * k.value(&[x, y], 0.5);
            }
        }
        let got = k.box_mass(&[0.3, 0.0], &lo, &hi, 0.5);
        assert!((got - acc).abs() < 2e-3, "{got} vs {acc}");
    }

    #[test]
    fn radial_tail_matches_direct_quadrature() {
        let p = FracParams::linear(3, 0.3).unwrap();
        let k = PoissonKernel::new(p).unwrap();
        for u in [0.0f64, 0.5, 3.0, 60.0] {
            let e = 0.5 * (3.0 + 0.6);
            // s = e^tau
            let a = u.max(1e-12).ln();
            let breaks: Vec<f64> = (0..=80).map(|i| a + i as f64).collect();
            let direct = crate::quad::integrate_composite(
                |tau: f64| {
                    let s = tau.exp();
                    s.powi(3) * (1.0 + s * s).powf(-e)
                },
                &breaks,
                20,
            );
            let got = k.radial_tail(u, 1.0);
            assert!((got - direct).abs() < 1e-6 * direct, "u={u}: {got} vs {direct}");
        }
    }

    #[test]
    fn constant_patch_is_reproduced_at_small_heights() {
        let p = FracParams::linear(2, 0.4).unwrap();
        let grid = Grid::cube(2, 2.0, 0.1).unwrap();
        let one = GridFn::from_fn(grid, |_| 1.0);
        let vals = extend_unchecked(&one, &p, &[vec![0.0, 0.0, 1e-3], vec![0.05, 0.0, 1e-3]]).unwrap();
        // the box misses the slowly decaying tail: compare with the box mass
        let k = PoissonKernel::new(p).unwrap();
        let m0 = k.box_mass(&[0.0, 0.0], &[-2.0; 2], &[2.0; 2], 1e-3);
        assert!((vals[0] - m0).abs() < 1e-12, "{} vs {m0}", vals[0]);
        assert!((vals[1] - m0).abs() < 1e-5, "{} vs {m0}", vals[1]);
        assert!(m0 < 1.0 && m0 > 0.99);
        let tiny = extend_unchecked(&one, &p, &[vec![0.0, 0.0, 1e-9]]).unwrap()[0];
        assert!((tiny - 1.0).abs() < 1e-6, "{tiny}");
    }

    #[test]
    fn half_grid_agrees_with_pointwise_extension() {
        let p = FracParams::linear(2, 0.5).unwrap();
        let grid = Grid::cube(2, 3.0, 0.25).unwrap();
        let f = GridFn::from_fn(grid.clone(), gaussian);
        let t = [0.0, 0.01, 0.3, 2.0];
        let half = extend_to_half_grid(&f, &p, &t).unwrap();
        for &i in &[0usize, 60, 312, 400] {
            for (j, &tj) in t.iter().enumerate() {
                let mut x = grid.point(i);
                x.push(tj);
                let v = extend(&f, &p, &[x]).unwrap()[0];
                assert!((v - half.get(i, j)).abs() < 1e-12, "{v} vs {}", half.get(i, j));
            }
        }
    }

    #[test]
    fn trace_of_t_power_is_exact() {
        let sigma = 0.3;
        let grid = Grid::cube(2, 1.0, 0.5).unwrap();
        let t = graded_heights(1.0, 8, sigma, grading_exponent(sigma)).unwrap();
        let f = HalfGridFn::from_fn(grid.clone(), t.clone(), |_, t| t.powf(2.0 * sigma)).unwrap();
        let tr = neumann_trace(&f, sigma).unwrap();
        assert!(tr.values.iter().all(|v| (v + 2.0 * sigma).abs() < 1e-12));
        let flat = HalfGridFn::from_fn(grid, t, |x, _| x[0] + 2.0).unwrap();
        assert!(neumann_trace(&flat, sigma).unwrap().values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn negative_height_is_rejected() {
        let p = FracParams::linear(1, 0.5).unwrap();
        let f = GridFn::from_fn(Grid::cube(1, 1.0, 0.1).unwrap(), |_| 1.0);
        assert!(extend(&f, &p, &[vec![0.0, -0.1]]).is_err());
    }
}
