//! Finite-volume solver for `div(t^{1-2 sigma} grad U) = 0` on a half-box
//! (optionally masked to a half-ball) with Dirichlet data on the top, sides
//! and outside the mask, and Neumann, semilinear or Dirichlet data on the
//! flat boundary.
//!
//! The link conductances come from [`for_each_link`]; they integrate the
//! weight exactly across every face and make `1` and `t^{2 sigma}` discrete
//! solutions. On the flat boundary the row of node `i` reads
//! `sum_links kappa (U_i - U_nb) = g_i w_i` with `w_i` the trapezoid weight
//! and `g = -lim t^{1-2 sigma} d_t U`, so `U = t^{2 sigma}` carries `g = -2 sigma`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{for_each_link, weighted_energy, Grid, HalfGridFn, SingularSet};

pub type FieldFn = Box<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
pub type TraceFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Condition on the flat boundary `t = 0` away from the excluded set.
pub enum FlatData {
    /// `-lim t^{1-2 sigma} d_t U = g(x)`.
    Neumann(TraceFn),
    /// `-lim t^{1-2 sigma} d_t U = U^{(n+2 sigma)/(n-2 sigma)}`.
    Semilinear,
}

/// How the lattice nodes of the excluded set enter the system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ExcludedRule {
    /// Zero flux: the boundary equation is dropped on the set.
    OmitSource,
    /// Fixed value on the set (capacitary potentials).
    Dirichlet(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Domain {
    HalfBox,
    /// Nodes with `|(x, t)| > radius` carry Dirichlet data.
    HalfBall { radius: f64 },
}

pub struct MixedBVP {
    pub base: Grid,
    pub t: Vec<f64>,
    pub sigma: f64,
    /// Values on the top, the sides and outside the mask.
    pub dirichlet: FieldFn,
    pub flat: FlatData,
    pub excluded: SingularSet,
    pub excluded_rule: ExcludedRule,
    pub domain: Domain,
}

impl MixedBVP {
    /// Half-box problem with Neumann data and no excluded set.
    pub fn neumann(base: Grid, t: Vec<f64>, sigma: f64, dirichlet: FieldFn, g: TraceFn) -> Self {
        let n = base.dim();
        Self {
            base,
            t,
            sigma,
            dirichlet,
            flat: FlatData::Neumann(g),
            excluded: SingularSet::empty(n),
            excluded_rule: ExcludedRule::OmitSource,
            domain: Domain::HalfBox,
        }
    }

    pub fn nx(&self) -> usize {
        self.base.len()
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::InvalidParams(format!("sigma out of (0,1): {}", self.sigma)));
        }
        if self.excluded.n != self.base.dim() && !self.excluded.is_empty() {
            return Err(Error::InvalidParams("excluded set lives in another dimension".into()));
        }
        check_grading(&self.t, self.sigma)?;
        if let Domain::HalfBall { radius } = self.domain {
            if !(radius > 0.0) {
                return Err(Error::InvalidParams("mask radius must be positive".into()));
            }
        }
        Ok(())
    }

    /// `true` where the node value is prescribed.
    fn fixed_mask(&self) -> Vec<bool> {
        let nx = self.nx();
        let nt = self.t.len();
        let lam = match self.excluded_rule {
            ExcludedRule::Dirichlet(_) => self.excluded.node_mask(&self.base),
            ExcludedRule::OmitSource => vec![false; nx],
        };
        let mut out = vec![false; nx * nt];
        for j in 0..nt {
            for i in 0..nx {
                let x = self.base.point(i);
                let mut fixed = j + 1 == nt || self.base.on_boundary(i);
                if let Domain::HalfBall { radius } = self.domain {
                    let r2: f64 = x.iter().map(|v| v * v).sum::<f64>() + self.t[j] * self.t[j];
                    fixed |= r2 > radius * radius * (1.0 + 1e-12);
                }
                if j == 0 && lam[i] {
                    fixed = true;
                }
                out[j * nx + i] = fixed;
            }
        }
        out
    }

    fn fixed_value(&self, node: usize, lam: &[bool]) -> f64 {
        let nx = self.nx();
        let (i, j) = (node % nx, node / nx);
        if j == 0 && lam[i] {
            if let ExcludedRule::Dirichlet(v) = self.excluded_rule {
                return v;
            }
        }
        (self.dirichlet)(&self.base.point(i), self.t[j])
    }
}

/// The first layers must follow `t_j ~ (j/M)^gamma` with
/// `gamma >= 1/(2 - 2 sigma)`.
fn check_grading(t: &[f64], sigma: f64) -> Result<()> {
    if t.len() < 3 || t[0] != 0.0 || t.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::MeshTooCoarse(
            "need at least three strictly increasing heights starting at 0".into(),
        ));
    }
    let gamma = (t[2] / t[1]).ln() / 2f64.ln();
    let need = 1.0 / (2.0 - 2.0 * sigma);
    if gamma < need - 1e-9 {
        return Err(Error::MeshTooCoarse(format!(
            "first layers graded with exponent {gamma:.3}, need >= {need:.3}"
        )));
    }
    Ok(())
}

/// Symmetric system in compressed-row form over the free nodes.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub base: Grid,
    pub t: Vec<f64>,
    pub sigma: f64,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    pub rhs: Vec<f64>,
    /// Node of every unknown.
    pub node_of: Vec<usize>,
    /// Unknown of every node, `None` when prescribed.
    pub unknown_of: Vec<Option<usize>>,
    /// Full field with the prescribed values filled in.
    pub fixed: Vec<f64>,
}

impl SparseSystem {
    pub fn len(&self) -> usize {
        self.node_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_of.is_empty()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *yr = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.len())
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .find(|&k| self.cols[k] == r)
                    .map_or(0.0, |k| self.vals[k])
            })
            .collect()
    }

    /// Largest relative asymmetry `|a_ij - a_ji| / max|a|`.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for r in 0..self.len() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.cols[k];
                let back = (self.row_ptr[c]..self.row_ptr[c + 1])
                    .find(|&m| self.cols[m] == r)
                    .map_or(0.0, |m| self.vals[m]);
                worst = worst.max((self.vals[k] - back).abs() / scale);
            }
        }
        worst
    }

    /// The same system with unknown `r` renamed `perm[r]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let m = self.len();
        if perm.len() != m {
            return Err(Error::InvalidParams("permutation length mismatch".into()));
        }
        let mut inv = vec![usize::MAX; m];
        for (r, &p) in perm.iter().enumerate() {
            if p >= m || inv[p] != usize::MAX {
                return Err(Error::InvalidParams("not a permutation".into()));
            }
            inv[p] = r;
        }
        let mut row_ptr = vec![0];
        let mut cols = Vec::with_capacity(self.cols.len());
        let mut vals = Vec::with_capacity(self.vals.len());
        for &old in &inv {
            let mut row: Vec<(usize, f64)> = (self.row_ptr[old]..self.row_ptr[old + 1])
                .map(|k| (perm[self.cols[k]], self.vals[k]))
                .collect();
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        let node_of: Vec<usize> = inv.iter().map(|&old| self.node_of[old]).collect();
        let mut unknown_of = vec![None; self.unknown_of.len()];
        for (r, &node) in node_of.iter().enumerate() {
            unknown_of[node] = Some(r);
        }
        Ok(Self {
            base: self.base.clone(),
            t: self.t.clone(),
            sigma: self.sigma,
            row_ptr,
            cols,
            vals,
            rhs: inv.iter().map(|&old| self.rhs[old]).collect(),
            node_of,
            unknown_of,
            fixed: self.fixed.clone(),
        })
    }

    /// Field with the unknowns `x` inserted.
    pub fn field(&self, x: &[f64]) -> Result<HalfGridFn> {
        let mut values = self.fixed.clone();
        for (r, &node) in self.node_of.iter().enumerate() {
            values[node] = x[r];
        }
        HalfGridFn::new(self.base.clone(), self.t.clone(), values)
    }

    /// Unknowns read off a full field.
    pub fn unknowns(&self, u: &HalfGridFn) -> Vec<f64> {
        self.node_of.iter().map(|&node| u.values[node]).collect()
    }

    /// `max_r |(A x - b)_r| / max(|b|_inf, |A x|_inf)`: the flux imbalance
    /// of every free control volume.
    pub fn flux_residual(&self, u: &HalfGridFn) -> f64 {
        let x = self.unknowns(u);
        let mut ax = vec![0.0; x.len()];
        self.matvec(&x, &mut ax);
        let scale = ax
            .iter()
            .chain(&self.rhs)
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        ax.iter()
            .zip(&self.rhs)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            / scale
    }
}

/// Assembles the linear problem; a semilinear flat condition is treated as
/// zero flux here.
pub fn assemble(bvp: &MixedBVP) -> Result<SparseSystem> {
    assemble_with(bvp, None)
}

/// `robin[i]` adds `-robin_i w_i U_i` to the flat row of base node `i`.
fn assemble_with(bvp: &MixedBVP, robin: Option<&[f64]>) -> Result<SparseSystem> {
    bvp.validate()?;
    let nx = bvp.nx();
    let nt = bvp.t.len();
    let total = nx * nt;
    let fixed_mask = bvp.fixed_mask();
    let lam = bvp.excluded.node_mask(&bvp.base);
    let mut fixed = vec![0.0; total];
    let mut unknown_of = vec![None; total];
    let mut node_of = Vec::new();
    for node in 0..total {
        if fixed_mask[node] {
            fixed[node] = bvp.fixed_value(node, &lam);
            if !fixed[node].is_finite() {
                return Err(Error::InvalidParams(format!(
                    "non-finite Dirichlet value at node {node}"
                )));
            }
        } else {
            unknown_of[node] = Some(node_of.len());
            node_of.push(node);
        }
    }
    let m = node_of.len();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(2 * bvp.base.dim() + 3); m];
    let mut rhs = vec![0.0; m];
    let add = |rows: &mut Vec<Vec<(usize, f64)>>, r: usize, c: usize, v: f64| {
        if let Some(e) = rows[r].iter_mut().find(|e| e.0 == c) {
            e.1 += v;
        } else {
            rows[r].push((c, v));
        }
    };
    for_each_link(&bvp.base, &bvp.t, bvp.sigma, |a, b, k| {
        match (unknown_of[a], unknown_of[b]) {
            (Some(ra), Some(rb)) => {
                add(&mut rows, ra, ra, k);
                add(&mut rows, rb, rb, k);
                add(&mut rows, ra, rb, -k);
                add(&mut rows, rb, ra, -k);
            }
            (Some(ra), None) => {
                add(&mut rows, ra, ra, k);
                rhs[ra] += k * fixed[b];
            }
            (None, Some(rb)) => {
                add(&mut rows, rb, rb, k);
                rhs[rb] += k * fixed[a];
            }
            (None, None) => {}
        }
    });
    let trap = bvp.base.trap_weights();
    for i in 0..nx {
        let Some(r) = unknown_of[i] else { continue };
        if lam[i] {
            continue;
        }
        match &bvp.flat {
            FlatData::Neumann(g) => rhs[r] += g(&bvp.base.point(i)) * trap[i],
            FlatData::Semilinear => {
                if let Some(a) = robin {
                    add(&mut rows, r, r, -a[i] * trap[i]);
                }
            }
        }
    }
    let mut row_ptr = Vec::with_capacity(m + 1);
    row_ptr.push(0);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for mut row in rows {
        row.sort_by_key(|e| e.0);
        for (c, v) in row {
            cols.push(c);
            vals.push(v);
        }
        row_ptr.push(cols.len());
    }
    Ok(SparseSystem {
        base: bvp.base.clone(),
        t: bvp.t.clone(),
        sigma: bvp.sigma,
        row_ptr,
        cols,
        vals,
        rhs,
        node_of,
        unknown_of,
        fixed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveStats {
    pub unknowns: usize,
    pub iterations: usize,
    pub residual: f64,
    /// Relative residual every 10 iterations.
    pub history: Vec<f64>,
}

pub const DEFAULT_TOL: f64 = 1e-9;
const MAX_CG: usize = 50_000;

/// Jacobi-preconditioned conjugate gradients to relative residual `tol`.
pub fn pcg(sys: &SparseSystem, tol: f64, x0: Option<&[f64]>) -> Result<(Vec<f64>, SolveStats)> {
    let m = sys.len();
    let mut x = x0.map_or_else(|| vec![0.0; m], |v| v.to_vec());
    let bnorm = sys.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut stats = SolveStats {
        unknowns: m,
        iterations: 0,
        residual: 0.0,
        history: Vec::new(),
    };
    if m == 0 || bnorm == 0.0 {
        return Ok((vec![0.0; m], stats));
    }
    let diag = sys.diagonal();
    if diag.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Indefinite(0));
    }
    let mut r = vec![0.0; m];
    sys.matvec(&x, &mut r);
    for (ri, bi) in r.iter_mut().zip(&sys.rhs) {
        *ri = bi - *ri;
    }
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; m];
    let mut res = r.iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm;
    while res > tol {
        if stats.iterations >= MAX_CG {
            return Err(Error::NoConvergence {
                iterations: stats.iterations,
                residual: res,
                history: stats.history,
            });
        }
        sys.matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::Indefinite(stats.iterations));
        }
        let alpha = rz / pap;
        for k in 0..m {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        for k in 0..m {
            z[k] = r[k] / diag[k];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..m {
            p[k] = z[k] + beta * p[k];
        }
        stats.iterations += 1;
        res = r.iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm;
        if stats.iterations.is_multiple_of(10) {
            stats.history.push(res);
        }
    }
    stats.residual = res;
    Ok((x, stats))
}

/// Solves the assembled system and returns the full field.
pub fn solve_linear(sys: &SparseSystem, tol: f64) -> Result<(HalfGridFn, SolveStats)> {
    let (x, stats) = pcg(sys, tol, None)?;
    Ok((sys.field(&x)?, stats))
}

/// Assemble and solve in one step.
pub fn solve_bvp(bvp: &MixedBVP, tol: f64) -> Result<(HalfGridFn, SolveStats)> {
    solve_linear(&assemble(bvp)?, tol)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemilinearReport {
    pub iterations: usize,
    pub converged: bool,
    /// Sup-norm change of the trace per iteration.
    pub history: Vec<f64>,
    /// Largest `|flux - U^p w|` on the flat rows, relative to the largest flux.
    pub residual: f64,
    /// Iterations where the Robin freeze lost definiteness and the
    /// nonlinearity was frozen as a source instead.
    pub explicit_steps: usize,
}

const MAX_PICARD: usize = 300;

/// Damped Picard iteration for the semilinear flat condition
/// `-lim t^{1-2 sigma} d_t U = U^p`, `p = (n+2 sigma)/(n-2 sigma)`.
///
/// Each step freezes `U^p = a U` with `a = U_prev^{p-1}`, solves, and
/// averages with the previous iterate. Stops when the trace moves less than
/// `tol` in sup-norm; a trace growing tenfold is reported as divergence.
pub fn solve_semilinear(bvp: &MixedBVP, tol: f64) -> Result<(HalfGridFn, SemilinearReport)> {
    if !matches!(bvp.flat, FlatData::Semilinear) {
        return Err(Error::InvalidParams("flat condition is not semilinear".into()));
    }
    let n = bvp.base.dim() as f64;
    let pexp = (n + 2.0 * bvp.sigma) / (n - 2.0 * bvp.sigma);
    if !(n > 2.0 * bvp.sigma) {
        return Err(Error::InvalidParams("semilinear problem needs n > 2 sigma".into()));
    }
    let nx = bvp.nx();
    // initial iterate: harmonic-type extension of the data
    let lin = assemble_with(bvp, Some(&vec![0.0; nx]))?;
    if lin.fixed.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidParams("semilinear data must be nonnegative".into()));
    }
    let (x0, _) = pcg(&lin, 1e-11, None)?;
    let mut u = lin.field(&x0)?;
    let start = u.layer(0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut report = SemilinearReport {
        iterations: 0,
        converged: false,
        history: Vec::new(),
        residual: 0.0,
        explicit_steps: 0,
    };
    let lam = bvp.excluded.node_mask(&bvp.base);
    while report.iterations < MAX_PICARD {
        let a: Vec<f64> = (0..nx).map(|i| u.values[i].max(0.0).powf(pexp - 1.0)).collect();
        let step = {
            let sys = assemble_with(bvp, Some(&a))?;
            match pcg(&sys, 1e-11, Some(&sys.unknowns(&u))) {
            Ok((x, _)) => sys.field(&x)?,
            Err(Error::Indefinite(_)) | Err(Error::NoConvergence { .. }) => {
                report.explicit_steps += 1;
                explicit_step(bvp, &u, pexp, &lam)?
            }
            Err(e) => return Err(e),
        }
        };
        let mut change = 0.0f64;
        let mut next = u.values.clone();
        for (k, v) in next.iter_mut().enumerate() {
            let new = 0.5 * (*v + step.values[k]);
            if k < nx {
                change = change.max((new - *v).abs());
            }
            *v = new;
        }
        u = HalfGridFn::new(u.base.clone(), u.t.clone(), next)?;
        report.iterations += 1;
        report.history.push(change);
        let sup = u.layer(0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !sup.is_finite() || sup > 10.0 * start.max(f64::MIN_POSITIVE) {
            return Err(Error::Diverged(format!(
                "trace sup grew from {start:.3e} to {sup:.3e} after {} iterations",
                report.iterations
            )));
        }
        if change < tol {
            report.converged = true;
            break;
        }
    }
    if !report.converged {
        return Err(Error::NoConvergence {
            iterations: report.iterations,
            residual: report.history.last().copied().unwrap_or(f64::NAN),
            history: report.history,
        });
    }
    report.residual = semilinear_residual(bvp, &u, pexp, &lam)?;
    Ok((u, report))
}

/// Source-frozen step `L U = U_prev^p`.
fn explicit_step(bvp: &MixedBVP, u: &HalfGridFn, pexp: f64, lam: &[bool]) -> Result<HalfGridFn> {
    let mut sys = assemble_with(bvp, Some(&vec![0.0; bvp.nx()]))?;
    let trap = bvp.base.trap_weights();
    for i in 0..bvp.nx() {
        if let (Some(r), false) = (sys.unknown_of[i], lam[i]) {
            sys.rhs[r] += u.values[i].max(0.0).powf(pexp) * trap[i];
        }
    }
    let (x, _) = pcg(&sys, 1e-11, Some(&sys.unknowns(u)))?;
    sys.field(&x)
}

fn semilinear_residual(bvp: &MixedBVP, u: &HalfGridFn, pexp: f64, lam: &[bool]) -> Result<f64> {
    let nx = bvp.nx();
    let mut flux = vec![0.0; nx];
    for_each_link(&bvp.base, &bvp.t, bvp.sigma, |a, b, k| {
        let d = k * (u.values[a] - u.values[b]);
        if a < nx {
            flux[a] += d;
        }
        if b < nx {
            flux[b] -= d;
        }
    });
    let trap = bvp.base.trap_weights();
    let fixed = bvp.fixed_mask();
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..nx {
        if fixed[i] || lam[i] {
            continue;
        }
        let src = u.values[i].max(0.0).powf(pexp) * trap[i];
        worst = worst.max((flux[i] - src).abs());
        scale = scale.max(src.abs()).max(flux[i].abs());
    }
    Ok(if scale > 0.0 { worst / scale } else { 0.0 })
}

/// Discrete Dirichlet energy of a field on the solver lattice.
pub fn discrete_energy(u: &HalfGridFn, sigma: f64) -> f64 {
    weighted_energy(u, sigma)
}

fn node_radius(u: &HalfGridFn, node: usize) -> f64 {
    let nx = u.nx();
    let x = u.base.point(node % nx);
    let t = u.t[node / nx];
    (x.iter().map(|v| v * v).sum::<f64>() + t * t).sqrt()
}

/// `sup / inf` of `U` over the nodes of the closed half-ball of radius
/// `R/2` about the origin; `U` must be positive on the half-ball of radius `R`.
pub fn harnack_quotient(u: &HalfGridFn, radius: f64) -> Result<f64> {
    let mut sup = f64::NEG_INFINITY;
    let mut inf = f64::INFINITY;
    let tol = 1e-12 * radius;
    for (node, &v) in u.values.iter().enumerate() {
        let r = node_radius(u, node);
        if r > radius + tol {
            continue;
        }
        if !(v > 0.0) {
            let nx = u.nx();
            return Err(Error::NonPositive {
                value: v,
                location: format!("x = {:?}, t = {}", u.base.point(node % nx), u.t[node / nx]),
            });
        }
        if r <= 0.5 * radius + tol {
            sup = sup.max(v);
            inf = inf.min(v);
        }
    }
    if !inf.is_finite() {
        return Err(Error::MeshTooCoarse("no node inside the half-ball".into()));
    }
    Ok(sup / inf)
}

/// `min U` over nodes of the half-ball of radius `radius` at distance at
/// least `delta` from the excluded set, minus `inf U` over the curved
/// boundary (nodes outside the ball linked to a node inside). Nodes on the
/// sides or top of the box carry data and count as boundary, not interior.
pub fn max_principle_margin(u: &HalfGridFn, set: &SingularSet, delta: f64, radius: f64) -> Result<f64> {
    let nx = u.nx();
    let inside: Vec<bool> = (0..u.values.len())
        .map(|node| node_radius(u, node) <= radius * (1.0 + 1e-12))
        .collect();
    let mut curved = f64::INFINITY;
    for_each_link(&u.base, &u.t, 0.5, |a, b, _| {
        if inside[a] != inside[b] {
            let out = if inside[a] { b } else { a };
            curved = curved.min(u.values[out]);
        }
    });
    let mut interior = f64::INFINITY;
    let top = u.nt() - 1;
    for (node, &v) in u.values.iter().enumerate() {
        if !inside[node] {
            continue;
        }
        if u.base.on_boundary(node % nx) || node / nx == top {
            curved = curved.min(v);
            continue;
        }
        let x = u.base.point(node % nx);
        let t = u.t[node / nx];
        let d = if set.is_empty() {
            f64::INFINITY
        } else {
            set.dist(&x).hypot(t)
        };
        if d >= delta {
            interior = interior.min(v);
        }
    }
    if !curved.is_finite() || !interior.is_finite() {
        return Err(Error::MeshTooCoarse(
            "half-ball has no curved boundary or no admissible interior node".into(),
        ));
    }
    Ok(interior - curved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{graded_heights, grading_exponent};

    fn mesh(sigma: f64, h: f64, layers: usize) -> (Grid, Vec<f64>) {
        let base = Grid::cube(2, 1.0, h).unwrap();
        let t = graded_heights(1.0, layers, sigma, grading_exponent(sigma)).unwrap();
        (base, t)
    }

    #[test]
    fn constants_are_reproduced() {
        let (base, t) = mesh(0.3, 0.25, 12);
        let bvp = MixedBVP::neumann(base, t, 0.3, Box::new(|_, _| 2.5), Box::new(|_| 0.0));
        let (u, stats) = solve_bvp(&bvp, 1e-12).unwrap();
        assert!(u.values.iter().all(|v| (v - 2.5).abs() < 1e-10), "{stats:?}");
    }

    #[test]
    fn t_power_is_reproduced() {
        for sigma in [0.25, 0.5, 0.8] {
            let s2 = 2.0 * sigma;
            let (base, t) = mesh(sigma, 0.25, 16);
            let bvp = MixedBVP::neumann(
                base,
                t,
                sigma,
                Box::new(move |_, t| t.powf(s2)),
                Box::new(move |_| -s2),
            );
            let (u, _) = solve_bvp(&bvp, 1e-12).unwrap();
            let err = (0..u.values.len())
                .map(|k| (u.values[k] - u.t[k / u.nx()].powf(s2)).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-8, "sigma {sigma}: {err}");
        }
    }

    #[test]
    fn matrix_is_symmetric_and_coarse_grading_is_rejected() {
        let (base, t) = mesh(0.4, 0.5, 8);
        let bvp = MixedBVP::neumann(base.clone(), t, 0.4, Box::new(|x, _| x[0]), Box::new(|_| 1.0));
        assert!(assemble(&bvp).unwrap().asymmetry() < 1e-12);
        let uniform: Vec<f64> = (0..=8).map(|j| j as f64 / 8.0).collect();
        let bad = MixedBVP::neumann(base, uniform, 0.8, Box::new(|_, _| 0.0), Box::new(|_| 0.0));
        assert!(matches!(assemble(&bad), Err(Error::MeshTooCoarse(_))));
    }

    #[test]
    fn reordering_does_not_change_the_solution() {
        let (base, t) = mesh(0.5, 0.25, 8);
        let bvp = MixedBVP::neumann(base, t, 0.5, Box::new(|x, t| 1.0 + x[0] * t), Box::new(|x| x[1]));
        let sys = assemble(&bvp).unwrap();
        let (u, _) = solve_linear(&sys, 1e-12).unwrap();
        let m = sys.len();
        let mut perm: Vec<usize> = (0..m).collect();
        {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(11));
        }
        let (v, _) = solve_linear(&sys.permuted(&perm).unwrap(), 1e-12).unwrap();
        let d = u.values.iter().zip(&v.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d < 1e-8, "{d}");
    }

    #[test]
    fn harnack_quotient_of_constants_and_scaling() {
        let (base, t) = mesh(0.5, 0.25, 8);
        let u = HalfGridFn::from_fn(base, t, |x, t| 2.0 + x[0] + t).unwrap();
        let q = harnack_quotient(&u, 1.0).unwrap();
        let mut v = u.clone();
        v.values.iter_mut().for_each(|x| *x *= 3.0);
        assert!((harnack_quotient(&v, 1.0).unwrap() - q).abs() < 1e-12);
        v.values.iter_mut().for_each(|x| *x = 4.0);
        assert_eq!(harnack_quotient(&v, 1.0).unwrap(), 1.0);
        v.values[0] = -1.0;
        assert!(harnack_quotient(&v, 10.0).is_err());
    }
}
