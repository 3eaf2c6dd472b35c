//! Sampled fields on a boundary lattice in `R^n` and on a graded half-space
//! lattice in `R^{n+1}_+`, and the singular sets living on the flat boundary.
//!
//! Layout is row-major with the last axis fastest. A half-space field stores
//! one boundary slice per height, so value `(i, j)` sits at `j * nx + i`.
//!
//! The discrete Dirichlet form is a sum over links of `kappa * (F_a - F_b)^2`.
//! Link weights use the exact integral of `t^{1-2 sigma}` over the dual cell
//! for the x-links and `2 sigma / (t_{j+1}^{2 sigma} - t_j^{2 sigma})` for the
//! t-links; the latter makes `t^{2 sigma}` and constants discrete harmonic in t.
//! The solver assembles from the same links.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

const MAX_UNKNOWNS: usize = 2_000_000;

/// Axis-aligned box with uniform per-axis spacing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub shape: Vec<usize>,
    pub h: Vec<f64>,
}

impl Grid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != shape.len() || lower.is_empty() {
            return Err(Error::InvalidParams("grid: inconsistent dimensions".into()));
        }
        let mut h = Vec::with_capacity(shape.len());
        for d in 0..shape.len() {
            if shape[d] < 2 || !(upper[d] > lower[d]) {
                return Err(Error::InvalidParams(format!(
                    "grid axis {d}: need shape >= 2 and upper > lower"
                )));
            }
            h.push((upper[d] - lower[d]) / (shape[d] - 1) as f64);
        }
        Ok(Self {
            lower,
            upper,
            shape,
            h,
        })
    }

    /// The cube `[-half_width, half_width]^n` with spacing as close to
    /// `spacing` as an integer node count allows.
    pub fn cube(n: usize, half_width: f64, spacing: f64) -> Result<Self> {
        let cells = ((2.0 * half_width / spacing).round() as usize).max(1);
        Self::new(vec![-half_width; n], vec![half_width; n], vec![cells + 1; n])
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dim()];
        for d in (0..self.dim().saturating_sub(1)).rev() {
            s[d] = s[d + 1] * self.shape[d + 1];
        }
        s
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut m = vec![0; self.dim()];
        for d in (0..self.dim()).rev() {
            m[d] = idx % self.shape[d];
            idx /= self.shape[d];
        }
        m
    }

    pub fn flat_index(&self, m: &[usize]) -> usize {
        m.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &s)| acc * s + i)
    }

    pub fn coord(&self, d: usize, i: usize) -> f64 {
        if i + 1 == self.shape[d] {
            self.upper[d]
        } else {
            self.lower[d] + i as f64 * self.h[d]
        }
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .enumerate()
            .map(|(d, &i)| self.coord(d, i))
            .collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Trapezoid weight of a node (product of full or half spacings).
    pub fn trap_weight(&self, idx: usize) -> f64 {
        self.multi_index(idx)
            .iter()
            .enumerate()
            .map(|(d, &i)| {
                if i == 0 || i + 1 == self.shape[d] {
                    0.5 * self.h[d]
                } else {
                    self.h[d]
                }
            })
            .product()
    }

    pub fn trap_weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.trap_weight(i)).collect()
    }

    pub fn on_boundary(&self, idx: usize) -> bool {
        self.multi_index(idx)
            .iter()
            .zip(&self.shape)
            .any(|(&i, &s)| i == 0 || i + 1 == s)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(d, &v)| v >= self.lower[d] - 1e-12 && v <= self.upper[d] + 1e-12)
    }

    pub fn max_h(&self) -> f64 {
        self.h.iter().cloned().fold(0.0, f64::max)
    }

    /// Nearest node index of a point (clamped into the box).
    pub fn nearest(&self, x: &[f64]) -> usize {
        let m: Vec<usize> = (0..self.dim())
            .map(|d| {
                let s = ((x[d] - self.lower[d]) / self.h[d]).round();
                s.clamp(0.0, (self.shape[d] - 1) as f64) as usize
            })
            .collect();
        self.flat_index(&m)
    }

    /// The same box dilated by `r` about the origin.
    pub fn dilate(&self, r: f64) -> Self {
        Self {
            lower: self.lower.iter().map(|v| v * r).collect(),
            upper: self.upper.iter().map(|v| v * r).collect(),
            shape: self.shape.clone(),
            h: self.h.iter().map(|v| v * r).collect(),
        }
    }

    fn header(&self, sigma: Option<f64>) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut s = String::new();
        let _ = writeln!(s, "# lower {}", join(&self.lower));
        let _ = writeln!(s, "# upper {}", join(&self.upper));
        let _ = writeln!(
            s,
            "# shape {}",
            self.shape
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        );
        if let Some(sg) = sigma {
            let _ = writeln!(s, "# sigma {sg:?}");
        }
        s
    }
}

/// Scalar field sampled on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFn {
    pub grid: Grid,
    pub values: Vec<f64>,
}

const BIN_MAGIC: &[u8; 4] = b"FSGF";

impl GridFn {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidParams(format!(
                "grid has {} nodes but {} values were given",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64>(grid: Grid, f: F) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self { grid, values }
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn inf(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Multilinear interpolation; `None` outside the box.
    pub fn interpolate(&self, x: &[f64]) -> Option<f64> {
        let g = &self.grid;
        if x.len() != g.dim() || !g.contains(x) {
            return None;
        }
        let n = g.dim();
        let mut base = vec![0usize; n];
        let mut frac = vec![0.0; n];
        for d in 0..n {
            let s = ((x[d] - g.lower[d]) / g.h[d]).clamp(0.0, (g.shape[d] - 1) as f64);
            let i = (s.floor() as usize).min(g.shape[d] - 2);
            base[d] = i;
            frac[d] = s - i as f64;
        }
        let strides = g.strides();
        let origin: usize = base.iter().zip(&strides).map(|(a, b)| a * b).sum();
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut off = 0;
            for d in 0..n {
                if corner >> d & 1 == 1 {
                    w *= frac[d];
                    off += strides[d];
                } else {
                    w *= 1.0 - frac[d];
                }
            }
            if w != 0.0 {
                acc += w * self.values[origin + off];
            }
        }
        Some(acc)
    }

    /// Largest absolute forward difference divided by the spacing.
    pub fn lipschitz_estimate(&self) -> f64 {
        let g = &self.grid;
        let strides = g.strides();
        let mut lip: f64 = 0.0;
        for idx in 0..g.len() {
            let m = g.multi_index(idx);
            for d in 0..g.dim() {
                if m[d] + 1 < g.shape[d] {
                    let a = self.values[idx];
                    let b = self.values[idx + strides[d]];
                    if a.is_finite() && b.is_finite() {
                        lip = lip.max((b - a).abs() / g.h[d]);
                    }
                }
            }
        }
        lip
    }

    /// CSV with a commented header (`# lower`, `# upper`, `# shape`, optional
    /// `# sigma`), then one row per node: integer indices and the value.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P, sigma: Option<f64>) -> Result<()> {
        let mut out = self.grid.header(sigma);
        let n = self.grid.dim();
        for d in 0..n {
            let _ = write!(out, "i{d},");
        }
        out.push_str("value\n");
        for (idx, v) in self.values.iter().enumerate() {
            for i in self.grid.multi_index(idx) {
                let _ = write!(out, "{i},");
            }
            let _ = writeln!(out, "{v:?}");
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<(Self, Option<f64>)> {
        let file = BufReader::new(fs::File::open(path)?);
        let mut lower = None;
        let mut upper = None;
        let mut shape = None;
        let mut sigma = None;
        let mut rows = Vec::new();
        let floats = |s: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
                .collect()
        };
        for line in file.lines() {
            let line = line?;
            if let Some(rest) = line.strip_prefix("# lower ") {
                lower = Some(floats(rest)?);
            } else if let Some(rest) = line.strip_prefix("# upper ") {
                upper = Some(floats(rest)?);
            } else if let Some(rest) = line.strip_prefix("# shape ") {
                shape = Some(
                    rest.split_whitespace()
                        .map(|v| v.parse::<usize>().map_err(|e| Error::Parse(e.to_string())))
                        .collect::<Result<Vec<_>>>()?,
                );
            } else if let Some(rest) = line.strip_prefix("# sigma ") {
                sigma = Some(floats(rest)?[0]);
            } else if line.starts_with('#') || line.starts_with('i') || line.trim().is_empty() {
                continue;
            } else {
                let v = line
                    .rsplit(',')
                    .next()
                    .ok_or_else(|| Error::Parse(line.clone()))?;
                rows.push(v.parse::<f64>().map_err(|e| Error::Parse(e.to_string()))?);
            }
        }
        let missing = || Error::Parse("csv header incomplete".into());
        let grid = Grid::new(
            lower.ok_or_else(missing)?,
            upper.ok_or_else(missing)?,
            shape.ok_or_else(missing)?,
        )?;
        Ok((Self::new(grid, rows)?, sigma))
    }

    /// Little-endian binary: magic `FSGF`, `u32` dimension, lower and upper
    /// corners as `f64`, shape as `u64`, `sigma` (`NaN` if absent), values.
    pub fn write_bin<P: AsRef<Path>>(&self, path: P, sigma: Option<f64>) -> Result<()> {
        let g = &self.grid;
        let mut buf = Vec::with_capacity(8 * (self.values.len() + 4 * g.dim() + 2));
        buf.extend_from_slice(BIN_MAGIC);
        buf.extend_from_slice(&(g.dim() as u32).to_le_bytes());
        for v in g.lower.iter().chain(&g.upper) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for &s in &g.shape {
            buf.extend_from_slice(&(s as u64).to_le_bytes());
        }
        buf.extend_from_slice(&sigma.unwrap_or(f64::NAN).to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn read_bin<P: AsRef<Path>>(path: P) -> Result<(Self, Option<f64>)> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        let bad = || Error::Parse("truncated or malformed grid file".into());
        if buf.len() < 8 || &buf[..4] != BIN_MAGIC {
            return Err(bad());
        }
        let mut pos = 4;
        let mut word = |k: usize| -> Result<[u8; 8]> {
            let s = buf.get(pos..pos + k).ok_or_else(bad)?;
            pos += k;
            let mut w = [0u8; 8];
            w[..k].copy_from_slice(s);
            Ok(w)
        };
        let n = u32::from_le_bytes(word(4)?[..4].try_into().unwrap()) as usize;
        let mut f = || -> Result<f64> { Ok(f64::from_le_bytes(word(8)?)) };
        let mut lower = Vec::with_capacity(n);
        let mut upper = Vec::with_capacity(n);
        for _ in 0..n {
            lower.push(f()?);
        }
        for _ in 0..n {
            upper.push(f()?);
        }
        // shape words are u64 but share the 8-byte reader
        let mut shape = Vec::with_capacity(n);
        for _ in 0..n {
            shape.push(f()?.to_bits() as usize);
        }
        let sigma = f()?;
        let grid = Grid::new(lower, upper, shape)?;
        let mut values = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            values.push(f()?);
        }
        Ok((Self::new(grid, values)?, (!sigma.is_nan()).then_some(sigma)))
    }
}

/// Grading exponent of the t-mesh: `max(1, 1.5 / (2 - 2 sigma))`.
pub fn grading_exponent(sigma: f64) -> f64 {
    (1.5 / (2.0 - 2.0 * sigma)).max(1.0)
}

/// Heights `t_j = T (j/M)^gamma`, `j = 0..=M`. Requires
/// `gamma >= 1/(2 - 2 sigma)`.
pub fn graded_heights(height: f64, layers: usize, sigma: f64, gamma: f64) -> Result<Vec<f64>> {
    if layers < 2 || !(height > 0.0) {
        return Err(Error::InvalidParams("t-mesh needs >= 2 layers and T > 0".into()));
    }
    if gamma < 1.0 / (2.0 - 2.0 * sigma) - 1e-12 || gamma < 1.0 {
        return Err(Error::MeshTooCoarse(format!(
            "grading exponent {gamma} below 1/(2-2 sigma) = {}",
            1.0 / (2.0 - 2.0 * sigma)
        )));
    }
    Ok((0..=layers)
        .map(|j| height * (j as f64 / layers as f64).powf(gamma))
        .collect())
}

/// `int_a^b t^{1-2 sigma} dt`.
pub fn weight_integral(a: f64, b: f64, sigma: f64) -> f64 {
    let e = 2.0 - 2.0 * sigma;
    (b.max(0.0).powf(e) - a.max(0.0).powf(e)) / e
}

/// Weighted length of the dual cell of every t-node.
pub fn dual_weights(t: &[f64], sigma: f64) -> Vec<f64> {
    let m = t.len();
    (0..m)
        .map(|j| {
            let a = if j == 0 { 0.0 } else { 0.5 * (t[j - 1] + t[j]) };
            let b = if j + 1 == m { t[j] } else { 0.5 * (t[j] + t[j + 1]) };
            weight_integral(a, b, sigma)
        })
        .collect()
}

/// Visits every link of the half-space lattice as `(a, b, kappa)` with flat
/// indices `j * nx + i`.
pub fn for_each_link<F: FnMut(usize, usize, f64)>(base: &Grid, t: &[f64], sigma: f64, mut f: F) {
    let nx = base.len();
    let strides = base.strides();
    let trap = base.trap_weights();
    let w = dual_weights(t, sigma);
    let s2 = 2.0 * sigma;
    let tp: Vec<f64> = t.iter().map(|v| v.powf(s2)).collect();
    for i in 0..nx {
        let m = base.multi_index(i);
        for d in 0..base.dim() {
            if m[d] + 1 >= base.shape[d] {
                continue;
            }
            // face measure across axis d: trapezoid weight without axis d
            let edge = |k: usize| {
                if k == 0 || k + 1 == base.shape[d] {
                    0.5 * base.h[d]
                } else {
                    base.h[d]
                }
            };
            let face = trap[i] / edge(m[d]) / base.h[d];
            let nb = i + strides[d];
            for (j, wj) in w.iter().enumerate() {
                f(j * nx + i, j * nx + nb, wj * face);
            }
        }
        for j in 0..t.len() - 1 {
            f(j * nx + i, (j + 1) * nx + i, trap[i] * s2 / (tp[j + 1] - tp[j]));
        }
    }
}

/// Field on the graded half-space lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfGridFn {
    pub base: Grid,
    pub t: Vec<f64>,
    pub values: Vec<f64>,
}

impl HalfGridFn {
    pub fn new(base: Grid, t: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_heights(&t)?;
        if values.len() != base.len() * t.len() {
            return Err(Error::InvalidParams("half-grid value count mismatch".into()));
        }
        if values.len() > MAX_UNKNOWNS {
            return Err(Error::InvalidParams(format!(
                "{} nodes exceed the desk-scale cap of {MAX_UNKNOWNS}",
                values.len()
            )));
        }
        Ok(Self { base, t, values })
    }

    pub fn from_fn<F: Fn(&[f64], f64) -> f64>(base: Grid, t: Vec<f64>, f: F) -> Result<Self> {
        let pts = base.points();
        let values = t
            .iter()
            .flat_map(|&tj| pts.iter().map(move |x| (x, tj)))
            .map(|(x, tj)| f(x, tj))
            .collect();
        Self::new(base, t, values)
    }

    pub fn nx(&self) -> usize {
        self.base.len()
    }

    pub fn nt(&self) -> usize {
        self.t.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx() + i]
    }

    pub fn layer(&self, j: usize) -> &[f64] {
        &self.values[j * self.nx()..(j + 1) * self.nx()]
    }

    /// The `t = 0` slice.
    pub fn trace(&self) -> GridFn {
        GridFn {
            grid: self.base.clone(),
            values: self.layer(0).to_vec(),
        }
    }

    /// Discrete `int t^{1-2 sigma} |grad F|^2` over the half-box.
    pub fn weighted_energy(&self, sigma: f64) -> f64 {
        weighted_energy(self, sigma)
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn check_heights(t: &[f64]) -> Result<()> {
    if t.len() < 2 || t[0] != 0.0 || t.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParams(
            "t nodes must start at 0 and increase strictly".into(),
        ));
    }
    Ok(())
}

/// Sum over links of `kappa (F_a - F_b)^2`.
pub fn weighted_energy(f: &HalfGridFn, sigma: f64) -> f64 {
    let mut e = 0.0;
    for_each_link(&f.base, &f.t, sigma, |a, b, k| {
        let d = f.values[a] - f.values[b];
        e += k * d * d;
    });
    e
}

/// One piece of a singular set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Component {
    Point(Vec<f64>),
    Ball { center: Vec<f64>, radius: f64 },
    /// `origin + sum c_i basis_i` with `|c_i| <= extent`; basis orthonormal.
    Strip {
        origin: Vec<f64>,
        basis: Vec<Vec<f64>>,
        extent: f64,
    },
}

impl Component {
    pub fn dist(&self, x: &[f64]) -> f64 {
        match self {
            Component::Point(p) => euclid(x, p),
            Component::Ball { center, radius } => (euclid(x, center) - radius).max(0.0),
            Component::Strip {
                origin,
                basis,
                extent,
            } => {
                let mut near = origin.clone();
                for b in basis {
                    let c: f64 = x
                        .iter()
                        .zip(origin)
                        .zip(b)
                        .map(|((xi, oi), bi)| (xi - oi) * bi)
                        .sum();
                    let c = c.clamp(-extent, *extent);
                    for (ni, bi) in near.iter_mut().zip(b) {
                        *ni += c * bi;
                    }
                }
                euclid(x, &near)
            }
        }
    }

    fn dim(&self) -> usize {
        match self {
            Component::Point(p) => p.len(),
            Component::Ball { center, .. } => center.len(),
            Component::Strip { origin, .. } => origin.len(),
        }
    }

    fn translate(&mut self, z: &[f64]) {
        let v = match self {
            Component::Point(p) => p,
            Component::Ball { center, .. } => center,
            Component::Strip { origin, .. } => origin,
        };
        for (a, b) in v.iter_mut().zip(z) {
            *a += b;
        }
    }

    fn descriptor(&self) -> String {
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        match self {
            Component::Point(p) => format!("point({})", list(p)),
            Component::Ball { center, radius } => format!("ball({};{radius})", list(center)),
            Component::Strip { basis, extent, .. } => format!("strip({};{extent})", basis.len()),
        }
    }
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Finite union of points, balls and bounded affine strips in `R^n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingularSet {
    pub n: usize,
    pub components: Vec<Component>,
}

impl SingularSet {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            components: Vec::new(),
        }
    }

    pub fn new(n: usize, components: Vec<Component>) -> Result<Self> {
        for c in &components {
            if c.dim() != n {
                return Err(Error::InvalidParams(format!(
                    "component {} does not live in R^{n}",
                    c.descriptor()
                )));
            }
            if let Component::Ball { radius, .. } = c {
                if !(*radius > 0.0) {
                    return Err(Error::InvalidParams("ball radius must be > 0".into()));
                }
            }
        }
        Ok(Self { n, components })
    }

    pub fn point(p: Vec<f64>) -> Self {
        let n = p.len();
        Self {
            n,
            components: vec![Component::Point(p)],
        }
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        let n = center.len();
        Self {
            n,
            components: vec![Component::Ball { center, radius }],
        }
    }

    /// `R^k x {0}` restricted to `|x_i| <= extent`, `i < k`.
    pub fn strip(n: usize, k: usize, extent: f64) -> Self {
        let basis = (0..k)
            .map(|i| (0..n).map(|d| if d == i { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            n,
            components: vec![Component::Strip {
                origin: vec![0.0; n],
                basis,
                extent,
            }],
        }
    }

    pub fn union(mut self, other: SingularSet) -> Self {
        self.components.extend(other.components);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn translated(&self, z: &[f64]) -> Self {
        let mut s = self.clone();
        for c in &mut s.components {
            c.translate(z);
        }
        s
    }

    pub fn dist(&self, x: &[f64]) -> f64 {
        self.components
            .iter()
            .map(|c| c.dist(x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.dist(x) == 0.0
    }

    /// Lattice representative of the set: nodes inside a ball, and nodes
    /// within half a spacing of a point or strip.
    pub fn node_mask(&self, grid: &Grid) -> Vec<bool> {
        let slack = 0.5 * grid.max_h() * (1.0 + 1e-9);
        (0..grid.len())
            .map(|i| {
                let x = grid.point(i);
                self.components.iter().any(|c| match c {
                    Component::Ball { .. } => c.dist(&x) <= 0.0,
                    _ => c.dist(&x) <= slack,
                })
            })
            .collect()
    }

    /// Dense samples of the set with spacing at most `spacing`.
    pub fn sample_points(&self, spacing: f64) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for c in &self.components {
            match c {
                Component::Point(p) => out.push(p.clone()),
                Component::Ball { center, radius } => {
                    let m = (radius / spacing).ceil() as i64;
                    let step = radius / m.max(1) as f64;
                    let n = center.len();
                    let mut idx = vec![-m; n];
                    loop {
                        let x: Vec<f64> = center
                            .iter()
                            .zip(&idx)
                            .map(|(c, &i)| c + i as f64 * step)
                            .collect();
                        if euclid(&x, center) <= *radius {
                            out.push(x);
                        }
                        if !odometer(&mut idx, -m, m) {
                            break;
                        }
                    }
                }
                Component::Strip {
                    origin,
                    basis,
                    extent,
                } => {
                    let m = (extent / spacing).ceil().max(1.0) as i64;
                    let step = extent / m as f64;
                    let k = basis.len();
                    if k == 0 {
                        out.push(origin.clone());
                        continue;
                    }
                    let mut idx = vec![-m; k];
                    loop {
                        let mut x = origin.clone();
                        for (b, &i) in basis.iter().zip(&idx) {
                            for (xd, bd) in x.iter_mut().zip(b) {
                                *xd += i as f64 * step * bd;
                            }
                        }
                        out.push(x);
                        if !odometer(&mut idx, -m, m) {
                            break;
                        }
                    }
                }
            }
        }
        out
    }

    /// Diameter of the set (bounding estimate for strips and unions).
    pub fn diameter(&self) -> f64 {
        let pts = self.sample_points(f64::INFINITY);
        let mut extra: f64 = 0.0;
        for c in &self.components {
            if let Component::Ball { radius, .. } = c {
                extra = extra.max(*radius);
            }
        }
        let mut d: f64 = 0.0;
        for a in &pts {
            for b in &pts {
                d = d.max(euclid(a, b));
            }
        }
        d + 2.0 * extra
    }

    pub fn descriptor(&self) -> String {
        if self.is_empty() {
            return "empty".into();
        }
        self.components
            .iter()
            .map(|c| c.descriptor())
            .collect::<Vec<_>>()
            .join("+")
    }

    /// Parses `point(x1,..)`, `ball(c1,..;r)`, `strip(k;extent)` joined by
    /// `+`; `empty` is the empty set.
    pub fn parse(spec: &str, n: usize) -> Result<Self> {
        let spec = spec.trim();
        if spec.is_empty() || spec == "empty" {
            return Ok(Self::empty(n));
        }
        let mut comps = Vec::new();
        for part in spec.split('+') {
            let part = part.trim();
            let open = part
                .find('(')
                .ok_or_else(|| Error::Parse(format!("missing '(' in {part}")))?;
            if !part.ends_with(')') {
                return Err(Error::Parse(format!("missing ')' in {part}")));
            }
            let name = &part[..open];
            let body = &part[open + 1..part.len() - 1];
            let nums = |s: &str| -> Result<Vec<f64>> {
                s.split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Parse(format!("bad number '{v}' in {part}")))
                    })
                    .collect()
            };
            match name {
                "point" => comps.push(Component::Point(nums(body)?)),
                "ball" => {
                    let (c, r) = body
                        .split_once(';')
                        .ok_or_else(|| Error::Parse(format!("ball needs ';r' in {part}")))?;
                    comps.push(Component::Ball {
                        center: nums(c)?,
                        radius: nums(r)?[0],
                    });
                }
                "strip" => {
                    let (k, e) = body
                        .split_once(';')
                        .ok_or_else(|| Error::Parse(format!("strip needs 'k;extent' in {part}")))?;
                    let k: usize = k
                        .trim()
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad k in {part}")))?;
                    if k + 1 > n {
                        return Err(Error::InvalidParams(format!(
                            "strip dimension k = {k} must be <= n-1 = {}",
                            n - 1
                        )));
                    }
                    comps.extend(Self::strip(n, k, nums(e)?[0]).components);
                }
                other => return Err(Error::Parse(format!("unknown set kind '{other}'"))),
            }
        }
        Self::new(n, comps)
    }
}

fn odometer(idx: &mut [i64], lo: i64, hi: i64) -> bool {
    for v in idx.iter_mut().rev() {
        if *v < hi {
            *v += 1;
            return true;
        }
        *v = lo;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_half_box(nx: usize, m: usize, sigma: f64) -> (Grid, Vec<f64>) {
        let g = Grid::new(vec![0.0], vec![1.0], vec![nx]).unwrap();
        let t = graded_heights(1.0, m, sigma, grading_exponent(sigma)).unwrap();
        (g, t)
    }

    #[test]
    fn indexing_round_trips() {
        let g = Grid::new(vec![0.0, -1.0, 2.0], vec![1.0, 1.0, 3.0], vec![3, 4, 5]).unwrap();
        for i in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(i)), i);
        }
        assert_eq!(g.strides(), vec![20, 5, 1]);
        let w: f64 = g.trap_weights().iter().sum();
        assert!((w - 2.0).abs() < 1e-12);
    }

    #[test]
    fn energy_of_constants_and_the_kernel_power() {
        for sigma in [0.25, 0.5, 0.75] {
            let (g, t) = unit_half_box(9, 12, sigma);
            let c = HalfGridFn::from_fn(g.clone(), t.clone(), |_, _| 3.0).unwrap();
            assert_eq!(c.weighted_energy(sigma), 0.0);
            let p = HalfGridFn::from_fn(g, t, |_, tt| tt.powf(2.0 * sigma)).unwrap();
            // continuum value 2 sigma T^{2 sigma} |box| with T = |box| = 1
            assert!((p.weighted_energy(sigma) - 2.0 * sigma).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_is_quadratic_and_shift_invariant() {
        let g = Grid::cube(2, 1.0, 0.25).unwrap();
        let t = graded_heights(1.0, 6, 0.3, grading_exponent(0.3)).unwrap();
        let f = HalfGridFn::from_fn(g, t, |x, tt| (x[0] - x[1] * tt).sin()).unwrap();
        let e = f.weighted_energy(0.3);
        let mut g2 = f.clone();
        g2.values.iter_mut().for_each(|v| *v = 2.5 * *v + 7.0);
        assert!((g2.weighted_energy(0.3) - 6.25 * e).abs() < 1e-12 * e);
    }

    #[test]
    fn trace_is_the_bottom_slice() {
        let g = Grid::cube(1, 1.0, 0.5).unwrap();
        let t = vec![0.0, 0.5, 1.0];
        let f = HalfGridFn::from_fn(g, t, |x, tt| x[0] + 10.0 * tt).unwrap();
        assert_eq!(f.trace().values, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn interpolation_is_exact_on_multilinear_functions() {
        let g = Grid::cube(2, 1.0, 0.5).unwrap();
        let f = GridFn::from_fn(g, |x| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1]);
        let y = [0.3, -0.77];
        let exact = 1.0 + 0.6 + 0.77 - 0.5 * 0.3 * 0.77;
        assert!((f.interpolate(&y).unwrap() - exact).abs() < 1e-14);
        assert!(f.interpolate(&[1.5, 0.0]).is_none());
    }

    #[test]
    fn distances() {
        let p = SingularSet::point(vec![0.0, 0.0]);
        assert!((p.dist(&[3.0, 4.0]) - 5.0).abs() < 1e-15);
        let s = SingularSet::strip(3, 1, 10.0);
        assert!((s.dist(&[2.0, 3.0, 4.0]) - 5.0).abs() < 1e-15);
        let b = SingularSet::ball(vec![1.0, 1.0], 0.5);
        assert_eq!(b.dist(&[1.2, 0.9]), 0.0);
        assert!(b.contains(&[1.2, 0.9]));
    }

    #[test]
    fn parse_round_trip() {
        let s = SingularSet::parse("point(0,0.5) + ball(0,0;0.25)", 2).unwrap();
        assert_eq!(s.components.len(), 2);
        assert_eq!(s.descriptor(), "point(0,0.5)+ball(0,0;0.25)");
        let st = SingularSet::parse("strip(1;0.5)", 3).unwrap();
        assert!((st.dist(&[0.7, 0.0, 0.0]) - 0.2).abs() < 1e-15);
        assert!(SingularSet::parse("strip(3;1)", 3).is_err());
        assert!(SingularSet::parse("blob(1)", 2).is_err());
        assert!(SingularSet::parse("point(1,2,3)", 2).is_err());
        assert!(SingularSet::parse("empty", 2).unwrap().is_empty());
    }

    #[test]
    fn csv_and_binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(vec![-1.0, 0.0], vec![1.0, 0.3], vec![5, 4]).unwrap();
        let f = GridFn::from_fn(g, |x| x[0].exp() * x[1] + 0.1);
        f.write_csv(dir.path().join("f.csv"), Some(0.4)).unwrap();
        let (back, s) = GridFn::read_csv(dir.path().join("f.csv")).unwrap();
        assert_eq!(back, f);
        assert_eq!(s, Some(0.4));
        f.write_bin(dir.path().join("f.bin"), None).unwrap();
        let (back, s) = GridFn::read_bin(dir.path().join("f.bin")).unwrap();
        assert_eq!(back, f);
        assert_eq!(s, None);
    }

    #[test]
    fn grading_rejects_shallow_exponents() {
        assert!(graded_heights(1.0, 8, 0.75, 1.0).is_err());
        assert!(graded_heights(1.0, 8, 0.75, grading_exponent(0.75)).is_ok());
        assert!((grading_exponent(0.25) - 1.0).abs() < 1e-15);
    }
}
