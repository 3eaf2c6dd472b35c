//! Zero-padded DFTs of lattice functions and the Fourier energy
//! `int |xi|^{2 sigma} |f^(xi)|^2 d xi` with the unitary transform
//! `f^(xi) = (2 pi)^{-n/2} int f(x) e^{-i xi.x} dx`.
//!
//! A lattice function is extended by zero to a periodic box of `M_d` nodes
//! per axis. With `F_k` the plain DFT the energy is
//! `(prod h_d / prod M_d) sum_k s_k |F_k|^2`, `s_k = |xi_k|^{2 sigma}`, except
//! that `s_0` is the cell average of `|xi|^{2 sigma}` over the zero cell (the
//! plain Riemann sum would drop it).

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::quad::gauss_legendre;

/// Fourier-side operator on a zero-padded periodic box.
pub struct SpectralForm {
    pub shape: Vec<usize>,
    pub padded: Vec<usize>,
    pub h: Vec<f64>,
    pub sigma: f64,
    symbol: Vec<f64>,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

/// Signed frequency index of bin `k` out of `m`.
fn signed(k: usize, m: usize) -> f64 {
    if k <= m / 2 {
        k as f64
    } else {
        k as f64 - m as f64
    }
}

/// Average of `|xi|^{2 sigma}` over the box `prod [-a_d/2, a_d/2]`.
fn zero_cell_average(widths: &[f64], sigma: f64) -> f64 {
    let rule = gauss_legendre(12);
    let n = widths.len();
    let pts = rule.nodes.len();
    let total = pts.pow(n as u32);
    let mut acc = 0.0;
    // the integrand is even in every axis: integrate the positive orthant
    for idx in 0..total {
        let mut rem = idx;
        let mut w = 1.0;
        let mut r2 = 0.0;
        for d in 0..n {
            let i = rem % pts;
            rem /= pts;
            let x = 0.25 * widths[d] * (1.0 + rule.nodes[i]);
            w *= rule.weights[i] * 0.5;
            r2 += x * x;
        }
        acc += w * r2.powf(sigma);
    }
    acc
}

impl SpectralForm {
    /// `pad` multiplies the node count per axis of the periodic box.
    pub fn new(shape: &[usize], h: &[f64], sigma: f64, pad: usize) -> Result<Self> {
        if shape.len() != h.len() || shape.is_empty() {
            return Err(Error::InvalidParams("spectral form: dimension mismatch".into()));
        }
        let padded: Vec<usize> = shape.iter().map(|&s| (pad.max(1) * s).div_ceil(2) * 2).collect();
        let mut planner = FftPlanner::<f64>::new();
        let fwd = padded.iter().map(|&m| planner.plan_fft_forward(m)).collect();
        let inv = padded.iter().map(|&m| planner.plan_fft_inverse(m)).collect();
        let total: usize = padded.iter().product();
        let st = strides(&padded);
        let dxi: Vec<f64> = padded
            .iter()
            .zip(h)
            .map(|(&m, &hd)| 2.0 * std::f64::consts::PI / (m as f64 * hd))
            .collect();
        let mut symbol = vec![0.0; total];
        for (k, s) in symbol.iter_mut().enumerate() {
            let mut r2 = 0.0;
            for d in 0..padded.len() {
                let kd = (k / st[d]) % padded[d];
                let xi = signed(kd, padded[d]) * dxi[d];
                r2 += xi * xi;
            }
            *s = r2.powf(sigma);
        }
        symbol[0] = zero_cell_average(&dxi, sigma);
        Ok(Self {
            shape: shape.to_vec(),
            padded,
            h: h.to_vec(),
            sigma,
            symbol,
            fwd,
            inv,
        })
    }

    fn transform(&self, buf: &mut [Complex64], forward: bool) {
        let st = strides(&self.padded);
        let n = self.padded.len();
        let total = buf.len();
        let mut line = Vec::new();
        for d in 0..n {
            let m = self.padded[d];
            let plan = if forward { &self.fwd[d] } else { &self.inv[d] };
            line.resize(m, Complex64::new(0.0, 0.0));
            for start in 0..total {
                if !(start / st[d]).is_multiple_of(m) {
                    continue;
                }
                for (i, v) in line.iter_mut().enumerate() {
                    *v = buf[start + i * st[d]];
                }
                plan.process(&mut line);
                for (i, v) in line.iter().enumerate() {
                    buf[start + i * st[d]] = *v;
                }
            }
        }
    }

    fn embed(&self, values: &[f64]) -> Vec<Complex64> {
        let total: usize = self.padded.iter().product();
        let mut buf = vec![Complex64::new(0.0, 0.0); total];
        let src = strides(&self.shape);
        let dst = strides(&self.padded);
        for (i, &v) in values.iter().enumerate() {
            let mut j = 0;
            for d in 0..self.shape.len() {
                j += ((i / src[d]) % self.shape[d]) * dst[d];
            }
            buf[j] = Complex64::new(v, 0.0);
        }
        buf
    }

    fn restrict(&self, buf: &[Complex64]) -> Vec<f64> {
        let len: usize = self.shape.iter().product();
        let src = strides(&self.shape);
        let dst = strides(&self.padded);
        (0..len)
            .map(|i| {
                let mut j = 0;
                for d in 0..self.shape.len() {
                    j += ((i / src[d]) % self.shape[d]) * dst[d];
                }
                buf[j].re
            })
            .collect()
    }

    fn scale(&self) -> f64 {
        let hp: f64 = self.h.iter().product();
        let mp: usize = self.padded.iter().product();
        hp / mp as f64
    }

    /// Fourier energy of the zero-extended lattice function.
    pub fn energy(&self, values: &[f64]) -> f64 {
        let mut buf = self.embed(values);
        self.transform(&mut buf, true);
        self.scale()
            * buf
                .iter()
                .zip(&self.symbol)
                .map(|(c, s)| s * c.norm_sqr())
                .sum::<f64>()
    }

    /// `A f` with `energy(f) = f . A f`.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        let mut buf = self.embed(values);
        self.transform(&mut buf, true);
        for (c, s) in buf.iter_mut().zip(&self.symbol) {
            *c *= *s;
        }
        self.transform(&mut buf, false);
        let k = self.scale();
        self.restrict(&buf).into_iter().map(|v| v * k).collect()
    }
}

/// `int |xi|^{2 sigma} |f^|^2` of a lattice function on a box with spacing `h`.
pub fn fourier_energy(values: &[f64], shape: &[usize], h: &[f64], sigma: f64, pad: usize) -> Result<f64> {
    Ok(SpectralForm::new(shape, h, sigma, pad)?.energy(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_energy_matches_closed_form() {
        // unitary transform of exp(-x^2/2) is exp(-xi^2/2); int |xi| e^{-xi^2} = 1
        let n = 321;
        let h = 0.1;
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let x = -16.0 + i as f64 * h;
                (-0.5 * x * x).exp()
            })
            .collect();
        // the cusp of |xi| at the origin costs O(d_xi^2) in the Riemann sum
        let e = fourier_energy(&vals, &[n], &[h], 0.5, 4).unwrap();
        assert!((e - 1.0).abs() < 1e-3, "{e}");
        let e8 = fourier_energy(&vals, &[n], &[h], 0.5, 8).unwrap();
        assert!((e8 - 1.0).abs() < (e - 1.0).abs(), "{e8} vs {e}");
        // sigma -> any: int |xi|^{2s} e^{-xi^2} = Gamma(s + 1/2)
        let g = statrs::function::gamma::gamma(0.75);
        let e = fourier_energy(&vals, &[n], &[h], 0.25, 4).unwrap();
        assert!((e - g).abs() < 2e-3, "{e} vs {g}");
        let e8 = fourier_energy(&vals, &[n], &[h], 0.25, 8).unwrap();
        assert!((e8 - g).abs() < (e - g).abs(), "{e8} vs {g}");
    }

    #[test]
    fn apply_is_the_gradient_of_energy() {
        let shape = [7, 6];
        let h = [0.3, 0.25];
        let form = SpectralForm::new(&shape, &h, 0.4, 2).unwrap();
        let f: Vec<f64> = (0..42).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.1).collect();
        let af = form.apply(&f);
        let quad: f64 = f.iter().zip(&af).map(|(a, b)| a * b).sum();
        assert!((quad - form.energy(&f)).abs() < 1e-12 * quad.abs().max(1.0));
        // symmetry
        let g: Vec<f64> = (0..42).map(|i| ((i * 5 % 13) as f64).sin()).collect();
        let ag = form.apply(&g);
        let fag: f64 = f.iter().zip(&ag).map(|(a, b)| a * b).sum();
        let gaf: f64 = g.iter().zip(&af).map(|(a, b)| a * b).sum();
        assert!((fag - gaf).abs() < 1e-12);
    }
}
