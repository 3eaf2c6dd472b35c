//! Gamma function and the normalization constants of the fractional
//! Laplacian, the degenerate extension and its Poisson kernel.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quad;

/// Dimension `n`, order `sigma` and an optional singular-set dimension `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FracParams {
    pub n: usize,
    pub sigma: f64,
    pub k: Option<usize>,
}

impl FracParams {
    /// Parameters of the critical problem: `n >= 2`, `0 < sigma < 1`.
    pub fn new(n: usize, sigma: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParams(format!("n must be >= 2, got {n}")));
        }
        Self::linear(n, sigma)
    }

    /// Parameters for the linear operators only (`n >= 1`). The critical
    /// exponent is meaningless when `n <= 2 sigma`.
    pub fn linear(n: usize, sigma: f64) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidParams("n must be >= 1".into()));
        }
        if !(sigma > 0.0 && sigma < 1.0) {
            return Err(Error::InvalidParams(format!("sigma out of (0,1): {sigma}")));
        }
        Ok(Self { n, sigma, k: None })
    }

    pub fn with_k(mut self, k: usize) -> Result<Self> {
        if k + 1 > self.n {
            return Err(Error::InvalidParams(format!(
                "k must be <= n-1, got k = {k}, n = {}",
                self.n
            )));
        }
        self.k = Some(k);
        Ok(self)
    }

    pub fn nf(&self) -> f64 {
        self.n as f64
    }

    /// `n - 2 sigma`, the homogeneity of capacity and the Kelvin exponent.
    pub fn decay(&self) -> f64 {
        self.nf() - 2.0 * self.sigma
    }

    /// `(n + 2 sigma) / (n - 2 sigma)`.
    pub fn crit_exp(&self) -> f64 {
        (self.nf() + 2.0 * self.sigma) / self.decay()
    }

    /// Singular blow-up exponent `(n - 2 sigma) / 2`.
    pub fn blowup_rate(&self) -> f64 {
        0.5 * self.decay()
    }

    pub fn constants(&self) -> Result<Constants> {
        Ok(Constants {
            c_frac: normalization_c(self.n, self.sigma)?,
            n_sigma: extension_normalizer(self.sigma)?,
            beta_poisson: poisson_beta(self.n, self.sigma)?,
            crit_exp: self.crit_exp(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Constants {
    pub c_frac: f64,
    pub n_sigma: f64,
    pub beta_poisson: f64,
    pub crit_exp: f64,
}

fn is_pole(x: f64) -> bool {
    x <= 0.0 && x == x.round()
}

/// Euler Gamma function; reflection is used for `x < 1/2`.
pub fn gamma(x: f64) -> Result<f64> {
    if !x.is_finite() || is_pole(x) {
        return Err(Error::Pole(x));
    }
    Ok(statrs::function::gamma::gamma(x))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("sigma out of (0,1): {sigma}")))
    }
}

/// `c_{n,sigma} = 4^sigma sigma Gamma((n+2 sigma)/2) / (pi^{n/2} Gamma(1-sigma))`.
pub fn normalization_c(n: usize, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let nf = n as f64;
    Ok(4f64.powf(sigma) * sigma * gamma(0.5 * (nf + 2.0 * sigma))?
        / (PI.powf(0.5 * nf) * gamma(1.0 - sigma)?))
}

/// `N(sigma) = 2^{1-2 sigma} Gamma(1-sigma) / Gamma(sigma)`.
pub fn extension_normalizer(sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(2f64.powf(1.0 - 2.0 * sigma) * gamma(1.0 - sigma)? / gamma(sigma)?)
}

/// `beta(n, sigma) = Gamma((n+2 sigma)/2) / (pi^{n/2} Gamma(sigma))`, the
/// constant making the unit-height Poisson kernel a probability density.
pub fn poisson_beta(n: usize, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let nf = n as f64;
    Ok(gamma(0.5 * (nf + 2.0 * sigma))? / (PI.powf(0.5 * nf) * gamma(sigma)?))
}

/// Quadrature of `int_{R^n} P_sigma(x, 1) dx` using `beta`. Should be 1.
///
/// The radial integral is split at `r = 1`; the far part is mapped with
/// `r = 1/s`, `s = v^{1/(2 sigma)}` which leaves a smooth integrand on `[0,1]`.
pub fn poisson_unit_integral(n: usize, sigma: f64) -> Result<f64> {
    let beta = poisson_beta(n, sigma)?;
    let nf = n as f64;
    let a = 0.5 * (nf + 2.0 * sigma);
    let near = quad::integrate_composite(
        |r| r.powf(nf - 1.0) * (1.0 + r * r).powf(-a),
        &[0.0, 0.25, 0.5, 0.75, 1.0],
        40,
    );
    let inv = 1.0 / sigma;
    let far = quad::integrate_composite(
        |v| (1.0 + v.powf(inv)).powf(-a),
        &[0.0, 1e-4, 1e-2, 0.1, 0.4, 1.0],
        40,
    ) / (2.0 * sigma);
    Ok(beta * quad::sphere_area(n) * (near + far))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaRatio {
    pub value: f64,
    pub positive: bool,
}

/// `Gamma(n/4 - k/2 + sigma/2) / Gamma(n/4 - k/2 - sigma/2)` and its sign.
pub fn gamma_ratio_condition(n: usize, k: usize, sigma: f64) -> Result<GammaRatio> {
    let base = n as f64 / 4.0 - k as f64 / 2.0;
    let value = gamma(base + 0.5 * sigma)? / gamma(base - 0.5 * sigma)?;
    Ok(GammaRatio {
        value,
        positive: value > 0.0,
    })
}

/// Runs the unit-integral check of `beta` for `n in 1..=3` and a spread of
/// `sigma`; returns the worst deviation from 1.
pub fn beta_self_test() -> Result<f64> {
    let mut worst: f64 = 0.0;
    for n in 1..=3 {
        for sigma in [0.05, 0.25, 0.5, 0.75, 0.95] {
            worst = worst.max((poisson_unit_integral(n, sigma)? - 1.0).abs());
        }
    }
    Ok(worst)
}
