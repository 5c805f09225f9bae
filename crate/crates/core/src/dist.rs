//! GEV (with the Gumbel limit) and generalized Pareto primitives.
//!
//! The GEV distribution function is
//!
//! ```text
//! G(x) = exp(-t(x)),  t(x) = (1 + ξ (x - μ)/σ)^(-1/ξ)
//! ```
//!
//! on `1 + ξ (x - μ)/σ > 0`, with `t(x) = exp(-(x - μ)/σ)` for `ξ = 0`. Below a
//! finite lower endpoint the CDF is `0`, above a finite upper endpoint it is
//! `1`; evaluating outside the support is never an error.

use rand::Rng;
use rand::distr::Open01;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Series;
use crate::{Error, Result};

/// Below this `|ξ|` the Gumbel / exponential closed forms are used.
pub const EPS_GUMBEL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    pub mu: f64,
    pub sigma: f64,
    pub xi: f64,
}

/// Standard errors reported next to a parameter record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSe {
    pub mu: f64,
    pub sigma: f64,
    pub xi: f64,
}

impl GevParams {
    pub fn new(mu: f64, sigma: f64, xi: f64) -> Result<Self> {
        if !(sigma > 0.0) || !mu.is_finite() || !xi.is_finite() || !sigma.is_finite() {
            return Err(Error::Domain(format!(
                "invalid GEV parameters (mu={mu}, sigma={sigma}, xi={xi})"
            )));
        }
        Ok(Self { mu, sigma, xi })
    }

    pub fn gumbel(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(mu, sigma, 0.0)
    }

    pub fn is_gumbel(&self) -> bool {
        self.xi.abs() < EPS_GUMBEL
    }

    /// `μ - σ/ξ` when `ξ < 0`.
    pub fn upper_endpoint(&self) -> Option<f64> {
        (self.xi <= -EPS_GUMBEL).then(|| self.mu - self.sigma / self.xi)
    }

    /// `μ - σ/ξ` when `ξ > 0`.
    pub fn lower_endpoint(&self) -> Option<f64> {
        (self.xi >= EPS_GUMBEL).then(|| self.mu - self.sigma / self.xi)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        gev_cdf(self, x)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        gev_pdf(self, x)
    }
}

/// `log t(x)` for a standardized argument `z = (x - μ)/σ`; `None` outside the
/// support.
#[inline]
pub fn gev_log_t(z: f64, xi: f64) -> Option<f64> {
    if xi.abs() < EPS_GUMBEL {
        Some(-z)
    } else {
        let a = xi * z;
        if a <= -1.0 {
            None
        } else {
            Some(-a.ln_1p() / xi)
        }
    }
}

/// Log-density of the standardized GEV at `z` (add `-ln σ` for the scaled one).
#[inline]
pub fn gev_logpdf_std(z: f64, xi: f64) -> f64 {
    match gev_log_t(z, xi) {
        Some(log_t) => (xi + 1.0) * log_t - log_t.exp(),
        None => f64::NEG_INFINITY,
    }
}

pub fn gev_cdf(p: &GevParams, x: f64) -> f64 {
    let z = (x - p.mu) / p.sigma;
    match gev_log_t(z, p.xi) {
        Some(log_t) => (-log_t.exp()).exp(),
        // outside the support: below a lower endpoint or above an upper one
        None if p.xi > 0.0 => 0.0,
        None => 1.0,
    }
}

pub fn gev_pdf(p: &GevParams, x: f64) -> f64 {
    let z = (x - p.mu) / p.sigma;
    (gev_logpdf_std(z, p.xi) - p.sigma.ln()).exp()
}

pub fn gev_quantile(p: &GevParams, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("quantile level must be in (0,1), got {q}")));
    }
    Ok(gev_quantile_unchecked(p, q))
}

pub(crate) fn gev_quantile_unchecked(p: &GevParams, q: f64) -> f64 {
    let log_y = (-q.ln()).ln();
    if p.is_gumbel() {
        p.mu - p.sigma * log_y
    } else {
        p.mu + p.sigma * (-p.xi * log_y).exp_m1() / p.xi
    }
}

/// Value whose `t`-transform equals `t`, i.e. `G(x) = exp(-t)`.
#[inline]
pub fn gev_from_t(mu: f64, sigma: f64, xi: f64, t: f64) -> f64 {
    if xi.abs() < EPS_GUMBEL {
        mu - sigma * t.ln()
    } else {
        mu + sigma * (-xi * t.ln()).exp_m1() / xi
    }
}

/// Inverse-transform sampling, deterministic for a fixed seed.
pub fn gev_sample(p: &GevParams, n: usize, seed: u64) -> Series {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n)
        .map(|_| gev_quantile_unchecked(p, rng.sample(Open01)))
        .collect();
    Series::new(values, "gev")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdParams {
    pub threshold: f64,
    pub sigma: f64,
    pub xi: f64,
    /// Fraction of the full sample above `threshold`.
    pub exceedance_rate: f64,
}

impl GpdParams {
    pub fn new(threshold: f64, sigma: f64, xi: f64, exceedance_rate: f64) -> Result<Self> {
        if !(sigma > 0.0) || !xi.is_finite() || !(0.0..=1.0).contains(&exceedance_rate) {
            return Err(Error::Domain(format!(
                "invalid GPD parameters (sigma={sigma}, xi={xi}, rate={exceedance_rate})"
            )));
        }
        Ok(Self {
            threshold,
            sigma,
            xi,
            exceedance_rate,
        })
    }

    /// Largest admissible excess, `-σ/ξ` for `ξ < 0`.
    pub fn excess_endpoint(&self) -> Option<f64> {
        (self.xi <= -EPS_GUMBEL).then(|| -self.sigma / self.xi)
    }
}

fn check_excess(y: f64) -> Result<()> {
    if y < 0.0 || y.is_nan() {
        Err(Error::Domain(format!("GPD excess must be non-negative, got {y}")))
    } else {
        Ok(())
    }
}

/// `log (1 + ξ y/σ)^(-1/ξ)`, `None` past a finite endpoint.
#[inline]
pub(crate) fn gpd_log_sf_std(w: f64, xi: f64) -> Option<f64> {
    if xi.abs() < EPS_GUMBEL {
        Some(-w)
    } else {
        let a = xi * w;
        (a > -1.0).then(|| -a.ln_1p() / xi)
    }
}

/// Survival `P(Y > y)` of the excess.
pub fn gpd_sf(p: &GpdParams, y: f64) -> Result<f64> {
    check_excess(y)?;
    Ok(gpd_log_sf_std(y / p.sigma, p.xi).map_or(0.0, f64::exp))
}

pub fn gpd_cdf(p: &GpdParams, y: f64) -> Result<f64> {
    Ok(1.0 - gpd_sf(p, y)?)
}

pub fn gpd_pdf(p: &GpdParams, y: f64) -> Result<f64> {
    check_excess(y)?;
    let w = y / p.sigma;
    Ok(match gpd_log_sf_std(w, p.xi) {
        Some(log_sf) => ((1.0 + p.xi) * log_sf - p.sigma.ln()).exp(),
        None => 0.0,
    })
}

pub fn gpd_quantile(p: &GpdParams, q: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::Domain(format!("quantile level must be in [0,1), got {q}")));
    }
    Ok(gpd_quantile_unchecked(p, q))
}

fn gpd_quantile_unchecked(p: &GpdParams, q: f64) -> f64 {
    let log_s = (-q).ln_1p();
    if p.xi.abs() < EPS_GUMBEL {
        -p.sigma * log_s
    } else {
        p.sigma * (-p.xi * log_s).exp_m1() / p.xi
    }
}

/// Excess draws `y ≥ 0` (add the threshold for levels).
pub fn gpd_sample(p: &GpdParams, n: usize, seed: u64) -> Series {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n)
        .map(|_| gpd_quantile_unchecked(p, rng.sample(Open01)))
        .collect();
    Series::new(values, "excess")
}
