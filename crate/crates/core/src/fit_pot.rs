//! Peaks over threshold: excess extraction, GPD maximum likelihood and the
//! POT collision-probability estimator.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::Series;
use crate::dist::{gpd_log_sf_std, GpdParams, EPS_GUMBEL};
use crate::fit_uni::{fingerprint, Family};
use crate::mc::MvNormal;
use crate::optim::{self, covariance_from_hessian};
use crate::prob::{Method, ProbEstimate};
use crate::stats::{self, quantile_sorted};
use crate::{Error, Result};

pub const MIN_EXCEEDANCES: usize = 10;
const START_SEED: u64 = 0x706f_7473;

/// `{xᵢ − u : xᵢ > u}` in input order.
pub fn excesses(series: &Series, threshold: f64) -> Series {
    Series::new(
        series
            .values
            .iter()
            .filter(|&&x| x > threshold)
            .map(|x| x - threshold)
            .collect(),
        series.unit.clone(),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotFit {
    pub family: Family,
    pub params: GpdParams,
    pub sigma_se: f64,
    pub xi_se: f64,
    /// Covariance over `(σ, ξ)`.
    pub vcov: [[f64; 2]; 2],
    pub n_exceed: usize,
    pub n_total: usize,
    pub loglik: f64,
    pub converged: bool,
    pub grad_norm: f64,
    pub diagnostics: Vec<String>,
    pub data_fingerprint: u64,
}

/// GPD log-likelihood of excesses at natural `(σ, ξ)`.
pub fn gpd_loglik(excess: &[f64], sigma: f64, xi: f64) -> f64 {
    if !(sigma > 0.0) {
        return f64::NEG_INFINITY;
    }
    let ln_sigma = sigma.ln();
    let mut ll = 0.0;
    for &y in excess {
        match gpd_log_sf_std(y / sigma, xi) {
            Some(lsf) if lsf.is_finite() => ll += (1.0 + xi) * lsf - ln_sigma,
            _ => return f64::NEG_INFINITY,
        }
    }
    ll
}

fn moment_start(excess: &[f64]) -> (f64, f64) {
    let m = stats::mean(excess);
    let v = stats::sd(excess).powi(2);
    let r = m * m / v;
    let xi = (0.5 * (1.0 - r)).clamp(-0.45, 0.45);
    let sigma = (0.5 * m * (r + 1.0)).max(1e-8);
    let ymax = excess.iter().copied().fold(0.0, f64::max);
    if xi < 0.0 && ymax >= sigma / -xi {
        (sigma, 0.0)
    } else {
        (sigma, xi)
    }
}

/// Fits a GPD to the excesses of `series` over `threshold`.
pub fn fit_gpd(series: &Series, threshold: f64) -> Result<PotFit> {
    let y = excesses(series, threshold);
    let n_exceed = y.len();
    if n_exceed < MIN_EXCEEDANCES {
        return Err(Error::SampleSize {
            needed: MIN_EXCEEDANCES,
            got: n_exceed,
        });
    }
    let ys = &y.values;
    let (s0, x0) = moment_start(ys);
    let nll = |th: &[f64]| {
        if th[0].abs() > 50.0 {
            return f64::INFINITY;
        }
        -gpd_loglik(ys, th[0].exp(), th[1])
    };
    let start = vec![s0.ln(), x0];
    let starts = optim::jittered_starts(&start, &[0.1, 0.05], 5, START_SEED);
    let mut diagnostics = Vec::new();
    let opt = optim::minimize(&nll, &starts, &[0.2, 0.1])
        .ok_or_else(|| Error::Numerical("no feasible GPD starting point".into()))?;
    let sigma = opt.x[0].exp();
    let xi = opt.x[1];
    let h = optim::hessian(&nll, &opt.x);
    let (v_int, pseudo) = covariance_from_hessian(&h);
    let jac = DMatrix::from_row_slice(2, 2, &[sigma, 0.0, 0.0, 1.0]);
    let v = &jac * v_int * jac.transpose();
    let nat = [sigma, xi];
    let nat_nll = |t: &[f64]| -gpd_loglik(ys, t[0], t[1]);
    let grad_norm = optim::scaled_grad_norm(&optim::gradient(&nat_nll, &nat), &nat);
    let loglik = -opt.nll;
    let mut converged = loglik.is_finite() && !pseudo;
    if pseudo {
        diagnostics.push("Hessian not positive definite; pseudo-inverse used".into());
    }
    if grad_norm > 1e-4 {
        diagnostics.push(format!("gradient norm {grad_norm:.2e} at reported optimum"));
        converged &= grad_norm < 1e-2;
    }
    if xi <= -1.0 {
        diagnostics.push("shape below -1: likelihood is unbounded".into());
        converged = false;
    }
    let n_total = series.len();
    Ok(PotFit {
        family: Family::Gpd,
        params: GpdParams::new(threshold, sigma, xi, n_exceed as f64 / n_total as f64)?,
        sigma_se: v[(0, 0)].max(0.0).sqrt(),
        xi_se: v[(1, 1)].max(0.0).sqrt(),
        vcov: [[v[(0, 0)], v[(0, 1)]], [v[(1, 0)], v[(1, 1)]]],
        n_exceed,
        n_total,
        loglik,
        converged,
        grad_norm,
        diagnostics,
        data_fingerprint: fingerprint(&series.values),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotProbability {
    /// Probability of reaching `x` given an exceedance of the threshold.
    pub conditional: f64,
    /// `conditional × exceedance rate`.
    pub unconditional: f64,
    pub exceedance_rate: f64,
    /// `x` lies beyond the fitted finite endpoint.
    pub beyond_endpoint: bool,
}

impl PotProbability {
    pub fn estimate(&self) -> ProbEstimate {
        ProbEstimate::point(self.conditional, Method::PotPlugin)
    }
}

/// GPD survival at `x − u`, with the exponential limit near `ξ = 0`.
pub fn pot_tail(threshold: f64, sigma: f64, xi: f64, x: f64) -> (f64, bool) {
    let w = (x - threshold) / sigma;
    if xi.abs() < EPS_GUMBEL {
        return ((-w).exp().clamp(0.0, 1.0), false);
    }
    match gpd_log_sf_std(w, xi) {
        Some(l) => (l.exp().clamp(0.0, 1.0), false),
        None => (0.0, true),
    }
}

/// POT plug-in estimate evaluated at the negated sample extreme `x`.
pub fn pot_collision_probability(fit: &PotFit, x: f64) -> Result<PotProbability> {
    let u = fit.params.threshold;
    if x < u {
        return Err(Error::Domain(format!("evaluation point {x} is below the threshold {u}")));
    }
    let (conditional, beyond) = pot_tail(u, fit.params.sigma, fit.params.xi, x);
    Ok(PotProbability {
        conditional,
        unconditional: conditional * fit.params.exceedance_rate,
        exceedance_rate: fit.params.exceedance_rate,
        beyond_endpoint: beyond,
    })
}

/// Conditional POT estimate with a parameter-draw interval.
pub fn pot_probability_ci(fit: &PotFit, x: f64, mc_size: usize, seed: u64, level: f64) -> Result<ProbEstimate> {
    let point = pot_collision_probability(fit, x)?;
    let cov = DMatrix::from_row_slice(2, 2, &[fit.vcov[0][0], fit.vcov[0][1], fit.vcov[1][0], fit.vcov[1][1]]);
    let mv = MvNormal::new(&[fit.params.sigma, fit.params.xi], &cov)?;
    let u = fit.params.threshold;
    let chunks = crate::mc::run_streams(mc_size, seed, |rng, count| {
        let mut buf = [0.0; 2];
        let mut out = Vec::with_capacity(count);
        let mut rejected = 0usize;
        while out.len() < count && rejected <= 100 * count {
            mv.sample(rng, &mut buf);
            if buf[0] > 0.0 {
                out.push(pot_tail(u, buf[0], buf[1], x).0);
            } else {
                rejected += 1;
            }
        }
        (out, rejected)
    });
    let rejected = chunks.iter().map(|c| c.1).sum();
    let mut draws: Vec<f64> = chunks.into_iter().flat_map(|c| c.0).collect();
    if draws.len() < mc_size {
        return Err(Error::Numerical("parameter draws almost always have σ ≤ 0".into()));
    }
    draws.sort_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    let (lo, hi) = (quantile_sorted(&draws, a), quantile_sorted(&draws, 1.0 - a));
    let p = point.conditional;
    Ok(ProbEstimate {
        p,
        ci: (lo.min(p), hi.max(p)),
        level,
        method: Method::PotPlugin,
        mc_size,
        seed: Some(seed),
        rejected,
        clamped: lo > p || hi < p,
    })
}
