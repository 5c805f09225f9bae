//! Collision-probability estimators for fitted block-maxima models and their
//! Monte Carlo confidence intervals.
//!
//! On the negated scale a collision is the event `X ≥ 0`, so every estimator
//! here is the GEV mass beyond zero, `1 − G(0)`.

use serde::{Deserialize, Serialize};

use crate::dataset::Covariates;
use crate::dist::{gev_log_t, GevParams};
use crate::fit_uni::UniFit;
use crate::mc::{derive_seed, run_streams, MvNormal};
use crate::stats::{self, normal_cdf, normal_quantile, quantile_sorted};
use crate::{Error, Result};

pub const DEFAULT_MC_SIZE: usize = 1_000_000;
pub const MIN_MC_SIZE: usize = 10_000;
/// Stratified normal nodes for the inner location expectation.
const LOCATION_NODES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Empirical,
    BmPlugin,
    BmCovariateMc,
    BmLocationdistMc,
    PotPlugin,
    Bivariate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbEstimate {
    pub p: f64,
    pub ci: (f64, f64),
    pub level: f64,
    pub method: Method,
    pub mc_size: usize,
    pub seed: Option<u64>,
    /// Parameter draws rejected for an invalid scale.
    pub rejected: usize,
    /// An interval endpoint was moved into `[0, 1]` or onto the point value.
    pub clamped: bool,
}

impl ProbEstimate {
    pub fn point(p: f64, method: Method) -> Self {
        Self {
            p,
            ci: (f64::NAN, f64::NAN),
            level: f64::NAN,
            method,
            mc_size: 0,
            seed: None,
            rejected: 0,
            clamped: false,
        }
    }

    /// `p (lo, hi)` with four decimals.
    pub fn display(&self) -> String {
        if self.ci.0.is_nan() {
            format!("{:.4}", self.p)
        } else {
            format!("{:.4} ({:.4}, {:.4})", self.p, self.ci.0, self.ci.1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailProbability {
    pub p: f64,
    /// The fitted upper endpoint lies below the collision boundary.
    pub endpoint_below_boundary: bool,
}

/// `1 − G(0)` for one GEV; `0` beyond a finite upper endpoint, `1` below a
/// finite lower endpoint.
pub fn exceed_zero(mu: f64, sigma: f64, xi: f64) -> f64 {
    match gev_log_t(-mu / sigma, xi) {
        Some(log_t) => -(-log_t.exp()).exp_m1(),
        None if xi < 0.0 => 0.0,
        None => 1.0,
    }
}

/// Block-maxima plug-in probability that the negated measure reaches zero.
pub fn bm_collision_probability(params: &GevParams) -> TailProbability {
    let below = params.upper_endpoint().is_some_and(|e| e < 0.0);
    TailProbability {
        p: exceed_zero(params.mu, params.sigma, params.xi),
        endpoint_below_boundary: below,
    }
}

fn design_for(fit: &UniFit, covariates: &Covariates) -> Result<Covariates> {
    if fit.is_stationary() {
        Ok(Covariates::empty(covariates.rows().max(1)))
    } else {
        fit.spec.design(covariates)
    }
}

fn check_inputs(fit: &UniFit, mc_size: usize, level: f64) -> Result<()> {
    if !fit.converged {
        return Err(Error::Usage("probability estimation needs a converged fit".into()));
    }
    if mc_size < MIN_MC_SIZE {
        return Err(Error::Usage(format!("mc_size must be at least {MIN_MC_SIZE}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("confidence level must be in (0,1), got {level}")));
    }
    Ok(())
}

/// Draws `mc_size` valid parameter vectors from `Normal(θ̂, vcov)` and maps
/// each through `f`. Draws with `σ ≤ 0` are redrawn and counted.
fn parameter_draws<F>(fit: &UniFit, mc_size: usize, seed: u64, f: F) -> Result<(Vec<f64>, usize)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let theta = fit.theta();
    let mv = MvNormal::new(&theta, &fit.vcov_matrix())?;
    let sigma_idx = fit.location.len();
    let chunks = run_streams(mc_size, seed, |rng, count| {
        let mut buf = vec![0.0; theta.len()];
        let mut out = Vec::with_capacity(count);
        let mut rejected = 0usize;
        while out.len() < count {
            mv.sample(rng, &mut buf);
            if !(buf[sigma_idx] > 0.0) {
                rejected += 1;
                if rejected > 100 * count {
                    break;
                }
                continue;
            }
            out.push(f(&buf));
        }
        (out, rejected)
    });
    let rejected = chunks.iter().map(|c| c.1).sum();
    let values: Vec<f64> = chunks.into_iter().flat_map(|c| c.0).collect();
    if values.len() < mc_size {
        return Err(Error::Numerical("parameter draws almost always have σ ≤ 0".into()));
    }
    Ok((values, rejected))
}

fn interval(mut draws: Vec<f64>, p: f64, level: f64) -> ((f64, f64), bool) {
    draws.sort_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    let lo = quantile_sorted(&draws, a);
    let hi = quantile_sorted(&draws, 1.0 - a);
    let (clo, chi) = (lo.clamp(0.0, 1.0).min(p), hi.clamp(0.0, 1.0).max(p));
    ((clo, chi), clo != lo || chi != hi)
}

fn split_theta(theta: &[f64], k: usize, gumbel: bool) -> (f64, f64) {
    (theta[k + 1], if gumbel { 0.0 } else { theta[k + 2] })
}

/// Average of per-observation probabilities `1 − Gᵢ(0)` with `μᵢ` from the
/// covariates; the interval comes from parameter draws `Normal(θ̂, vcov)`.
pub fn prob_covariate_approach(
    fit: &UniFit,
    covariates: &Covariates,
    mc_size: usize,
    seed: u64,
    level: f64,
) -> Result<ProbEstimate> {
    check_inputs(fit, mc_size, level)?;
    let design = design_for(fit, covariates)?;
    let k = design.len();
    let gumbel = fit.spec.fix_shape_to_zero;
    let n = design.rows() as f64;
    let mean_p = |theta: &[f64]| {
        let (sigma, xi) = split_theta(theta, k, gumbel);
        crate::fit_uni::locations_from(theta, &design)
            .into_iter()
            .map(|m| exceed_zero(m, sigma, xi))
            .sum::<f64>()
            / n
    };
    let p = mean_p(&fit.theta());
    let (draws, rejected) = parameter_draws(fit, mc_size, seed, mean_p)?;
    let (ci, clamped) = interval(draws, p, level);
    Ok(ProbEstimate {
        p,
        ci,
        level,
        method: Method::BmCovariateMc,
        mc_size,
        seed: Some(seed),
        rejected,
        clamped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationNormal {
    pub mean: f64,
    pub sd: f64,
    /// KS distance between the fitted locations and `Normal(mean, sd)`.
    pub ks: f64,
}

/// Normal approximation of the fitted per-observation locations.
pub fn location_normal(fit: &UniFit, covariates: &Covariates) -> Result<(LocationNormal, Vec<f64>)> {
    let design = design_for(fit, covariates)?;
    let mu = fit.locations(&design);
    let mean = stats::mean(&mu);
    let mut sd = if mu.len() > 1 { stats::sd(&mu) } else { 0.0 };
    if sd <= 1e-12 * mean.abs().max(1.0) {
        sd = 0.0;
    }
    let ks = if sd > 0.0 {
        stats::ks_statistic(&mu, |x| normal_cdf((x - mean) / sd))
    } else {
        0.0
    };
    Ok((LocationNormal { mean, sd, ks }, mu))
}

/// Treats the location as `Normal(m, s)` fitted to the per-observation
/// locations and integrates the collision probability over it.
///
/// Point value: Monte Carlo mean over `μ ~ Normal(m, s)`. Interval: parameter
/// draws, each mapped to `(m*, s*)` through the covariate mean and covariance
/// and integrated over fixed stratified normal nodes.
pub fn prob_locationdist_approach(
    fit: &UniFit,
    covariates: &Covariates,
    mc_size: usize,
    seed: u64,
    level: f64,
) -> Result<(ProbEstimate, LocationNormal)> {
    use rand_distr::{Distribution, StandardNormal};

    check_inputs(fit, mc_size, level)?;
    let (ln, _) = location_normal(fit, covariates)?;
    let design = design_for(fit, covariates)?;
    let k = design.len();
    let gumbel = fit.spec.fix_shape_to_zero;
    let (sigma, xi) = (fit.sigma.value, fit.xi.value);

    let p = if ln.sd == 0.0 {
        exceed_zero(ln.mean, sigma, xi)
    } else {
        let sums = run_streams(mc_size, seed, |rng, count| {
            (0..count)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    exceed_zero(ln.mean + ln.sd * z, sigma, xi)
                })
                .sum::<f64>()
        });
        sums.iter().sum::<f64>() / mc_size as f64
    };

    let col_means: Vec<f64> = design.columns.iter().map(|c| stats::mean(c)).collect();
    let nrow = design.rows();
    let mut cov = vec![vec![0.0; k]; k];
    if nrow > 1 {
        for a in 0..k {
            for b in a..k {
                let c = design.columns[a]
                    .iter()
                    .zip(&design.columns[b])
                    .map(|(x, y)| (x - col_means[a]) * (y - col_means[b]))
                    .sum::<f64>()
                    / (nrow - 1) as f64;
                cov[a][b] = c;
                cov[b][a] = c;
            }
        }
    }
    let nodes: Vec<f64> = (0..LOCATION_NODES)
        .map(|i| normal_quantile((i as f64 + 0.5) / LOCATION_NODES as f64))
        .collect();
    let per_draw = |theta: &[f64]| {
        let (s, x) = split_theta(theta, k, gumbel);
        let beta = &theta[1..=k];
        let m = theta[0] + beta.iter().zip(&col_means).map(|(b, c)| b * c).sum::<f64>();
        let mut var = 0.0;
        for a in 0..k {
            for b in 0..k {
                var += beta[a] * cov[a][b] * beta[b];
            }
        }
        let sd = var.max(0.0).sqrt();
        nodes.iter().map(|z| exceed_zero(m + sd * z, s, x)).sum::<f64>() / nodes.len() as f64
    };
    let (draws, rejected) = parameter_draws(fit, mc_size, derive_seed(seed, 1), per_draw)?;
    let (ci, clamped) = interval(draws, p, level);
    Ok((
        ProbEstimate {
            p,
            ci,
            level,
            method: Method::BmLocationdistMc,
            mc_size,
            seed: Some(seed),
            rejected,
            clamped,
        },
        ln,
    ))
}
