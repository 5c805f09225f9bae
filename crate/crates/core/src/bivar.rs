//! Bivariate extremes of the two negated surrogates.
//!
//! Two estimation routes:
//! - full maximum likelihood of the logistic bivariate extreme-value model,
//!   margins and dependence `r` jointly;
//! - two steps: margins first, then an Archimedean copula (Joe-Frank or
//!   Gumbel) fitted to rank pseudo-observations.
//!
//! Rank diagnostics (Kendall's tau, a Cramér-von Mises independence test and
//! a Kendall-process goodness-of-fit test) and the joint collision
//! probability `1 − C(F(0), G(0))` live here too.

use nalgebra::DMatrix;
use rand::distr::Open01;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Covariates, Series};
use crate::dist::{gev_from_t, gev_log_t, GevParams};
use crate::fit_uni::{self, Coefficient, Estimate, NonStationarySpec, Standardized};
use crate::mc::{derive_seed, stream_rng};
use crate::optim::{self, covariance_from_hessian, NelderMeadOptions};
use crate::prob::{Method, ProbEstimate};
use crate::quad::adaptive_simpson;
use crate::stats::{self, normal_cdf};
use crate::{Error, Result};

/// `r` above this is reported as pinned at independence.
pub const R_BOUNDARY: f64 = 0.99;
const START_SEED: u64 = 0x6269_7661;

fn check_r(r: f64) -> Result<()> {
    if r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("logistic dependence r must be in (0,1], got {r}")))
    }
}

/// Pickands dependence function of the logistic model,
/// `A(t) = (t^(1/r) + (1−t)^(1/r))^r`.
pub fn pickands_logistic(t: f64, r: f64) -> Result<f64> {
    check_r(r)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("t must be in [0,1], got {t}")));
    }
    if t == 0.0 || t == 1.0 {
        return Ok(1.0);
    }
    let a = 1.0 / r;
    // log-sum-exp keeps small r finite
    let (l1, l2) = (a * t.ln(), a * (1.0 - t).ln());
    let m = l1.max(l2);
    Ok((r * (m + ((l1 - m).exp() + (l2 - m).exp()).ln())).exp())
}

/// Upper tail dependence `χ = 2 − 2^r` of the logistic model.
pub fn tail_dependence(r: f64) -> Result<f64> {
    check_r(r)?;
    Ok(2.0 - 2f64.powf(r))
}

/// Logistic extreme-value copula (the Gumbel copula with `θ = 1/r`).
pub fn logistic_copula_cdf(u: f64, v: f64, r: f64) -> f64 {
    if u <= 0.0 || v <= 0.0 {
        return 0.0;
    }
    if r < 1e-6 {
        return u.min(v);
    }
    if u >= 1.0 {
        return v.min(1.0);
    }
    if v >= 1.0 {
        return u;
    }
    let (z1, z2) = (-u.ln(), -v.ln());
    let a = 1.0 / r;
    let (l1, l2) = (a * z1.ln(), a * z2.ln());
    let m = l1.max(l2);
    let ln_s = m + ((l1 - m).exp() + (l2 - m).exp()).ln();
    (-(r * ln_s).exp()).exp()
}

/// Log density of the logistic model on the `t`-scale, without the margin
/// Jacobians: `log ∂²L/∂z₁∂z₂` with `L = exp(−(z₁^(1/r) + z₂^(1/r))^r)`.
#[inline]
fn logistic_log_kernel(lz1: f64, lz2: f64, r: f64) -> f64 {
    let a = 1.0 / r;
    let (l1, l2) = (a * lz1, a * lz2);
    let m = l1.max(l2);
    let ln_s = m + ((l1 - m).exp() + (l2 - m).exp()).ln();
    let v = (r * ln_s).exp();
    -v + (a - 1.0) * (lz1 + lz2) + (r - 2.0) * ln_s + (v + (1.0 - r) / r).ln()
}

/// Draws `(t₁, t₂)` with `tⱼ = −log Gⱼ(Xⱼ)` from the logistic model, using the
/// positive-stable mixture representation.
pub fn logistic_t_pair(r: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let e1: f64 = -rng.sample::<f64, _>(Open01).ln();
    let e2: f64 = -rng.sample::<f64, _>(Open01).ln();
    if r >= 1.0 - 1e-12 {
        return (e1, e2);
    }
    let u: f64 = std::f64::consts::PI * rng.sample::<f64, _>(Open01);
    let w: f64 = -rng.sample::<f64, _>(Open01).ln();
    // Kanter: E exp(−sS) = exp(−s^r)
    let s = ((r * u).sin() / u.sin().powf(1.0 / r)) * (((1.0 - r) * u).sin() / w).powf((1.0 - r) / r);
    ((e1 / s).powf(r), (e2 / s).powf(r))
}

/// Pairs from the logistic model with stationary GEV margins.
pub fn sample_bev_logistic(m1: &GevParams, m2: &GevParams, r: f64, n: usize, seed: u64) -> (Series, Series) {
    let mut rng = stream_rng(seed, 0);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let (t1, t2) = logistic_t_pair(r, &mut rng);
        x.push(gev_from_t(m1.mu, m1.sigma, m1.xi, t1));
        y.push(gev_from_t(m2.mu, m2.sigma, m2.xi, t2));
    }
    (Series::new(x, "negated"), Series::new(y, "negated"))
}

/// Margin block of a bivariate fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginEstimate {
    pub spec: NonStationarySpec,
    pub location: Vec<Coefficient>,
    pub sigma: Estimate,
    pub xi: Estimate,
}

impl MarginEstimate {
    pub fn theta(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.location.iter().map(|c| c.value).collect();
        t.push(self.sigma.value);
        if !self.spec.fix_shape_to_zero {
            t.push(self.xi.value);
        }
        t
    }

    pub fn stationary_params(&self) -> Option<GevParams> {
        (self.location.len() == 1)
            .then(|| GevParams::new(self.location[0].value, self.sigma.value, self.xi.value).ok())
            .flatten()
    }

    /// GEV at the average fitted location over `design`.
    pub fn params_at_mean(&self, design: &Covariates) -> Option<GevParams> {
        let locs = fit_uni::locations_from(&self.theta(), design);
        if locs.is_empty() {
            return None;
        }
        let mu = locs.iter().sum::<f64>() / locs.len() as f64;
        GevParams::new(mu, self.sigma.value, self.xi.value).ok()
    }

    /// Per-observation `G(0)` for the margin's design.
    pub fn cdf_at_zero(&self, design: &Covariates) -> Vec<f64> {
        fit_uni::locations_from(&self.theta(), design)
            .into_iter()
            .map(|m| 1.0 - crate::prob::exceed_zero(m, self.sigma.value, self.xi.value))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BivLogisticFit {
    pub margin_ttc: MarginEstimate,
    pub margin_thw: MarginEstimate,
    pub r: Estimate,
    /// `2 − 2^r̂`.
    pub chi: f64,
    pub loglik: f64,
    pub aic: f64,
    pub n: usize,
    /// Covariance over margin 1, margin 2, then `r`.
    pub vcov: Vec<Vec<f64>>,
    pub converged: bool,
    pub grad_norm: f64,
    /// `r̂` pinned at independence.
    pub boundary_warning: bool,
    pub diagnostics: Vec<String>,
}

struct MarginModel<'a> {
    values: &'a [f64],
    st: Standardized,
    gumbel: bool,
    dim: usize,
}

impl MarginModel<'_> {
    /// `(log t, −log σ + (1+ξ) log t)` per observation from internal params.
    fn log_t(&self, th: &[f64], out: &mut [f64]) -> Option<(f64, f64)> {
        let k = self.st.k;
        let ln_sigma = th[k + 1];
        if ln_sigma.abs() > 50.0 {
            return None;
        }
        let sigma = ln_sigma.exp();
        let xi = if self.gumbel { 0.0 } else { th[k + 2] };
        for (i, (x, o)) in self.values.iter().zip(out.iter_mut()).enumerate() {
            *o = gev_log_t((x - self.st.location(th, i)) / sigma, xi)?;
        }
        Some((ln_sigma, xi))
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn bev_nll_from_log_t(lz1: &[f64], lz2: &[f64], m1: (f64, f64), m2: (f64, f64), r: f64) -> f64 {
    let mut ll = 0.0;
    for (a, b) in lz1.iter().zip(lz2) {
        ll += logistic_log_kernel(*a, *b, r) - m1.0 + (1.0 + m1.1) * a - m2.0 + (1.0 + m2.1) * b;
    }
    if ll.is_finite() {
        -ll
    } else {
        f64::INFINITY
    }
}

/// Logistic bivariate log-likelihood at natural parameters: margin 1
/// `(μ₀, μ₁…, σ[, ξ])`, margin 2 likewise, then `r`.
pub fn bev_logistic_loglik(
    x: &[f64],
    y: &[f64],
    design_x: &Covariates,
    design_y: &Covariates,
    gumbel: [bool; 2],
    theta: &[f64],
) -> f64 {
    let d1 = design_x.len() + 2 + usize::from(!gumbel[0]);
    let (t1, rest) = theta.split_at(d1);
    let d2 = design_y.len() + 2 + usize::from(!gumbel[1]);
    let (t2, r) = rest.split_at(d2);
    let r = r[0];
    if !(r > 0.0 && r <= 1.0) {
        return f64::NEG_INFINITY;
    }
    let margin = |vals: &[f64], d: &Covariates, t: &[f64], g: bool| -> Option<(Vec<f64>, f64, f64)> {
        let k = d.len();
        let sigma = t[k + 1];
        if !(sigma > 0.0) {
            return None;
        }
        let xi = if g { 0.0 } else { t[k + 2] };
        let mu = fit_uni::locations_from(t, d);
        let lz = vals
            .iter()
            .zip(&mu)
            .map(|(v, m)| gev_log_t((v - m) / sigma, xi))
            .collect::<Option<Vec<f64>>>()?;
        Some((lz, sigma.ln(), xi))
    };
    let (Some(a), Some(b)) = (margin(x, design_x, t1, gumbel[0]), margin(y, design_y, t2, gumbel[1])) else {
        return f64::NEG_INFINITY;
    };
    -bev_nll_from_log_t(&a.0, &b.0, (a.1, a.2), (b.1, b.2), r)
}

/// Full maximum likelihood of the logistic bivariate model. Both series are
/// on the negated (and, if wanted, normalized) scale; `covariates` supplies
/// the columns named in either spec.
pub fn fit_bev_logistic(
    x: &Series,
    y: &Series,
    covariates: &Covariates,
    specs: [&NonStationarySpec; 2],
) -> Result<BivLogisticFit> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::Usage("bivariate series differ in length".into()));
    }
    if n < fit_uni::MIN_SAMPLE {
        return Err(Error::SampleSize {
            needed: fit_uni::MIN_SAMPLE,
            got: n,
        });
    }
    let design = |spec: &NonStationarySpec| -> Result<Covariates> {
        if spec.design_names().is_empty() {
            Ok(Covariates::empty(n))
        } else {
            spec.design(covariates)
        }
    };
    let (dx, dy) = (design(specs[0])?, design(specs[1])?);
    let mut margins = Vec::with_capacity(2);
    let mut x0 = Vec::new();
    let mut step = Vec::new();
    for (s, spec, d) in [(x, specs[0], &dx), (y, specs[1], &dy)] {
        let st = fit_uni::standardize_design(d)?;
        let gumbel = spec.fix_shape_to_zero;
        let uni = fit_uni::fit_gev(s, d, &NonStationarySpec {
            covariate_names: d.names.clone(),
            fix_shape_to_zero: gumbel,
            interactions: vec![],
        })?;
        let start = if uni.converged {
            st.to_internal(&uni.theta(), !gumbel)
        } else {
            fit_uni::internal_start(&s.values, &st, gumbel)
        };
        let sigma0 = start[st.k + 1].exp();
        step.extend(std::iter::repeat_n(0.2 * sigma0, st.k + 1));
        step.push(0.2);
        if !gumbel {
            step.push(0.1);
        }
        x0.extend_from_slice(&start);
        let dim = start.len();
        margins.push(MarginModel {
            values: &s.values,
            st,
            gumbel,
            dim,
        });
    }
    let tau = kendall_tau(&x.values, &y.values)?.tau;
    x0.push(logit((1.0 - tau).clamp(0.05, 0.95)));
    step.push(0.5);

    let (m1, m2) = (&margins[0], &margins[1]);
    let nll = |th: &[f64]| {
        let eta = th[m1.dim + m2.dim];
        if eta.abs() > 30.0 {
            return f64::INFINITY;
        }
        let mut lz1 = vec![0.0; n];
        let mut lz2 = vec![0.0; n];
        let (Some(a), Some(b)) = (m1.log_t(&th[..m1.dim], &mut lz1), m2.log_t(&th[m1.dim..m1.dim + m2.dim], &mut lz2))
        else {
            return f64::INFINITY;
        };
        bev_nll_from_log_t(&lz1, &lz2, a, b, sigmoid(eta))
    };
    let scale: Vec<f64> = step.iter().map(|s| 0.5 * s).collect();
    let starts = optim::jittered_starts(&x0, &scale, 5, START_SEED);
    let opt = optim::minimize(&nll, &starts, &step)
        .ok_or_else(|| Error::Numerical("no feasible bivariate starting point".into()))?;

    let mut natural = m1.st.to_natural(&opt.x[..m1.dim], !m1.gumbel);
    natural.extend(m2.st.to_natural(&opt.x[m1.dim..m1.dim + m2.dim], !m2.gumbel));
    let r = sigmoid(opt.x[m1.dim + m2.dim]);
    natural.push(r);

    let dim = natural.len();
    let h = optim::hessian(&nll, &opt.x);
    let (v_int, pseudo) = covariance_from_hessian(&h);
    let mut jac = DMatrix::zeros(dim, dim);
    let j1 = m1.st.jacobian(natural[m1.dim - 1 - usize::from(!m1.gumbel)], !m1.gumbel);
    let j2 = m2.st.jacobian(natural[m1.dim + m2.dim - 1 - usize::from(!m2.gumbel)], !m2.gumbel);
    jac.view_mut((0, 0), (m1.dim, m1.dim)).copy_from(&j1);
    jac.view_mut((m1.dim, m1.dim), (m2.dim, m2.dim)).copy_from(&j2);
    jac[(dim - 1, dim - 1)] = r * (1.0 - r);
    let vcov = &jac * v_int * jac.transpose();

    let gumbel = [m1.gumbel, m2.gumbel];
    let nat_nll = |t: &[f64]| -bev_logistic_loglik(&x.values, &y.values, &dx, &dy, gumbel, t);
    let boundary = r > R_BOUNDARY;
    let mut g = optim::gradient(&nat_nll, &natural);
    if boundary {
        // the maximum sits on r = 1, where the r-derivative need not vanish
        g.pop();
    }
    let grad_norm = optim::scaled_grad_norm(&g, &natural);
    let loglik = -opt.nll;
    let mut diagnostics = Vec::new();
    let mut converged = loglik.is_finite();
    if boundary {
        diagnostics.push(format!("r estimate {r:.4} is at the independence boundary"));
    } else if pseudo {
        diagnostics.push("Hessian not positive definite; pseudo-inverse used".into());
        converged = false;
    }
    if grad_norm > 1e-4 {
        diagnostics.push(format!("gradient norm {grad_norm:.2e} at reported optimum"));
        converged &= grad_norm < 1e-2;
    }

    let se = |i: usize| vcov[(i, i)].max(0.0).sqrt();
    let margin_block = |offset: usize, spec: &NonStationarySpec, d: &Covariates, g: bool| {
        let k = d.len();
        let mut location = vec![Coefficient {
            name: "mu0".into(),
            value: natural[offset],
            se: se(offset),
        }];
        for (j, name) in d.names.iter().enumerate() {
            location.push(Coefficient {
                name: name.clone(),
                value: natural[offset + 1 + j],
                se: se(offset + 1 + j),
            });
        }
        MarginEstimate {
            spec: spec.clone(),
            location,
            sigma: Estimate {
                value: natural[offset + k + 1],
                se: se(offset + k + 1),
            },
            xi: if g {
                Estimate { value: 0.0, se: 0.0 }
            } else {
                Estimate {
                    value: natural[offset + k + 2],
                    se: se(offset + k + 2),
                }
            },
        }
    };
    Ok(BivLogisticFit {
        margin_ttc: margin_block(0, specs[0], &dx, m1.gumbel),
        margin_thw: margin_block(m1.dim, specs[1], &dy, m2.gumbel),
        r: Estimate { value: r, se: se(dim - 1) },
        chi: 2.0 - 2f64.powf(r),
        loglik,
        aic: 2.0 * dim as f64 - 2.0 * loglik,
        n,
        vcov: (0..dim).map(|i| (0..dim).map(|j| vcov[(i, j)]).collect()).collect(),
        converged,
        grad_norm,
        boundary_warning: boundary,
        diagnostics,
    })
}

/// Rank pseudo-observations `rank/(n+1)` with average ranks for ties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoObservations {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl PseudoObservations {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

pub fn pseudo_observations(x: &[f64], y: &[f64]) -> Result<PseudoObservations> {
    if x.len() != y.len() {
        return Err(Error::Usage("pair components differ in length".into()));
    }
    let n1 = (x.len() + 1) as f64;
    Ok(PseudoObservations {
        u: stats::average_ranks(x).into_iter().map(|r| r / n1).collect(),
        v: stats::average_ranks(y).into_iter().map(|r| r / n1).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KendallTau {
    pub tau: f64,
    pub z: f64,
    pub p_value: f64,
}

fn tie_sums(xs: &[f64]) -> (f64, f64, f64, f64) {
    let s = stats::sorted(xs);
    let (mut t1, mut t2, mut t3, mut pairs) = (0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i < s.len() {
        let mut j = i;
        while j + 1 < s.len() && s[j + 1] == s[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        t1 += t * (t - 1.0) * (2.0 * t + 5.0);
        t2 += t * (t - 1.0);
        t3 += t * (t - 1.0) * (t - 2.0);
        pairs += t * (t - 1.0) / 2.0;
        i = j + 1;
    }
    (t1, t2, t3, pairs)
}

/// Kendall's tau-b with the tie-corrected normal approximation test of
/// `τ = 0`.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<KendallTau> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return Err(Error::Usage("kendall tau needs two equal series of length ≥ 2".into()));
    }
    let mut s = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            let a = (x[i] - x[j]).partial_cmp(&0.0).map_or(0, |o| o as i64);
            let b = (y[i] - y[j]).partial_cmp(&0.0).map_or(0, |o| o as i64);
            s += a * b;
        }
    }
    let nf = n as f64;
    let n0 = nf * (nf - 1.0) / 2.0;
    let (vt, t2, t3, tx) = tie_sums(x);
    let (vu, u2, u3, ty) = tie_sums(y);
    let s = s as f64;
    let tau = s / ((n0 - tx) * (n0 - ty)).sqrt();
    let mut var = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - vt - vu) / 18.0 + t2 * u2 / (2.0 * nf * (nf - 1.0));
    if n > 2 {
        var += t3 * u3 / (9.0 * nf * (nf - 1.0) * (nf - 2.0));
    }
    let z = if var > 0.0 { s / var.sqrt() } else { 0.0 };
    Ok(KendallTau {
        tau,
        z,
        p_value: (2.0 * (1.0 - normal_cdf(z.abs()))).min(1.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapTest {
    pub statistic: f64,
    pub p_value: f64,
    pub n_bootstrap: usize,
    pub seed: u64,
}

fn bootstrap_p(stat: f64, boot: &[f64]) -> f64 {
    (1 + boot.iter().filter(|&&b| b >= stat).count()) as f64 / (boot.len() + 1) as f64
}

/// Cramér-von Mises distance between the empirical copula and the
/// independence copula, with a permutation p-value.
pub fn cvm_independence_test(pobs: &PseudoObservations, n_bootstrap: usize, seed: u64) -> Result<BootstrapTest> {
    let n = pobs.len();
    if n < 20 {
        return Err(Error::SampleSize { needed: 20, got: n });
    }
    let mu: Vec<f64> = (0..n * n).map(|k| 1.0 - pobs.u[k / n].max(pobs.u[k % n])).collect();
    let mv: Vec<f64> = (0..n * n).map(|k| 1.0 - pobs.v[k / n].max(pobs.v[k % n])).collect();
    let nf = n as f64;
    let stat_for = |perm: &[usize]| {
        let mut double = 0.0;
        for i in 0..n {
            let pi = perm[i];
            let row_u = &mu[i * n..(i + 1) * n];
            let row_v = &mv[pi * n..(pi + 1) * n];
            double += (0..n).map(|k| row_u[k] * row_v[perm[k]]).sum::<f64>();
        }
        let single: f64 = (0..n)
            .map(|i| (1.0 - pobs.u[i] * pobs.u[i]) * (1.0 - pobs.v[perm[i]] * pobs.v[perm[i]]))
            .sum();
        double / nf - single / 2.0 + nf / 9.0
    };
    let identity: Vec<usize> = (0..n).collect();
    let statistic = stat_for(&identity);
    let boot: Vec<f64> = (0..n_bootstrap)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(derive_seed(seed, b as u64), 0);
            let mut perm = identity.clone();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            stat_for(&perm)
        })
        .collect();
    Ok(BootstrapTest {
        statistic,
        p_value: bootstrap_p(statistic, &boot),
        n_bootstrap,
        seed,
    })
}

/// One-parameter-family-agnostic Archimedean copula interface.
pub trait ArchimedeanCopula: Sync + Send {
    fn name(&self) -> &'static str;
    fn params(&self) -> Vec<f64>;
    fn generator(&self, t: f64) -> f64;
    fn generator_deriv(&self, t: f64) -> f64;
    fn cdf(&self, u: f64, v: f64) -> f64;
    fn log_density(&self, u: f64, v: f64) -> f64;
    /// `∂C/∂u`, the conditional distribution of `V` given `U = u`.
    fn h_u(&self, u: f64, v: f64) -> f64;

    /// `K(t) = P(C(U,V) ≤ t) = t − φ(t)/φ'(t)`.
    fn kendall_k(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if t >= 1.0 {
            return 1.0;
        }
        let r = self.generator(t) / self.generator_deriv(t);
        if r.is_finite() {
            (t - r).clamp(0.0, 1.0)
        } else {
            t
        }
    }

    /// `τ = 1 + 4 ∫₀¹ φ/φ' dt` by adaptive quadrature.
    fn kendall_tau(&self) -> f64 {
        let f = |t: f64| {
            if t <= 0.0 || t >= 1.0 {
                return 0.0;
            }
            let r = self.generator(t) / self.generator_deriv(t);
            if r.is_finite() {
                r
            } else {
                0.0
            }
        };
        1.0 + 4.0 * adaptive_simpson(f, 0.0, 1.0, 1e-12, 40)
    }

    /// Conditional inversion: `u` uniform, `v` solves `h_u(u, v) = p`.
    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> PseudoObservations {
        let mut u = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            let a: f64 = rng.sample(Open01);
            let p: f64 = rng.sample(Open01);
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..52 {
                let mid = 0.5 * (lo + hi);
                if self.h_u(a, mid) < p {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            u.push(a);
            v.push(0.5 * (lo + hi));
        }
        PseudoObservations { u, v }
    }
}

/// Joe-Frank (BB8) copula, `θ ≥ 1`, `δ ∈ (0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JoeFrank {
    pub theta: f64,
    pub delta: f64,
}

impl JoeFrank {
    pub fn new(theta: f64, delta: f64) -> Result<Self> {
        if !(theta >= 1.0 && delta > 0.0 && delta <= 1.0) {
            return Err(Error::Domain(format!(
                "Joe-Frank needs θ ≥ 1 and δ in (0,1], got ({theta}, {delta})"
            )));
        }
        Ok(Self { theta, delta })
    }

    fn eta(&self) -> f64 {
        1.0 - (1.0 - self.delta).powf(self.theta)
    }

    /// `(x, y, A, B, w)` of the closed forms.
    #[inline]
    fn parts(&self, u: f64, v: f64) -> (f64, f64, f64, f64, f64) {
        let x = 1.0 - self.delta * u;
        let y = 1.0 - self.delta * v;
        let a = 1.0 - x.powf(self.theta);
        let b = 1.0 - y.powf(self.theta);
        (x, y, a, b, 1.0 - a * b / self.eta())
    }
}

impl ArchimedeanCopula for JoeFrank {
    fn name(&self) -> &'static str {
        "joe_frank"
    }

    fn params(&self) -> Vec<f64> {
        vec![self.theta, self.delta]
    }

    fn generator(&self, t: f64) -> f64 {
        -((1.0 - (1.0 - self.delta * t).powf(self.theta)) / self.eta()).ln()
    }

    fn generator_deriv(&self, t: f64) -> f64 {
        let y = 1.0 - self.delta * t;
        -self.theta * self.delta * y.powf(self.theta - 1.0) / (1.0 - y.powf(self.theta))
    }

    fn cdf(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (u.clamp(0.0, 1.0), v.clamp(0.0, 1.0));
        let (_, _, _, _, w) = self.parts(u, v);
        ((1.0 - w.max(0.0).powf(1.0 / self.theta)) / self.delta).clamp(0.0, u.min(v))
    }

    fn log_density(&self, u: f64, v: f64) -> f64 {
        let (x, y, a, b, w) = self.parts(u, v);
        let eta = self.eta();
        let th = self.theta;
        (th * self.delta / eta).ln() + (th - 1.0) * (x * y).ln() + (1.0 / th - 2.0) * w.ln()
            + (1.0 - a * b / (th * eta)).ln()
    }

    fn h_u(&self, u: f64, v: f64) -> f64 {
        if v <= 0.0 {
            return 0.0;
        }
        if v >= 1.0 {
            return 1.0;
        }
        let (x, _, _, b, w) = self.parts(u, v);
        let th = self.theta;
        (w.powf(1.0 / th - 1.0) * b * x.powf(th - 1.0) / self.eta()).clamp(0.0, 1.0)
    }
}

/// Gumbel (logistic extreme-value) copula, `θ = 1/r ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GumbelCopula {
    pub theta: f64,
}

impl GumbelCopula {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta >= 1.0) {
            return Err(Error::Domain(format!("Gumbel copula needs θ ≥ 1, got {theta}")));
        }
        Ok(Self { theta })
    }
}

impl ArchimedeanCopula for GumbelCopula {
    fn name(&self) -> &'static str {
        "gumbel"
    }

    fn params(&self) -> Vec<f64> {
        vec![self.theta]
    }

    fn generator(&self, t: f64) -> f64 {
        (-t.ln()).powf(self.theta)
    }

    fn generator_deriv(&self, t: f64) -> f64 {
        -self.theta * (-t.ln()).powf(self.theta - 1.0) / t
    }

    fn cdf(&self, u: f64, v: f64) -> f64 {
        logistic_copula_cdf(u, v, 1.0 / self.theta)
    }

    fn log_density(&self, u: f64, v: f64) -> f64 {
        let (lz1, lz2) = ((-u.ln()).ln(), (-v.ln()).ln());
        logistic_log_kernel(lz1, lz2, 1.0 / self.theta) - u.ln() - v.ln()
    }

    fn h_u(&self, u: f64, v: f64) -> f64 {
        if v <= 0.0 {
            return 0.0;
        }
        if v >= 1.0 {
            return 1.0;
        }
        let r = 1.0 / self.theta;
        let (z1, z2) = (-u.ln(), -v.ln());
        let s = z1.powf(self.theta) + z2.powf(self.theta);
        let c = (-s.powf(r)).exp();
        (c * s.powf(r - 1.0) * z1.powf(self.theta - 1.0) / u).clamp(0.0, 1.0)
    }

    fn kendall_tau(&self) -> f64 {
        1.0 - 1.0 / self.theta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CopulaFamily {
    JoeFrank,
    Gumbel,
}

impl CopulaFamily {
    fn n_params(self) -> usize {
        match self {
            CopulaFamily::JoeFrank => 2,
            CopulaFamily::Gumbel => 1,
        }
    }

    /// Natural parameters from the unconstrained vector.
    fn from_internal(self, th: &[f64]) -> Vec<f64> {
        match self {
            CopulaFamily::JoeFrank => vec![1.0 + th[0].exp(), sigmoid(th[1])],
            CopulaFamily::Gumbel => vec![1.0 + th[0].exp()],
        }
    }

    fn to_internal(self, p: &[f64]) -> Vec<f64> {
        let a = (p[0] - 1.0).max(1e-9).ln();
        match self {
            CopulaFamily::JoeFrank => vec![a, logit(p[1].clamp(1e-9, 1.0 - 1e-9))],
            CopulaFamily::Gumbel => vec![a],
        }
    }

    pub fn build(self, p: &[f64]) -> Result<Box<dyn ArchimedeanCopula>> {
        Ok(match self {
            CopulaFamily::JoeFrank => Box::new(JoeFrank::new(p[0], p[1])?),
            CopulaFamily::Gumbel => Box::new(GumbelCopula::new(p[0])?),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CopulaFit {
    pub family: CopulaFamily,
    /// `(θ, δ)` for Joe-Frank, `(θ)` for Gumbel.
    pub params: Vec<f64>,
    pub se: Vec<f64>,
    pub loglik: f64,
    pub aic: f64,
    pub kendall_tau_implied: f64,
    pub n: usize,
    pub converged: bool,
    pub boundary_warning: bool,
    pub grad_norm: f64,
}

impl CopulaFit {
    pub fn copula(&self) -> Box<dyn ArchimedeanCopula> {
        self.family.build(&self.params).expect("fitted parameters are in the domain")
    }
}

fn copula_nll(family: CopulaFamily, pobs: &PseudoObservations, params: &[f64]) -> f64 {
    let Ok(c) = family.build(params) else {
        return f64::INFINITY;
    };
    let ll: f64 = pobs.u.iter().zip(&pobs.v).map(|(u, v)| c.log_density(*u, *v)).sum();
    if ll.is_finite() {
        -ll
    } else {
        f64::INFINITY
    }
}

fn internal_nll(family: CopulaFamily, pobs: &PseudoObservations, th: &[f64]) -> f64 {
    if th.iter().any(|t| t.abs() > 20.0) {
        return f64::INFINITY;
    }
    copula_nll(family, pobs, &family.from_internal(th))
}

fn copula_starts(family: CopulaFamily, pobs: &PseudoObservations) -> Vec<Vec<f64>> {
    let tau = kendall_tau(&pobs.u, &pobs.v).map(|k| k.tau).unwrap_or(0.0).clamp(0.02, 0.9);
    let theta = 1.0 / (1.0 - tau);
    match family {
        CopulaFamily::JoeFrank => [(theta, 0.9), (1.5 * theta, 0.5), (theta, 0.99), (1.0 + 0.5 * tau, 0.7)]
            .iter()
            .map(|&(t, d)| family.to_internal(&[t, d]))
            .collect(),
        CopulaFamily::Gumbel => vec![family.to_internal(&[theta])],
    }
}

/// Maximum likelihood on pseudo-observations.
pub fn fit_copula(family: CopulaFamily, pobs: &PseudoObservations) -> Result<CopulaFit> {
    if pobs.len() < 50 {
        return Err(Error::SampleSize {
            needed: 50,
            got: pobs.len(),
        });
    }
    let nll = |th: &[f64]| internal_nll(family, pobs, th);
    let step = vec![0.5; family.n_params()];
    let opt = optim::minimize(&nll, &copula_starts(family, pobs), &step)
        .ok_or_else(|| Error::Numerical("no feasible copula starting point".into()))?;
    finish_copula_fit(family, pobs, &opt.x, opt.nll, true)
}

pub fn fit_copula_joe_frank(pobs: &PseudoObservations) -> Result<CopulaFit> {
    fit_copula(CopulaFamily::JoeFrank, pobs)
}

fn finish_copula_fit(
    family: CopulaFamily,
    pobs: &PseudoObservations,
    x: &[f64],
    nll_value: f64,
    with_se: bool,
) -> Result<CopulaFit> {
    let params = family.from_internal(x);
    let boundary = params[0] < 1.0 + 1e-3 || (family == CopulaFamily::JoeFrank && params[1] > 1.0 - 1e-3);
    let (se, grad_norm, pseudo) = if with_se {
        let nll = |th: &[f64]| internal_nll(family, pobs, th);
        let h = optim::hessian(&nll, x);
        let (v, pseudo) = covariance_from_hessian(&h);
        let jac: Vec<f64> = match family {
            CopulaFamily::JoeFrank => vec![params[0] - 1.0, params[1] * (1.0 - params[1])],
            CopulaFamily::Gumbel => vec![params[0] - 1.0],
        };
        let se = (0..params.len()).map(|i| (v[(i, i)].max(0.0)).sqrt() * jac[i]).collect();
        let nat = |p: &[f64]| copula_nll(family, pobs, p);
        let mut g = optim::gradient(&nat, &params);
        if boundary {
            g.clear();
        }
        (se, optim::scaled_grad_norm(&g, &params), pseudo)
    } else {
        (vec![f64::NAN; params.len()], f64::NAN, false)
    };
    let copula = family.build(&params)?;
    Ok(CopulaFit {
        family,
        kendall_tau_implied: copula.kendall_tau(),
        se,
        loglik: -nll_value,
        aic: 2.0 * params.len() as f64 + 2.0 * nll_value,
        n: pobs.len(),
        converged: nll_value.is_finite() && (boundary || !pseudo),
        boundary_warning: boundary,
        grad_norm,
        params,
    })
}

/// Cheap refit used inside the parametric bootstrap.
fn refit_quick(family: CopulaFamily, pobs: &PseudoObservations, start: &[f64]) -> Option<Vec<f64>> {
    let nll = |th: &[f64]| internal_nll(family, pobs, th);
    let x0 = family.to_internal(start);
    if !nll(&x0).is_finite() {
        return None;
    }
    let opts = NelderMeadOptions {
        max_evals: 2000,
        ftol: 1e-9,
        xtol: 1e-6,
        restarts: 0,
    };
    let m = optim::nelder_mead(&nll, &x0, &vec![0.3; x0.len()], &opts);
    m.f.is_finite().then(|| family.from_internal(&m.x))
}

/// `Wᵢ = #{j : Uⱼ < Uᵢ, Vⱼ < Vᵢ}/n`, sorted.
fn kendall_pseudo(pobs: &PseudoObservations) -> Vec<f64> {
    let n = pobs.len();
    let mut w: Vec<f64> = (0..n)
        .map(|i| {
            (0..n).filter(|&j| pobs.u[j] < pobs.u[i] && pobs.v[j] < pobs.v[i]).count() as f64 / n as f64
        })
        .collect();
    w.sort_by(f64::total_cmp);
    w
}

/// Cramér-von Mises `n ∫ (Kₙ − K)² dK` (exact for the step function `Kₙ`)
/// and Kolmogorov-Smirnov `√n sup |Kₙ − K|`.
fn kendall_process_stats(w_sorted: &[f64], k: impl Fn(f64) -> f64) -> (f64, f64) {
    let n = w_sorted.len();
    let nf = n as f64;
    let mut cvm = 0.0;
    let mut ks: f64 = 0.0;
    let mut prev_k = 0.0;
    let mut level = 0.0;
    let mut i = 0;
    while i < n {
        let t = w_sorted[i];
        let mut j = i;
        while j + 1 < n && w_sorted[j + 1] == t {
            j += 1;
        }
        let kt = k(t);
        cvm += ((kt - level).powi(3) - (prev_k - level).powi(3)) / 3.0;
        ks = ks.max((kt - level).abs());
        level = (j + 1) as f64 / nf;
        ks = ks.max((kt - level).abs());
        prev_k = kt;
        i = j + 1;
    }
    cvm += ((1.0 - level).powi(3) - (prev_k - level).powi(3)) / 3.0;
    (nf * cvm, nf.sqrt() * ks)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GofResult {
    pub cvm_statistic: f64,
    pub cvm_p: f64,
    pub ks_statistic: f64,
    pub ks_p: f64,
    pub n_bootstrap: usize,
    /// Bootstrap replicates whose refit failed and were dropped.
    pub failed_refits: usize,
    pub seed: u64,
}

/// Parametric-bootstrap goodness of fit on Kendall's process.
pub fn copula_gof(fit: &CopulaFit, pobs: &PseudoObservations, n_bootstrap: usize, seed: u64) -> Result<GofResult> {
    if !fit.converged {
        return Err(Error::Usage("goodness of fit needs a converged copula fit".into()));
    }
    let copula = fit.copula();
    let (cvm, ks) = kendall_process_stats(&kendall_pseudo(pobs), |t| copula.kendall_k(t));
    let n = pobs.len();
    let boot: Vec<Option<(f64, f64)>> = (0..n_bootstrap)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(derive_seed(seed, b as u64), 0);
            let raw = copula.sample(n, &mut rng);
            let pb = pseudo_observations(&raw.u, &raw.v).ok()?;
            let p = refit_quick(fit.family, &pb, &fit.params)?;
            let c = fit.family.build(&p).ok()?;
            Some(kendall_process_stats(&kendall_pseudo(&pb), |t| c.kendall_k(t)))
        })
        .collect();
    let ok: Vec<(f64, f64)> = boot.iter().flatten().copied().collect();
    let cvm_b: Vec<f64> = ok.iter().map(|b| b.0).collect();
    let ks_b: Vec<f64> = ok.iter().map(|b| b.1).collect();
    Ok(GofResult {
        cvm_statistic: cvm,
        cvm_p: bootstrap_p(cvm, &cvm_b),
        ks_statistic: ks,
        ks_p: bootstrap_p(ks, &ks_b),
        n_bootstrap,
        failed_refits: n_bootstrap - ok.len(),
        seed,
    })
}

/// Dependence structure for the joint probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dependence {
    Logistic { r: f64 },
    JoeFrank { theta: f64, delta: f64 },
    Gumbel { theta: f64 },
}

impl Dependence {
    pub fn cdf(&self, u: f64, v: f64) -> f64 {
        match *self {
            Dependence::Logistic { r } => logistic_copula_cdf(u, v, r),
            Dependence::JoeFrank { theta, delta } => JoeFrank { theta, delta }.cdf(u, v),
            Dependence::Gumbel { theta } => logistic_copula_cdf(u, v, 1.0 / theta),
        }
    }

    pub fn from_copula_fit(fit: &CopulaFit) -> Self {
        match fit.family {
            CopulaFamily::JoeFrank => Dependence::JoeFrank {
                theta: fit.params[0],
                delta: fit.params[1],
            },
            CopulaFamily::Gumbel => Dependence::Gumbel { theta: fit.params[0] },
        }
    }
}

/// Joint and per-surrogate collision probabilities.
///
/// - `any`: at least one negated measure reaches zero, `1 − C(F(0), G(0))`.
/// - `head_on`, `rear_end`: the marginal masses `1 − F(0)` and `1 − G(0)`.
/// - `both`: inclusion-exclusion, `1 − F(0) − G(0) + C(F(0), G(0))`.
///
/// With non-stationary margins every term is averaged over observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointProbability {
    pub any: ProbEstimate,
    pub head_on: f64,
    pub rear_end: f64,
    pub both: f64,
}

pub fn joint_collision_probability(f0: f64, g0: f64, dep: &Dependence) -> Result<JointProbability> {
    joint_collision_probability_averaged(&[f0], &[g0], dep)
}

pub fn joint_collision_probability_averaged(f0: &[f64], g0: &[f64], dep: &Dependence) -> Result<JointProbability> {
    if f0.len() != g0.len() || f0.is_empty() {
        return Err(Error::Usage("margin CDF vectors must be non-empty and equal in length".into()));
    }
    if f0.iter().chain(g0).any(|p| !(*p > 0.0 && *p <= 1.0)) {
        return Err(Error::Domain("margin CDF values must be in (0,1]".into()));
    }
    let n = f0.len() as f64;
    let (mut any, mut ho, mut re) = (0.0, 0.0, 0.0);
    for (f, g) in f0.iter().zip(g0) {
        any += 1.0 - dep.cdf(*f, *g);
        ho += 1.0 - f;
        re += 1.0 - g;
    }
    let (any, ho, re) = (any / n, ho / n, re / n);
    Ok(JointProbability {
        any: ProbEstimate::point(any, Method::Bivariate),
        head_on: ho,
        rear_end: re,
        both: (ho + re - any).max(0.0),
    })
}

/// Gridded density for contour plots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row-major, `z[j][i]` at `(xs[i], ys[j])`.
    pub z: Vec<Vec<f64>>,
}

/// Logistic bivariate density with stationary GEV margins on a grid.
pub fn bev_density_grid(m1: &GevParams, m2: &GevParams, r: f64, xs: &[f64], ys: &[f64]) -> DensityGrid {
    let z = ys
        .iter()
        .map(|&y| {
            xs.iter()
                .map(|&x| {
                    let a = gev_log_t((x - m1.mu) / m1.sigma, m1.xi);
                    let b = gev_log_t((y - m2.mu) / m2.sigma, m2.xi);
                    match (a, b) {
                        (Some(a), Some(b)) => (logistic_log_kernel(a, b, r) - m1.sigma.ln() + (1.0 + m1.xi) * a
                            - m2.sigma.ln()
                            + (1.0 + m2.xi) * b)
                            .exp(),
                        _ => 0.0,
                    }
                })
                .collect()
        })
        .collect();
    DensityGrid {
        xs: xs.to_vec(),
        ys: ys.to_vec(),
        z,
    }
}

/// Copula density on an interior grid of the unit square.
pub fn copula_density_grid(c: &dyn ArchimedeanCopula, points: usize) -> DensityGrid {
    let g: Vec<f64> = (1..=points).map(|i| i as f64 / (points + 1) as f64).collect();
    let z = g
        .iter()
        .map(|&v| g.iter().map(|&u| c.log_density(u, v).exp()).collect())
        .collect();
    DensityGrid {
        xs: g.clone(),
        ys: g,
        z,
    }
}
