//! Maximum-likelihood fitting of stationary and covariate-located GEV and
//! Gumbel models for negated surrogate measures.
//!
//! The location is linear in the covariates, `μ(z) = μ₀ + Σ μⱼ zⱼ`; scale and
//! shape are constant. Internally covariates are centred and scaled and the
//! scale enters as `log σ`, so the simplex works on a well-conditioned,
//! unconstrained vector. Reported estimates, standard errors and the
//! covariance are mapped back to the natural `(μ₀, μ₁…μ_k, σ, ξ)` scale.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::dataset::{Covariates, Series};
use crate::dist::{gev_log_t, gev_logpdf_std, GevParams, EPS_GUMBEL};
use crate::mc::stream_rng;
use crate::optim::{self, covariance_from_hessian};
use crate::stats::{self, quantile_sorted};
use crate::{Error, Result};

pub use crate::stats::ks_statistic;

pub const MIN_SAMPLE: usize = 30;
const START_SEED: u64 = 0x6576_7473;
const N_STARTS: usize = 5;

/// Product covariate built from two existing columns (e.g. female × 22-34).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub name: String,
    pub a: String,
    pub b: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonStationarySpec {
    /// Ordered location covariates; empty means stationary.
    pub covariate_names: Vec<String>,
    /// Gumbel model (`ξ = 0`).
    pub fix_shape_to_zero: bool,
    #[serde(default)]
    pub interactions: Vec<Interaction>,
}

impl NonStationarySpec {
    pub fn stationary() -> Self {
        Self::default()
    }

    pub fn gumbel() -> Self {
        Self {
            fix_shape_to_zero: true,
            ..Self::default()
        }
    }

    pub fn with_covariates<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        Self {
            covariate_names: names.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    /// Names of every location term after the intercept, interactions last.
    pub fn design_names(&self) -> Vec<String> {
        self.covariate_names
            .iter()
            .cloned()
            .chain(self.interactions.iter().map(|i| i.name.clone()))
            .collect()
    }

    /// Selects and builds the location design from the available columns.
    pub fn design(&self, available: &Covariates) -> Result<Covariates> {
        let names = self.design_names();
        let mut seen = std::collections::HashSet::new();
        if let Some(d) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::Usage(format!("duplicate covariate `{d}` in model spec")));
        }
        let mut design = available.select(&self.covariate_names)?;
        for it in &self.interactions {
            let a = available.column(&it.a).ok_or_else(|| Error::MissingColumn(it.a.clone()))?;
            let b = available.column(&it.b).ok_or_else(|| Error::MissingColumn(it.b.clone()))?;
            design.push(it.name.clone(), a.iter().zip(b).map(|(x, y)| x * y).collect())?;
        }
        Ok(design)
    }

    pub fn n_params(&self) -> usize {
        1 + self.covariate_names.len() + self.interactions.len() + 1 + usize::from(!self.fix_shape_to_zero)
    }

    /// `self` is a special case of `other`.
    pub fn is_nested_in(&self, other: &NonStationarySpec) -> bool {
        let theirs = other.design_names();
        self.design_names().iter().all(|n| theirs.contains(n))
            && (self.fix_shape_to_zero || !other.fix_shape_to_zero)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gev,
    Gumbel,
    Gpd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UniFit {
    pub family: Family,
    pub spec: NonStationarySpec,
    /// Intercept `mu0` followed by one entry per design column.
    pub location: Vec<Coefficient>,
    pub sigma: Estimate,
    /// `0` with zero standard error for Gumbel fits.
    pub xi: Estimate,
    pub loglik: f64,
    pub n: usize,
    /// Covariance over `(μ₀, μ₁…μ_k, σ[, ξ])`.
    pub vcov: Vec<Vec<f64>>,
    pub converged: bool,
    /// Scaled max-norm of the log-likelihood gradient at the estimate.
    pub grad_norm: f64,
    pub pseudo_inverse: bool,
    pub diagnostics: Vec<String>,
    pub data_fingerprint: u64,
}

impl UniFit {
    pub fn n_params(&self) -> usize {
        self.spec.n_params()
    }

    pub fn aic(&self) -> f64 {
        2.0 * self.n_params() as f64 - 2.0 * self.loglik
    }

    /// Natural parameter vector `(μ₀, μ₁…μ_k, σ[, ξ])`.
    pub fn theta(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.location.iter().map(|c| c.value).collect();
        t.push(self.sigma.value);
        if self.family == Family::Gev {
            t.push(self.xi.value);
        }
        t
    }

    pub fn vcov_matrix(&self) -> DMatrix<f64> {
        let k = self.vcov.len();
        DMatrix::from_fn(k, k, |i, j| self.vcov[i][j])
    }

    pub fn is_stationary(&self) -> bool {
        self.location.len() == 1
    }

    /// Per-observation locations for a design built by [`NonStationarySpec::design`].
    pub fn locations(&self, design: &Covariates) -> Vec<f64> {
        locations_from(&self.theta(), design)
    }

    pub fn stationary_params(&self) -> Option<GevParams> {
        self.is_stationary()
            .then(|| GevParams::new(self.location[0].value, self.sigma.value, self.xi.value).ok())
            .flatten()
    }

    /// Rule for offering a Gumbel refit: `|ξ̂| < 2·SE(ξ̂)`.
    pub fn gumbel_suggested(&self) -> bool {
        self.family == Family::Gev && self.xi.se.is_finite() && self.xi.value.abs() < 2.0 * self.xi.se
    }
}

/// Location vector `μᵢ = θ₀ + Σ θⱼ zᵢⱼ`.
pub fn locations_from(theta: &[f64], design: &Covariates) -> Vec<f64> {
    let mut mu = vec![theta[0]; design.rows()];
    for (j, col) in design.columns.iter().enumerate() {
        for (m, z) in mu.iter_mut().zip(col) {
            *m += theta[1 + j] * z;
        }
    }
    mu
}

/// GEV (or Gumbel) log-likelihood at natural parameters
/// `(μ₀, μ₁…μ_k, σ[, ξ])`; `-∞` when any observation leaves the support.
pub fn gev_loglik(values: &[f64], design: &Covariates, theta: &[f64], gumbel: bool) -> f64 {
    let k = design.len();
    let sigma = theta[k + 1];
    if !(sigma > 0.0) {
        return f64::NEG_INFINITY;
    }
    let xi = if gumbel { 0.0 } else { theta[k + 2] };
    let mu = locations_from(theta, design);
    let ln_sigma = sigma.ln();
    let mut ll = 0.0;
    for (x, m) in values.iter().zip(&mu) {
        let lp = gev_logpdf_std((x - m) / sigma, xi);
        if lp == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        ll += lp - ln_sigma;
    }
    ll
}

pub(crate) fn fingerprint(values: &[f64]) -> u64 {
    // FNV-1a over the bit patterns
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Probability-weighted-moment GEV estimates `(μ, σ, ξ)`.
pub fn pwm_start(values: &[f64]) -> (f64, f64, f64) {
    let xs = stats::sorted(values);
    let n = xs.len() as f64;
    let mut b0 = 0.0;
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let i = i as f64;
        b0 += x;
        b1 += i / (n - 1.0) * x;
        b2 += i * (i - 1.0) / ((n - 1.0) * (n - 2.0)) * x;
    }
    b0 /= n;
    b1 /= n;
    b2 /= n;
    let l2 = 2.0 * b1 - b0;
    let c = l2 / (3.0 * b2 - b0) - 2f64.ln() / 3f64.ln();
    let k = 7.8590 * c + 2.9554 * c * c;
    if !k.is_finite() || k.abs() < 1e-4 || l2 <= 0.0 {
        let sigma = (stats::sd(values) * 6f64.sqrt() / std::f64::consts::PI).max(1e-8);
        return (b0 - 0.577_215_664_9 * sigma, sigma, 0.0);
    }
    let k = k.clamp(-0.9, 0.9);
    let g = gamma(1.0 + k);
    let sigma = l2 * k / (g * (1.0 - 2f64.powf(-k)));
    let mu = b0 + sigma * (g - 1.0) / k;
    (mu, sigma, -k)
}

/// Least squares of `y` on `[1, X]`; `None` when singular.
fn ols(y: &[f64], cols: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = y.len();
    let p = cols.len() + 1;
    let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { cols[j - 1][i] });
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * nalgebra::DVector::from_column_slice(y);
    xtx.cholesky().map(|c| c.solve(&xty).as_slice().to_vec())
}

pub(crate) struct Standardized {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    /// Row-major `n × k`.
    pub rows: Vec<f64>,
    pub k: usize,
}

pub(crate) fn standardize_design(design: &Covariates) -> Result<Standardized> {
    let k = design.len();
    let n = design.rows();
    let mut means = Vec::with_capacity(k);
    let mut scales = Vec::with_capacity(k);
    for (name, col) in design.names.iter().zip(&design.columns) {
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateDesign(format!("covariate `{name}` has non-finite values")));
        }
        let m = stats::mean(col);
        let s = stats::sd(col);
        if !(s > 1e-12 * m.abs().max(1.0)) {
            return Err(Error::DegenerateDesign(format!("covariate `{name}` is constant")));
        }
        means.push(m);
        scales.push(s);
    }
    let mut rows = vec![0.0; n * k];
    for i in 0..n {
        for j in 0..k {
            rows[i * k + j] = (design.columns[j][i] - means[j]) / scales[j];
        }
    }
    Ok(Standardized {
        means,
        scales,
        rows,
        k,
    })
}

impl Standardized {
    /// Jacobian of natural `(β₀, β, σ[, ξ])` w.r.t. internal `(γ₀, γ, log σ[, ξ])`.
    pub fn jacobian(&self, sigma: f64, with_xi: bool) -> DMatrix<f64> {
        let k = self.k;
        let dim = k + 2 + usize::from(with_xi);
        let mut j = DMatrix::zeros(dim, dim);
        j[(0, 0)] = 1.0;
        for c in 0..k {
            j[(0, 1 + c)] = -self.means[c] / self.scales[c];
            j[(1 + c, 1 + c)] = 1.0 / self.scales[c];
        }
        j[(k + 1, k + 1)] = sigma;
        if with_xi {
            j[(k + 2, k + 2)] = 1.0;
        }
        j
    }

    pub fn to_natural(&self, internal: &[f64], with_xi: bool) -> Vec<f64> {
        let k = self.k;
        let mut out = Vec::with_capacity(internal.len());
        let mut b0 = internal[0];
        for c in 0..k {
            b0 -= internal[1 + c] * self.means[c] / self.scales[c];
        }
        out.push(b0);
        for c in 0..k {
            out.push(internal[1 + c] / self.scales[c]);
        }
        out.push(internal[k + 1].exp());
        if with_xi {
            out.push(internal[k + 2]);
        }
        out
    }

    pub fn to_internal(&self, natural: &[f64], with_xi: bool) -> Vec<f64> {
        let k = self.k;
        let mut out = Vec::with_capacity(natural.len());
        let mut g0 = natural[0];
        for c in 0..k {
            g0 += natural[1 + c] * self.means[c];
        }
        out.push(g0);
        for c in 0..k {
            out.push(natural[1 + c] * self.scales[c]);
        }
        out.push(natural[k + 1].ln());
        if with_xi {
            out.push(natural[k + 2]);
        }
        out
    }

    /// Location of observation `i` under internal coefficients.
    #[inline]
    pub fn location(&self, internal: &[f64], i: usize) -> f64 {
        let row = &self.rows[i * self.k..(i + 1) * self.k];
        internal[0] + row.iter().zip(&internal[1..=self.k]).map(|(z, g)| z * g).sum::<f64>()
    }
}

/// Negative log-likelihood over internal parameters.
pub(crate) fn internal_nll(values: &[f64], st: &Standardized, th: &[f64], gumbel: bool) -> f64 {
    let k = st.k;
    let ln_sigma = th[k + 1];
    if !ln_sigma.is_finite() || ln_sigma.abs() > 50.0 {
        return f64::INFINITY;
    }
    let sigma = ln_sigma.exp();
    let xi = if gumbel { 0.0 } else { th[k + 2] };
    let mut nll = values.len() as f64 * ln_sigma;
    for (i, x) in values.iter().enumerate() {
        let z = (x - st.location(th, i)) / sigma;
        let lp = gev_logpdf_std(z, xi);
        if !lp.is_finite() {
            return f64::INFINITY;
        }
        nll -= lp;
    }
    nll
}

/// Starting vector on the internal scale from OLS + PWM on the residuals.
pub(crate) fn internal_start(values: &[f64], st: &Standardized, gumbel: bool) -> Vec<f64> {
    let n = values.len();
    let cols: Vec<Vec<f64>> = (0..st.k)
        .map(|c| (0..n).map(|i| st.rows[i * st.k + c]).collect())
        .collect();
    let beta = ols(values, &cols).unwrap_or_else(|| {
        let mut b = vec![0.0; st.k + 1];
        b[0] = stats::mean(values);
        b
    });
    let resid: Vec<f64> = (0..n)
        .map(|i| values[i] - (beta[0] + (0..st.k).map(|c| beta[1 + c] * cols[c][i]).sum::<f64>()))
        .collect();
    let (mu_r, sigma, xi) = pwm_start(&resid);
    let mut th = beta;
    th[0] += mu_r;
    th.push(sigma.max(1e-6).ln());
    if !gumbel {
        th.push(xi.clamp(-0.45, 0.45));
    }
    let mut th_ok = th.clone();
    // pull the shape towards zero and widen the scale until every point is
    // inside the support
    for attempt in 0..40 {
        if internal_nll(values, st, &th_ok, gumbel).is_finite() {
            return th_ok;
        }
        th_ok = th.clone();
        let shrink = 0.8f64.powi(attempt + 1);
        th_ok[st.k + 1] += 0.1 * (attempt + 1) as f64;
        if !gumbel {
            th_ok[st.k + 2] *= shrink;
        }
    }
    th_ok
}

/// Fits a GEV (or Gumbel, when `spec.fix_shape_to_zero`) with covariate
/// dependent location by maximum likelihood.
///
/// Non-convergence does not error: the result comes back with
/// `converged = false` and diagnostics.
pub fn fit_gev(series: &Series, covariates: &Covariates, spec: &NonStationarySpec) -> Result<UniFit> {
    let values = &series.values;
    let n = values.len();
    if n < MIN_SAMPLE {
        return Err(Error::SampleSize {
            needed: MIN_SAMPLE,
            got: n,
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("series contains non-finite values".into()));
    }
    let design = if spec.design_names().is_empty() {
        Covariates::empty(n)
    } else {
        if covariates.rows() != n {
            return Err(Error::Usage(format!(
                "covariate rows ({}) differ from series length ({n})",
                covariates.rows()
            )));
        }
        spec.design(covariates)?
    };
    let st = standardize_design(&design)?;
    let gumbel = spec.fix_shape_to_zero;
    let with_xi = !gumbel;

    let x0 = internal_start(values, &st, gumbel);
    let sigma0 = x0[st.k + 1].exp();
    let mut step: Vec<f64> = vec![0.2 * sigma0; st.k + 1];
    step.push(0.2);
    if with_xi {
        step.push(0.1);
    }
    let scale: Vec<f64> = step.iter().map(|s| 0.5 * s).collect();
    let starts = optim::jittered_starts(&x0, &scale, N_STARTS, START_SEED);
    let nll = |th: &[f64]| internal_nll(values, &st, th, gumbel);

    let mut diagnostics = Vec::new();
    let Some(opt) = optim::minimize(&nll, &starts, &step) else {
        diagnostics.push("no feasible starting point".to_string());
        return Ok(failed_fit(spec, &design, &st, &x0, n, values, diagnostics));
    };

    let h = optim::hessian(&nll, &opt.x);
    let (v_int, pseudo) = covariance_from_hessian(&h);
    let natural = st.to_natural(&opt.x, with_xi);
    let jac = st.jacobian(natural[st.k + 1], with_xi);
    let vcov = &jac * v_int * jac.transpose();

    let loglik = -opt.nll;
    let nat_ll = |t: &[f64]| -gev_loglik(values, &design, t, gumbel);
    let grad_norm = optim::scaled_grad_norm(&optim::gradient(&nat_ll, &natural), &natural);

    let xi = if with_xi { natural[st.k + 2] } else { 0.0 };
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
    if !opt.simplex_converged {
        diagnostics.push("simplex stopped at evaluation budget".into());
    }

    Ok(assemble(
        spec, &design, natural, vcov, loglik, n, converged, grad_norm, pseudo, diagnostics, values,
    ))
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    spec: &NonStationarySpec,
    design: &Covariates,
    natural: Vec<f64>,
    vcov: DMatrix<f64>,
    loglik: f64,
    n: usize,
    converged: bool,
    grad_norm: f64,
    pseudo_inverse: bool,
    diagnostics: Vec<String>,
    values: &[f64],
) -> UniFit {
    let k = design.len();
    let gumbel = spec.fix_shape_to_zero;
    let se = |i: usize| vcov[(i, i)].max(0.0).sqrt();
    let mut location = vec![Coefficient {
        name: "mu0".into(),
        value: natural[0],
        se: se(0),
    }];
    for (j, name) in design.names.iter().enumerate() {
        location.push(Coefficient {
            name: name.clone(),
            value: natural[1 + j],
            se: se(1 + j),
        });
    }
    let dim = vcov.nrows();
    UniFit {
        family: if gumbel { Family::Gumbel } else { Family::Gev },
        spec: spec.clone(),
        location,
        sigma: Estimate {
            value: natural[k + 1],
            se: se(k + 1),
        },
        xi: if gumbel {
            Estimate { value: 0.0, se: 0.0 }
        } else {
            Estimate {
                value: natural[k + 2],
                se: se(k + 2),
            }
        },
        loglik,
        n,
        vcov: (0..dim).map(|i| (0..dim).map(|j| vcov[(i, j)]).collect()).collect(),
        converged,
        grad_norm,
        pseudo_inverse,
        diagnostics,
        data_fingerprint: fingerprint(values),
    }
}

fn failed_fit(
    spec: &NonStationarySpec,
    design: &Covariates,
    st: &Standardized,
    x0: &[f64],
    n: usize,
    values: &[f64],
    diagnostics: Vec<String>,
) -> UniFit {
    let with_xi = !spec.fix_shape_to_zero;
    let natural = st.to_natural(x0, with_xi);
    let dim = natural.len();
    let vcov = DMatrix::from_element(dim, dim, f64::NAN);
    assemble(
        spec,
        design,
        natural,
        vcov,
        f64::NEG_INFINITY,
        n,
        false,
        f64::NAN,
        true,
        diagnostics,
        values,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Statistic came out negative (optimizer noise); p set to 1.
    pub negative_statistic: bool,
}

/// Likelihood-ratio test of `restricted` against the nesting `full` model.
pub fn lr_test(restricted: &UniFit, full: &UniFit) -> Result<LrTest> {
    if !restricted.spec.is_nested_in(&full.spec) {
        return Err(Error::Usage("likelihood-ratio test needs nested model specs".into()));
    }
    if restricted.data_fingerprint != full.data_fingerprint || restricted.n != full.n {
        return Err(Error::Usage("likelihood-ratio test needs fits on the same series".into()));
    }
    let df = full.n_params() - restricted.n_params();
    Ok(lr_from_loglik(restricted.loglik, full.loglik, df))
}

/// Likelihood-ratio statistic `2(ℓ_full − ℓ_restricted)` with its chi-square
/// upper-tail p-value.
pub fn lr_from_loglik(restricted: f64, full: f64, df: usize) -> LrTest {
    let statistic = 2.0 * (full - restricted);
    let negative = statistic < 0.0;
    let p_value = if negative || df == 0 { 1.0 } else { stats::chi2_sf(statistic, df) };
    LrTest {
        statistic,
        df,
        p_value,
        negative_statistic: negative,
    }
}

/// `Zᵢ = −log tᵢ`, standard Gumbel under a correct model.
pub fn standardize_residuals(fit: &UniFit, series: &Series, covariates: &Covariates) -> Result<Series> {
    if !fit.converged {
        return Err(Error::Usage("residuals need a converged fit".into()));
    }
    let design = if fit.is_stationary() {
        Covariates::empty(series.len())
    } else {
        fit.spec.design(covariates)?
    };
    if design.rows() != series.len() {
        return Err(Error::Usage("covariate rows differ from series length".into()));
    }
    let mu = fit.locations(&design);
    let (sigma, xi) = (fit.sigma.value, fit.xi.value);
    let mut bad = Vec::new();
    let z: Vec<f64> = series
        .values
        .iter()
        .zip(&mu)
        .enumerate()
        .map(|(i, (x, m))| match gev_log_t((x - m) / sigma, xi) {
            Some(log_t) => -log_t,
            None => {
                bad.push(i);
                f64::NAN
            }
        })
        .collect();
    if !bad.is_empty() {
        return Err(Error::OutsideSupport(bad));
    }
    Ok(Series::new(z, "standardized"))
}

/// Standard Gumbel CDF.
pub fn gumbel_cdf(z: f64) -> f64 {
    (-(-z).exp()).exp()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QqPlot {
    /// Standard Gumbel quantiles at `(i − 0.5)/n`.
    pub theoretical: Vec<f64>,
    /// Sorted standardized residuals.
    pub empirical: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub fraction_inside: f64,
    pub n_sim: usize,
    pub seed: u64,
}

/// QQ data of standardized residuals against the standard Gumbel, with a
/// pointwise 95% envelope from `n_sim` simulated samples of the same size.
pub fn qq_plot_data(fit: &UniFit, series: &Series, covariates: &Covariates, n_sim: usize, seed: u64) -> Result<QqPlot> {
    let z = standardize_residuals(fit, series, covariates)?;
    Ok(qq_from_residuals(&z.values, n_sim, seed))
}

pub fn qq_from_residuals(z: &[f64], n_sim: usize, seed: u64) -> QqPlot {
    use rand::Rng;
    use rayon::prelude::*;

    let empirical = stats::sorted(z);
    let n = empirical.len();
    let theoretical: Vec<f64> = (0..n)
        .map(|i| {
            let p = (i as f64 + 0.5) / n as f64;
            -(-p.ln()).ln()
        })
        .collect();
    let sims: Vec<Vec<f64>> = (0..n_sim)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let draws: Vec<f64> = (0..n)
                .map(|_| {
                    let u: f64 = rng.sample(rand::distr::Open01);
                    -(-u.ln()).ln()
                })
                .collect();
            stats::sorted(&draws)
        })
        .collect();
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    let mut col = vec![0.0; n_sim];
    for i in 0..n {
        for (c, s) in col.iter_mut().zip(&sims) {
            *c = s[i];
        }
        col.sort_by(f64::total_cmp);
        lower.push(quantile_sorted(&col, 0.025));
        upper.push(quantile_sorted(&col, 0.975));
    }
    let inside = empirical
        .iter()
        .zip(lower.iter().zip(&upper))
        .filter(|(e, (l, u))| *e >= *l && *e <= *u)
        .count();
    QqPlot {
        theoretical,
        empirical,
        lower,
        upper,
        fraction_inside: inside as f64 / n.max(1) as f64,
        n_sim,
        seed,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityPlot {
    pub centers: Vec<f64>,
    pub empirical: Vec<f64>,
    pub model: Vec<f64>,
}

/// Histogram density of standardized residuals next to the standard Gumbel
/// density.
pub fn residual_density(z: &[f64], bins: usize) -> DensityPlot {
    let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / bins as f64).max(1e-12);
    let mut counts = vec![0usize; bins];
    for v in z {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = z.len() as f64;
    let centers: Vec<f64> = (0..bins).map(|b| lo + (b as f64 + 0.5) * width).collect();
    DensityPlot {
        empirical: counts.iter().map(|&c| c as f64 / (n * width)).collect(),
        model: centers.iter().map(|&c| (-c - (-c).exp()).exp()).collect(),
        centers,
    }
}

/// Shape sign classification used by reports.
pub fn shape_regime(xi: f64) -> &'static str {
    if xi.abs() < EPS_GUMBEL {
        "gumbel"
    } else if xi < 0.0 {
        "reversed weibull (bounded)"
    } else {
        "frechet (heavy tail)"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{gev_sample, GevParams};
    use crate::mc::derive_seed;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gev_draws(mu: &[f64], sigma: f64, xi: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        mu.iter()
            .map(|&m| {
                let p = GevParams::new(m, sigma, xi).unwrap();
                crate::dist::gev_quantile_unchecked(&p, rng.sample(rand::distr::Open01))
            })
            .collect()
    }

    #[test]
    fn stationary_recovery_large_sample() {
        let truth = GevParams::new(-0.99, 0.383, -0.236).unwrap();
        let s = gev_sample(&truth, 10_000, 42);
        let fit = fit_gev(&s, &Covariates::empty(s.len()), &NonStationarySpec::stationary()).unwrap();
        assert!(fit.converged, "{:?}", fit.diagnostics);
        assert!((fit.location[0].value - truth.mu).abs() < 3.0 * fit.location[0].se);
        assert!((fit.sigma.value - truth.sigma).abs() < 3.0 * fit.sigma.se);
        assert!((fit.xi.value - truth.xi).abs() < 3.0 * fit.xi.se);
        assert!(fit.grad_norm < 1e-4);
    }

    #[test]
    fn nonstationary_slope_recovery() {
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(15.0..25.0)).collect();
        let mu: Vec<f64> = z.iter().map(|z| -1.0 + 0.025 * z).collect();
        let x = gev_draws(&mu, 0.383, -0.236, 4);
        let cov = Covariates::new(vec!["z".into()], vec![z]).unwrap();
        let fit = fit_gev(&Series::new(x, "x"), &cov, &NonStationarySpec::with_covariates(["z"])).unwrap();
        assert!(fit.converged);
        let slope = &fit.location[1];
        assert!((slope.value - 0.025).abs() < 3.0 * slope.se, "{slope:?}");
        assert!(fit.grad_norm < 1e-4, "{}", fit.grad_norm);
    }

    #[test]
    fn sample_size_and_degenerate_design() {
        let s = Series::new(vec![0.0; 10], "x");
        assert!(matches!(
            fit_gev(&s, &Covariates::empty(10), &NonStationarySpec::stationary()),
            Err(Error::SampleSize { .. })
        ));
        let truth = GevParams::new(0.0, 1.0, 0.1).unwrap();
        let s = gev_sample(&truth, 100, 1);
        let cov = Covariates::new(vec!["c".into()], vec![vec![2.0; 100]]).unwrap();
        assert!(matches!(
            fit_gev(&s, &cov, &NonStationarySpec::with_covariates(["c"])),
            Err(Error::DegenerateDesign(_))
        ));
    }

    #[test]
    fn lr_examples() {
        let t = lr_from_loglik(0.0, 5.189 / 2.0, 1);
        assert!((t.p_value - 0.0227).abs() < 1e-4);
        let t = lr_from_loglik(0.0, 17.508 / 2.0, 2);
        assert!((t.p_value - 1.58e-4).abs() < 1e-6);
        let t = lr_from_loglik(-10.0, -10.0, 0);
        assert_eq!((t.statistic, t.p_value), (0.0, 1.0));
        let t = lr_from_loglik(-10.0, -10.5, 1);
        assert!(t.negative_statistic && t.p_value == 1.0);
    }

    #[test]
    fn lr_identical_and_non_nested() {
        let truth = GevParams::new(0.0, 1.0, -0.1).unwrap();
        let s = gev_sample(&truth, 200, 8);
        let e = Covariates::empty(200);
        let a = fit_gev(&s, &e, &NonStationarySpec::stationary()).unwrap();
        let t = lr_test(&a, &a).unwrap();
        assert_eq!((t.statistic, t.df, t.p_value), (0.0, 0, 1.0));
        let g = fit_gev(&s, &e, &NonStationarySpec::gumbel()).unwrap();
        assert!(lr_test(&a, &g).is_err());
        let t = lr_test(&g, &a).unwrap();
        assert_eq!(t.df, 1);
        assert!(t.statistic >= -1e-8);
        let other = gev_sample(&truth, 200, 9);
        let b = fit_gev(&other, &e, &NonStationarySpec::stationary()).unwrap();
        assert!(lr_test(&g, &b).is_err());
    }

    #[test]
    fn lr_calibration_under_null() {
        let reps = 100;
        let mut small = 0;
        let mut accept = 0;
        for r in 0..reps {
            let seed = derive_seed(99, r);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 200;
            let z: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let x = gev_draws(&vec![-1.0; n], 0.4, -0.2, seed ^ 1);
            let s = Series::new(x, "x");
            let cov = Covariates::new(vec!["z".into()], vec![z]).unwrap();
            let a = fit_gev(&s, &cov, &NonStationarySpec::stationary()).unwrap();
            let b = fit_gev(&s, &cov, &NonStationarySpec::with_covariates(["z"])).unwrap();
            assert!(b.loglik >= a.loglik - 1e-6);
            let t = lr_test(&a, &b).unwrap();
            small += usize::from(b.loglik - a.loglik < 2.0);
            accept += usize::from(t.p_value >= 0.05);
        }
        assert!(small >= 90 && accept >= 90, "small={small} accept={accept}");
    }

    #[test]
    fn residual_at_location_is_zero() {
        let truth = GevParams::new(0.5, 1.0, -0.2).unwrap();
        let s = gev_sample(&truth, 300, 2);
        let fit = fit_gev(&s, &Covariates::empty(300), &NonStationarySpec::stationary()).unwrap();
        let mu = fit.location[0].value;
        let z = standardize_residuals(&fit, &Series::new(vec![mu], "x"), &Covariates::empty(1)).unwrap();
        assert!(z.values[0].abs() < 1e-15);
        // stationary standardization is the transform of (x - μ)/σ
        let zs = standardize_residuals(&fit, &s, &Covariates::empty(300)).unwrap();
        let xi = fit.xi.value;
        for (x, zz) in s.values.iter().zip(&zs.values) {
            let w = (x - mu) / fit.sigma.value;
            assert!((zz - (xi * w).ln_1p() / xi).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_outside_support_lists_indices() {
        let truth = GevParams::new(0.0, 1.0, -0.3).unwrap();
        let s = gev_sample(&truth, 300, 2);
        let fit = fit_gev(&s, &Covariates::empty(300), &NonStationarySpec::stationary()).unwrap();
        let end = fit.stationary_params().unwrap().upper_endpoint().unwrap();
        let probe = Series::new(vec![0.0, end + 1.0, end + 2.0], "x");
        match standardize_residuals(&fit, &probe, &Covariates::empty(3)) {
            Err(Error::OutsideSupport(idx)) => assert_eq!(idx, vec![1, 2]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn residuals_are_standard_gumbel() {
        let reps = 100;
        let mut ok = 0;
        for r in 0..reps {
            let seed = derive_seed(5, r);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 300;
            let z: Vec<f64> = (0..n).map(|_| rng.random_range(15.0..25.0)).collect();
            let mu: Vec<f64> = z.iter().map(|z| -1.0 + 0.025 * z).collect();
            let x = Series::new(gev_draws(&mu, 0.383, -0.236, seed ^ 7), "x");
            let cov = Covariates::new(vec!["z".into()], vec![z]).unwrap();
            let fit = fit_gev(&x, &cov, &NonStationarySpec::with_covariates(["z"])).unwrap();
            let res = standardize_residuals(&fit, &x, &cov).unwrap();
            let d = ks_statistic(&res.values, gumbel_cdf);
            ok += usize::from(d < 1.36 / (n as f64).sqrt());
        }
        assert!(ok >= 95, "{ok}");
    }

    #[test]
    fn qq_envelope_well_specified() {
        let mut fractions = Vec::new();
        for r in 0..20 {
            let truth = GevParams::new(-1.0, 0.4, -0.2).unwrap();
            let s = gev_sample(&truth, 300, derive_seed(17, r));
            let fit = fit_gev(&s, &Covariates::empty(300), &NonStationarySpec::stationary()).unwrap();
            let qq = qq_plot_data(&fit, &s, &Covariates::empty(300), 200, r).unwrap();
            fractions.push(qq.fraction_inside);
        }
        let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
        assert!(mean >= 0.90, "{fractions:?}");
    }

    #[test]
    fn qq_exact_gumbel_on_diagonal() {
        let n = 200;
        let z: Vec<f64> = (0..n)
            .map(|i| {
                let p = (i as f64 + 0.5) / n as f64;
                -(-p.ln()).ln()
            })
            .collect();
        let qq = qq_from_residuals(&z, 200, 1);
        for (t, e) in qq.theoretical.iter().zip(&qq.empirical) {
            assert!((t - e).abs() < 1e-12);
        }
        assert_eq!(qq.fraction_inside, 1.0);
    }

    #[test]
    fn qq_flags_misspecified_tail() {
        // heavy-tailed data forced into a Gumbel model
        let truth = GevParams::new(0.0, 1.0, 0.4).unwrap();
        let s = gev_sample(&truth, 500, 12);
        let fit = fit_gev(&s, &Covariates::empty(500), &NonStationarySpec::gumbel()).unwrap();
        let qq = qq_plot_data(&fit, &s, &Covariates::empty(500), 200, 3).unwrap();
        let top = 450..500;
        let above = top.clone().filter(|&i| qq.empirical[i] > qq.upper[i]).count();
        assert!(above >= 10, "{above}");
    }

    #[test]
    fn shape_sign_reproduction() {
        let mut neg = 0;
        for r in 0..100 {
            let truth = GevParams::new(-0.99, 0.383, -0.236).unwrap();
            let s = gev_sample(&truth, 500, derive_seed(1234, r));
            let fit = fit_gev(&s, &Covariates::empty(500), &NonStationarySpec::stationary()).unwrap();
            neg += usize::from(fit.xi.value < 0.0);
        }
        assert!(neg >= 95, "{neg}");
    }

    #[test]
    fn pwm_close_to_truth() {
        let truth = GevParams::new(2.0, 0.5, -0.2).unwrap();
        let s = gev_sample(&truth, 20_000, 6);
        let (mu, sigma, xi) = pwm_start(&s.values);
        assert!((mu - 2.0).abs() < 0.03 && (sigma - 0.5).abs() < 0.03 && (xi + 0.2).abs() < 0.05);
    }

    #[test]
    fn interaction_design() {
        let cov = Covariates::new(
            vec!["gender".into(), "young".into()],
            vec![vec![1.0, 0.0, 0.0], vec![1.0, 1.0, 0.0]],
        )
        .unwrap();
        let spec = NonStationarySpec {
            covariate_names: vec!["gender".into()],
            fix_shape_to_zero: false,
            interactions: vec![Interaction {
                name: "gy".into(),
                a: "gender".into(),
                b: "young".into(),
            }],
        };
        let d = spec.design(&cov).unwrap();
        assert_eq!(d.names, vec!["gender", "gy"]);
        assert_eq!(d.columns[1], vec![1.0, 0.0, 0.0]);
        assert_eq!(spec.n_params(), 5);
    }
}
