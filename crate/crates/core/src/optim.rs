//! Derivative-free minimization with finite-difference curvature.
//!
//! Objectives are negative log-likelihoods over unconstrained parameter
//! vectors; an infeasible point evaluates to `+∞` and the simplex simply
//! moves away from it. After the simplex stage a short damped Newton
//! polish on finite-difference derivatives brings the gradient to the
//! noise floor, and the same Hessian provides the covariance.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Absolute spread of simplex values at convergence.
    pub ftol: f64,
    /// Max distance from the best vertex at convergence.
    pub xtol: f64,
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 20_000,
            ftol: 1e-10,
            xtol: 1e-8,
            restarts: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Nelder-Mead with dimension-adaptive coefficients, restarted from the best
/// vertex `opts.restarts` times.
pub fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], step: &[f64], opts: &NelderMeadOptions) -> Minimum {
    let mut best = simplex_run(f, x0, step, opts);
    for _ in 0..opts.restarts {
        if best.evals >= opts.max_evals {
            break;
        }
        let again = simplex_run(f, &best.x, step, opts);
        let improved = again.f < best.f - opts.ftol;
        let evals = best.evals + again.evals;
        if again.f <= best.f {
            best = Minimum { evals, ..again };
        } else {
            best.evals = evals;
        }
        if !improved {
            break;
        }
    }
    best
}

fn simplex_run(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], step: &[f64], opts: &NelderMeadOptions) -> Minimum {
    let n = x0.len();
    let nf = n as f64;
    let (alpha, gamma, rho, shrink) = if n >= 3 {
        (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf)
    } else {
        (1.0, 2.0, 0.5, 0.5)
    };

    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    pts.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step[i];
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| f(p)).collect();
    let mut evals = n + 1;
    let mut converged = false;

    while evals < opts.max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let spread = vals[n] - vals[0];
        let size = pts[1..]
            .iter()
            .map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread.is_finite() && spread <= opts.ftol && size <= opts.xtol {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / nf)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&pts[n])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(alpha);
        let fr = f(&xr);
        evals += 1;
        if fr < vals[0] {
            let xe = along(alpha * gamma);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[n] {
            let xc = along(alpha * rho);
            let fc = f(&xc);
            (xc, fc)
        } else {
            let xc = along(-rho);
            let fc = f(&xc);
            (xc, fc)
        };
        evals += 1;
        if fc < vals[n].min(fr) {
            pts[n] = xc;
            vals[n] = fc;
            continue;
        }
        for i in 1..=n {
            let p: Vec<f64> = pts[0]
                .iter()
                .zip(&pts[i])
                .map(|(b, x)| b + shrink * (x - b))
                .collect();
            vals[i] = f(&p);
            pts[i] = p;
        }
        evals += n;
    }

    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    Minimum {
        x: pts[best].clone(),
        f: vals[best],
        evals,
        converged,
    }
}

/// Finite-difference step, `1e-5 · max(|θ|, 1)`.
#[inline]
pub fn fd_step(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

/// Central-difference gradient with one Richardson extrapolation step
/// (steps `h` and `h/2`), accurate to `O(h⁴)`.
pub fn gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut xp = x.to_vec();
    let mut central = |i: usize, h: f64| {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        (fp - fm) / (2.0 * h)
    };
    (0..x.len())
        .map(|i| {
            let h = fd_step(x[i]);
            let d1 = central(i, h);
            let d2 = central(i, 0.5 * h);
            (4.0 * d2 - d1) / 3.0
        })
        .collect()
}

/// Central-difference Hessian.
pub fn hessian(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let f0 = f(x);
    let h: Vec<f64> = x.iter().map(|&v| fd_step(v)).collect();
    let mut m = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for i in 0..n {
        xp[i] = x[i] + h[i];
        let fp = f(&xp);
        xp[i] = x[i] - h[i];
        let fm = f(&xp);
        xp[i] = x[i];
        m[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut eval = |si: f64, sj: f64| {
                xp[i] = x[i] + si * h[i];
                xp[j] = x[j] + sj * h[j];
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                / (4.0 * h[i] * h[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// `max_i |g_i| · max(|θ_i|, 1)`.
pub fn scaled_grad_norm(g: &[f64], x: &[f64]) -> f64 {
    g.iter()
        .zip(x)
        .map(|(g, x)| g.abs() * x.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Damped Newton iterations on finite-difference derivatives. Never returns
/// a point worse than `x0` beyond rounding slack.
pub fn newton_polish(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], max_iter: usize) -> (Vec<f64>, f64) {
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    if !fx.is_finite() {
        return (x, fx);
    }
    for _ in 0..max_iter {
        let g = gradient(f, &x);
        if scaled_grad_norm(&g, &x) < 1e-9 {
            break;
        }
        let h = hessian(f, &x);
        let gv = DVector::from_vec(g.clone());
        let mut lambda = 0.0;
        let mut dir = None;
        let diag_scale = (0..h.nrows()).map(|i| h[(i, i)].abs()).fold(1e-8, f64::max);
        for _ in 0..12 {
            let mut hl = h.clone();
            for i in 0..hl.nrows() {
                hl[(i, i)] += lambda;
            }
            if let Some(ch) = hl.cholesky() {
                dir = Some(-ch.solve(&gv));
                break;
            }
            lambda = if lambda == 0.0 { 1e-6 * diag_scale } else { lambda * 10.0 };
        }
        let Some(d) = dir else { break };
        let slope = gv.dot(&d);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let xt: Vec<f64> = x.iter().zip(d.iter()).map(|(a, b)| a + t * b).collect();
            let ft = f(&xt);
            // near the optimum the predicted decrease drops below rounding
            // noise in f, so allow a few ulps of slack
            let slack = 1e-13 * fx.abs().max(1.0);
            if ft.is_finite() && ft <= fx + 1e-4 * t * slope + slack {
                x = xt;
                fx = ft;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (x, fx)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Optimum {
    pub x: Vec<f64>,
    pub nll: f64,
    pub evals: usize,
    pub simplex_converged: bool,
    /// Scaled gradient max-norm at `x`.
    pub grad_norm: f64,
}

/// Deterministic jittered copies of `x0`, the first being `x0` itself.
pub fn jittered_starts(x0: &[f64], scale: &[f64], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![x0.to_vec()];
    for _ in 1..count {
        out.push(
            x0.iter()
                .zip(scale)
                .map(|(x, s)| x + s * rng.random_range(-1.0..1.0))
                .collect(),
        );
    }
    out
}

/// Multi-start simplex followed by a Newton polish of the best run.
pub fn minimize(f: &dyn Fn(&[f64]) -> f64, starts: &[Vec<f64>], step: &[f64]) -> Option<Optimum> {
    let opts = NelderMeadOptions::default();
    let mut best: Option<Minimum> = None;
    let mut evals = 0;
    for s in starts {
        if !f(s).is_finite() {
            continue;
        }
        let m = nelder_mead(f, s, step, &opts);
        evals += m.evals;
        if best.as_ref().is_none_or(|b| m.f < b.f) {
            best = Some(m);
        }
    }
    let best = best?;
    if !best.f.is_finite() {
        return None;
    }
    let (x, nll) = newton_polish(f, &best.x, 25);
    let grad_norm = scaled_grad_norm(&gradient(f, &x), &x);
    Some(Optimum {
        x,
        nll,
        evals,
        simplex_converged: best.converged,
        grad_norm,
    })
}

/// Inverse of a negative log-likelihood Hessian. Falls back to an eigenvalue
/// pseudo-inverse (flagged) when the matrix is not safely positive definite.
pub fn covariance_from_hessian(h: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let sym = (h + h.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min_ev = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min_ev > 1e-10 * max_ev {
        if let Some(ch) = sym.clone().cholesky() {
            return (ch.inverse(), false);
        }
    }
    let n = sym.nrows();
    let mut inv = DMatrix::zeros(n, n);
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev > 1e-10 * max_ev {
            let v = eig.eigenvectors.column(k);
            inv += (v * v.transpose()) / ev;
        }
    }
    (inv, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn simplex_finds_rosenbrock_minimum() {
        let m = nelder_mead(&rosenbrock, &[-1.2, 1.0], &[0.5, 0.5], &NelderMeadOptions::default());
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn minimize_polishes_gradient() {
        let f = |x: &[f64]| {
            (x[0] - 3.0).powi(2) * 50.0 + (x[1] + 1.0).powi(4) + (x[1] + 1.0).powi(2) + x[2].powi(2) * 7.0
        };
        let starts = jittered_starts(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0], 3, 1);
        let o = minimize(&f, &starts, &[0.5, 0.5, 0.5]).unwrap();
        assert!(o.grad_norm < 1e-6, "{}", o.grad_norm);
        assert!((o.x[0] - 3.0).abs() < 1e-7);
    }

    #[test]
    fn infeasible_region_is_avoided() {
        let f = |x: &[f64]| if x[0] <= 0.0 { f64::INFINITY } else { x[0] - x[0].ln() };
        let o = minimize(&f, &[vec![5.0]], &[1.0]).unwrap();
        assert!((o.x[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn hessian_and_covariance_of_quadratic() {
        let f = |x: &[f64]| 2.0 * x[0] * x[0] + x[0] * x[1] + 3.0 * x[1] * x[1];
        let h = hessian(&f, &[0.3, -0.2]);
        assert!((h[(0, 0)] - 4.0).abs() < 1e-4);
        assert!((h[(0, 1)] - 1.0).abs() < 1e-4);
        assert!((h[(1, 1)] - 6.0).abs() < 1e-4);
        let (c, pseudo) = covariance_from_hessian(&h);
        assert!(!pseudo);
        let id = &h * &c;
        assert!((id[(0, 0)] - 1.0).abs() < 1e-6 && id[(0, 1)].abs() < 1e-6);
    }

    #[test]
    fn singular_hessian_is_flagged() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (_, pseudo) = covariance_from_hessian(&h);
        assert!(pseudo);
    }
}
