//! Filter and threshold sensitivity sweeps with stable-region detection.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Covariates, Series};
use crate::dist::GevParams;
use crate::fit_pot::{self, pot_collision_probability};
use crate::fit_uni::{fit_gev, Estimate, NonStationarySpec, MIN_SAMPLE};
use crate::prob::bm_collision_probability;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Original,
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMethod {
    Bm,
    Pot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum SkipReason {
    SampleSize { needed: usize, got: usize },
    NonConvergence,
    /// Shape estimate at or below `−1`, where the maximum sits on an
    /// observation at the support boundary.
    SupportViolation,
}

impl SkipReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            SkipReason::SampleSize { .. } => "sample_size",
            SkipReason::NonConvergence => "non_convergence",
            SkipReason::SupportViolation => "support_violation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFit {
    /// GEV location; absent for POT.
    pub location: Option<Estimate>,
    pub scale: Estimate,
    /// Shape of the free fit, also when a Gumbel refit was selected.
    pub shape: Estimate,
    pub gumbel_selected: bool,
    /// Model collision probability (conditional on the filter for POT).
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    /// Observations passing the filter (exceedances for POT).
    pub n: usize,
    /// `k / (n + k)`.
    pub empirical: f64,
    pub fit: Option<PointFit>,
    pub skipped: Option<SkipReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub method: SweepMethod,
    pub variant: Variant,
    pub collisions: usize,
    pub points: Vec<SweepPoint>,
    pub warnings: Vec<String>,
}

impl SweepResult {
    pub fn grid(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.threshold).collect()
    }

    pub fn fitted(&self) -> impl Iterator<Item = (&SweepPoint, &PointFit)> {
        self.points.iter().filter_map(|p| p.fit.as_ref().map(|f| (p, f)))
    }
}

/// 0.6 s to 2.4 s in steps of 0.1 s.
pub fn default_grid() -> Vec<f64> {
    (6..=24).map(|i| f64::from(i) / 10.0).collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::Usage("grid must be positive and strictly increasing".into()));
    }
    Ok(())
}

fn empirical(k: usize, n: usize) -> f64 {
    if k + n == 0 {
        f64::NAN
    } else {
        k as f64 / (k + n) as f64
    }
}

fn finish(method: SweepMethod, variant: Variant, collisions: usize, points: Vec<SweepPoint>) -> Result<SweepResult> {
    if points.iter().all(|p| p.fit.is_none()) {
        return Err(Error::Numerical("every grid point was skipped".into()));
    }
    let mut warnings = Vec::new();
    let positive: Vec<String> = points
        .iter()
        .filter(|p| p.fit.as_ref().is_some_and(|f| f.shape.value > 0.0))
        .map(|p| format!("{:.2}", p.threshold))
        .collect();
    if !positive.is_empty() {
        warnings.push(format!("positive shape estimates at thresholds {}", positive.join(", ")));
    }
    Ok(SweepResult {
        method,
        variant,
        collisions,
        points,
        warnings,
    })
}

fn bm_point(values: &[f64], collisions: usize, t: f64, variant: Variant) -> SweepPoint {
    let kept: Vec<f64> = values.iter().copied().filter(|v| *v < t).collect();
    let n = kept.len();
    let skip = |reason| SweepPoint {
        threshold: t,
        n,
        empirical: empirical(collisions, n),
        fit: None,
        skipped: Some(reason),
    };
    if n < MIN_SAMPLE {
        return skip(SkipReason::SampleSize {
            needed: MIN_SAMPLE,
            got: n,
        });
    }
    let series = Series::new(kept, "s");
    let x = match variant {
        Variant::Original => crate::dataset::negate(&series),
        Variant::Normalized => crate::dataset::normalize_to_sample_max(&series).expect("non-empty").0,
    };
    let empty = Covariates::empty(n);
    let free = match fit_gev(&x, &empty, &NonStationarySpec::stationary()) {
        Ok(f) if f.converged => f,
        _ => return skip(SkipReason::NonConvergence),
    };
    if free.xi.value <= -1.0 {
        return skip(SkipReason::SupportViolation);
    }
    let selected = if free.gumbel_suggested() {
        fit_gev(&x, &empty, &NonStationarySpec::gumbel()).ok().filter(|g| g.converged)
    } else {
        None
    };
    let used = selected.as_ref().unwrap_or(&free);
    let params = GevParams {
        mu: used.location[0].value,
        sigma: used.sigma.value,
        xi: used.xi.value,
    };
    SweepPoint {
        threshold: t,
        n,
        empirical: empirical(collisions, n),
        fit: Some(PointFit {
            location: Some(Estimate {
                value: free.location[0].value,
                se: free.location[0].se,
            }),
            scale: free.sigma,
            shape: free.xi,
            gumbel_selected: selected.is_some(),
            probability: bm_collision_probability(&params).p,
        }),
        skipped: None,
    }
}

/// Block-maxima sweep over filter limits. `values` are the positive
/// measures of the non-collision maneuvers; `collisions` the collision count.
pub fn sweep_bm(values: &Series, collisions: usize, grid: &[f64], variant: Variant) -> Result<SweepResult> {
    check_grid(grid)?;
    let points = grid
        .par_iter()
        .map(|&t| bm_point(&values.values, collisions, t, variant))
        .collect();
    finish(SweepMethod::Bm, variant, collisions, points)
}

/// Peaks-over-threshold sweep. Threshold `t` (in seconds) is `−t` on the
/// negated scale, shifted with the data for the normalized variant; the tail
/// is evaluated at the negated sample extreme.
pub fn sweep_pot(values: &Series, collisions: usize, grid: &[f64], variant: Variant) -> Result<SweepResult> {
    check_grid(grid)?;
    if values.is_empty() {
        return Err(Error::Domain("empty series".into()));
    }
    let (x, shift) = match variant {
        Variant::Original => (crate::dataset::negate(values), 0.0),
        Variant::Normalized => crate::dataset::normalize_to_sample_max(values)?,
    };
    let x_max = x.max().expect("non-empty");
    let points = grid
        .par_iter()
        .map(|&t| {
            let u = -t - shift;
            let n = x.values.iter().filter(|v| **v > u).count();
            let base = SweepPoint {
                threshold: t,
                n,
                empirical: empirical(collisions, n),
                fit: None,
                skipped: None,
            };
            let fit = match fit_pot::fit_gpd(&x, u) {
                Ok(f) if f.converged => f,
                Ok(_) => {
                    return SweepPoint {
                        skipped: Some(SkipReason::NonConvergence),
                        ..base
                    }
                }
                Err(Error::SampleSize { needed, got }) => {
                    return SweepPoint {
                        skipped: Some(SkipReason::SampleSize { needed, got }),
                        ..base
                    }
                }
                Err(_) => {
                    return SweepPoint {
                        skipped: Some(SkipReason::NonConvergence),
                        ..base
                    }
                }
            };
            if fit.params.xi <= -1.0 {
                return SweepPoint {
                    skipped: Some(SkipReason::SupportViolation),
                    ..base
                };
            }
            let p = pot_collision_probability(&fit, x_max).map(|p| p.conditional).unwrap_or(f64::NAN);
            SweepPoint {
                fit: Some(PointFit {
                    location: None,
                    scale: Estimate {
                        value: fit.params.sigma,
                        se: fit.sigma_se,
                    },
                    shape: Estimate {
                        value: fit.params.xi,
                        se: fit.xi_se,
                    },
                    gumbel_selected: false,
                    probability: p,
                }),
                ..base
            }
        })
        .collect();
    finish(SweepMethod::Pot, variant, collisions, points)
}

/// Maximal runs of consecutive fitted grid points over which the shape
/// estimate varies by at most `xi_tol`, all standard errors are finite, and
/// the threshold span is at least `min_width`. Skipped points break runs.
pub fn stable_region(sr: &SweepResult, xi_tol: f64, min_width: f64) -> Vec<(f64, f64)> {
    let ok: Vec<Option<(f64, f64)>> = sr
        .points
        .iter()
        .map(|p| {
            p.fit
                .as_ref()
                .filter(|f| f.shape.se.is_finite() && f.scale.se.is_finite())
                .map(|f| (p.threshold, f.shape.value))
        })
        .collect();
    if ok.iter().flatten().count() < 3 {
        return vec![];
    }
    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut last_end = None;
    for i in 0..ok.len() {
        let Some((t0, x0)) = ok[i] else { continue };
        let (mut lo, mut hi) = (x0, x0);
        let mut j = i;
        while j + 1 < ok.len() {
            let Some((_, x)) = ok[j + 1] else { break };
            if hi.max(x) - lo.min(x) > xi_tol {
                break;
            }
            lo = lo.min(x);
            hi = hi.max(x);
            j += 1;
        }
        let t1 = ok[j].expect("fitted").0;
        if t1 - t0 >= min_width - 1e-9 && last_end != Some(j) {
            out.push((t0, t1));
            last_end = Some(j);
        }
    }
    out
}

#[derive(Serialize)]
struct CsvRow {
    method: SweepMethod,
    variant: Variant,
    threshold: f64,
    n: usize,
    status: &'static str,
    location: Option<f64>,
    location_se: Option<f64>,
    scale: Option<f64>,
    scale_se: Option<f64>,
    shape: Option<f64>,
    shape_se: Option<f64>,
    gumbel_selected: Option<bool>,
    probability: Option<f64>,
    empirical: f64,
}

/// One row per grid point; skipped points carry their reason in `status`.
pub fn write_csv(results: &[&SweepResult], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for sr in results {
        for p in &sr.points {
            let f = p.fit.as_ref();
            w.serialize(CsvRow {
                method: sr.method,
                variant: sr.variant,
                threshold: p.threshold,
                n: p.n,
                status: p.skipped.as_ref().map_or("ok", SkipReason::as_str),
                location: f.and_then(|f| f.location.map(|l| l.value)),
                location_se: f.and_then(|f| f.location.map(|l| l.se)),
                scale: f.map(|f| f.scale.value),
                scale_se: f.map(|f| f.scale.se),
                shape: f.map(|f| f.shape.value),
                shape_se: f.map(|f| f.shape.se),
                gumbel_selected: f.map(|f| f.gumbel_selected),
                probability: f.map(|f| f.probability),
                empirical: p.empirical,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{filter_threshold, Measure};
    use crate::synth::{generate, ClassWeights, MarginSpec, SynthConfig};

    /// Critical TTC from a stationary GEV, non-critical TTC uniform on
    /// 2-6 s: filters between about 1.6 s and 2.0 s keep nearly the whole
    /// critical population and nothing else.
    pub(crate) fn stable_tail_config(seed: u64) -> SynthConfig {
        let mut cfg = SynthConfig::calibrated(seed);
        cfg.n_maneuvers = 3000;
        cfg.classes = ClassWeights {
            both: 0.0,
            ttc_only: 0.4,
            thw_only: 0.0,
            neither: 0.6,
        };
        cfg.ttc = MarginSpec::stationary(GevParams::new(-0.99, 0.383, -0.236).unwrap());
        cfg
    }

    fn ttc_values(cfg: &SynthConfig) -> (Series, usize) {
        let ds = generate(cfg).unwrap();
        let k = ds.collision_counts().head_on;
        let vals = ds.records.iter().filter(|r| !r.collided.is_collision()).map(|r| r.ttc).collect();
        (Series::new(vals, "s"), k)
    }

    fn point(t: f64, xi: f64) -> SweepPoint {
        SweepPoint {
            threshold: t,
            n: 100,
            empirical: 0.01,
            fit: Some(PointFit {
                location: None,
                scale: Estimate { value: 1.0, se: 0.1 },
                shape: Estimate { value: xi, se: 0.05 },
                gumbel_selected: false,
                probability: 0.01,
            }),
            skipped: None,
        }
    }

    fn result(points: Vec<SweepPoint>) -> SweepResult {
        SweepResult {
            method: SweepMethod::Bm,
            variant: Variant::Original,
            collisions: 1,
            points,
            warnings: vec![],
        }
    }

    #[test]
    fn stable_region_trivial_cases() {
        let grid = default_grid();
        let flat = result(grid.iter().map(|&t| point(t, -0.2)).collect());
        assert_eq!(stable_region(&flat, 0.1, 0.3), vec![(0.6, 2.4)]);
        let alt = result(
            grid.iter()
                .enumerate()
                .map(|(i, &t)| point(t, if i % 2 == 0 { 0.5 } else { -0.5 }))
                .collect(),
        );
        assert!(stable_region(&alt, 0.1, 0.3).is_empty());
        assert!(stable_region(&result(vec![point(1.0, 0.0), point(1.1, 0.0)]), 0.1, 0.0).is_empty());
    }

    #[test]
    fn bm_sweep_counts_and_stable_window() {
        let cfg = stable_tail_config(31);
        let (vals, k) = ttc_values(&cfg);
        let grid = default_grid();
        let sr = sweep_bm(&vals, k, &grid, Variant::Original).unwrap();
        assert_eq!(sr.grid(), grid);
        let ds = generate(&cfg).unwrap();
        for p in &sr.points {
            let f = filter_threshold(&ds, Measure::Ttc, p.threshold).unwrap();
            assert_eq!(p.n, f.len());
            assert_eq!(p.empirical, k as f64 / (k + p.n) as f64);
        }
        assert!(sr.points.windows(2).all(|w| w[1].n >= w[0].n));
        let regions = stable_region(&sr, 0.1, 0.3);
        assert!(regions.iter().any(|(a, b)| *a <= 1.6 + 1e-9 && *b >= 2.0 - 1e-9), "{regions:?}");
        let again = sweep_bm(&vals, k, &grid, Variant::Original).unwrap();
        assert_eq!(serde_json::to_string(&sr).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn normalized_and_original_overlap() {
        let cfg = stable_tail_config(32);
        let (vals, k) = ttc_values(&cfg);
        let grid = [1.6, 1.8, 2.0];
        let a = sweep_bm(&vals, k, &grid, Variant::Original).unwrap();
        let b = sweep_bm(&vals, k, &grid, Variant::Normalized).unwrap();
        for ((_, fa), (_, fb)) in a.fitted().zip(b.fitted()) {
            assert!((fa.shape.value - fb.shape.value).abs() < 2.0 * fa.shape.se);
        }
    }

    #[test]
    fn small_grid_points_are_skipped() {
        let vals = Series::new((1..=200).map(|i| f64::from(i) / 100.0).collect(), "s");
        let sr = sweep_bm(&vals, 1, &[0.2, 1.5], Variant::Original).unwrap();
        assert_eq!(sr.points[0].skipped, Some(SkipReason::SampleSize { needed: 30, got: 19 }));
        assert!(sr.points[1].fit.is_some());
        assert!(sweep_bm(&vals, 1, &[0.1, 0.2], Variant::Original).is_err());
        assert!(sweep_bm(&vals, 1, &[0.2, 0.2], Variant::Original).is_err());
    }

    #[test]
    fn pot_sweep_structure() {
        let cfg = stable_tail_config(33);
        let (vals, k) = ttc_values(&cfg);
        let grid = [0.01, 0.6, 1.0, 1.4];
        let sr = sweep_pot(&vals, k, &grid, Variant::Normalized).unwrap();
        assert!(sr.points[0].n < 10, "{}", sr.points[0].n);
        assert!(matches!(sr.points[0].skipped, Some(SkipReason::SampleSize { .. })));
        for p in &sr.points {
            assert_eq!(p.empirical, k as f64 / (k + p.n) as f64);
        }
        let fitted: Vec<_> = sr.fitted().collect();
        assert!(fitted.len() >= 2);
    }

    #[test]
    fn pot_shape_stable_above_changepoint() {
        // GPD tail above 1.0 s on the TTC scale: exceedances of −t for t ≤ 1
        let u0 = -1.0;
        let ex = crate::dist::gpd_sample(&crate::dist::GpdParams::new(u0, 0.3, -0.2, 1.0).unwrap(), 4000, 7);
        let mut vals: Vec<f64> = ex.values.iter().map(|y| -(u0 + y)).collect();
        vals.extend((0..4000).map(|i| 1.0 + 3.0 * (i as f64 + 0.5) / 4000.0));
        let sr = sweep_pot(&Series::new(vals, "s"), 0, &[0.6, 0.7, 0.8, 0.9, 1.0], Variant::Original).unwrap();
        for (_, f) in sr.fitted() {
            assert!((f.shape.value + 0.2).abs() < 3.0 * f.shape.se, "{:?}", f.shape);
        }
    }
}
