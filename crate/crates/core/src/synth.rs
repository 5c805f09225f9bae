//! Synthetic maneuver data with known ground truth.
//!
//! Every maneuver falls in one of four latent classes: critical for both
//! surrogates, for TTC only, for THW only, or for neither. Critical measures
//! are drawn from GEV margins whose locations depend on covariates; when both
//! are critical the pair is coupled by the logistic extreme-value model.
//! Non-critical measures are uniform on a benign range above the usual
//! filters. A negated draw at or above zero is a collision.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bivar::{logistic_copula_cdf, logistic_t_pair};
use crate::dataset::{Collision, CollisionCounts, ManeuverDataset, ManeuverRecord};
use crate::dist::{gev_cdf, gev_from_t, GevParams};
use crate::mc::run_streams;
use crate::{Error, Result};

/// Covariate columns emitted by [`generate`], in order.
pub const COVARIATE_NAMES: [&str; 12] = [
    "speedfront",
    "tailgatetp",
    "passinggap",
    "curvature",
    "speedpv",
    "gender",
    "age",
    "angry_hostile",
    "anxious",
    "reckless_careless",
    "patient_careful",
    "f2234",
];

/// GEV margin of a negated surrogate with a linear location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginSpec {
    pub mu0: f64,
    /// Location slopes keyed by covariate name.
    #[serde(default)]
    pub coefficients: BTreeMap<String, f64>,
    pub sigma: f64,
    pub xi: f64,
}

impl MarginSpec {
    pub fn stationary(p: GevParams) -> Self {
        Self {
            mu0: p.mu,
            coefficients: BTreeMap::new(),
            sigma: p.sigma,
            xi: p.xi,
        }
    }

    pub fn is_stationary(&self) -> bool {
        self.coefficients.values().all(|b| *b == 0.0)
    }

    /// Location for one covariate row laid out as [`COVARIATE_NAMES`].
    pub fn location(&self, row: &[f64]) -> f64 {
        self.mu0
            + self
                .coefficients
                .iter()
                .map(|(name, b)| {
                    let j = COVARIATE_NAMES.iter().position(|n| n == name).expect("validated name");
                    b * row[j]
                })
                .sum::<f64>()
    }

    fn params_at(&self, row: &[f64]) -> GevParams {
        GevParams {
            mu: self.location(row),
            sigma: self.sigma,
            xi: self.xi,
        }
    }
}

/// Latent class proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub both: f64,
    pub ttc_only: f64,
    pub thw_only: f64,
    pub neither: f64,
}

impl ClassWeights {
    fn as_array(&self) -> [f64; 4] {
        [self.both, self.ttc_only, self.thw_only, self.neither]
    }
}

/// Covariate generators. Speeds in m/s, gaps in s, curvature in 1/m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateGenerators {
    /// Two equally likely front-vehicle speeds.
    pub speedfront_levels: [f64; 2],
    pub tailgatetp_range: (f64, f64),
    pub passinggap_range: (f64, f64),
    /// Two equally likely road curvatures.
    pub curvature_levels: [f64; 2],
    pub speedpv_range: (f64, f64),
    pub p_male: f64,
    /// Bands 22-34, 35-49, 50-70.
    pub age_weights: [f64; 3],
    /// Mean and sd of each driving-style score, clamped to the 1-6 scale.
    pub style_mean: f64,
    pub style_sd: f64,
}

impl Default for CovariateGenerators {
    fn default() -> Self {
        let kmh = 1.0 / 3.6;
        let ages = [67.0, 20.0, 12.0];
        let total: f64 = ages.iter().sum();
        Self {
            speedfront_levels: [60.0 * kmh, 80.0 * kmh],
            tailgatetp_range: (5.0, 15.0),
            passinggap_range: (10.0, 26.7),
            curvature_levels: [1.0 / 350.0, 1.0 / 2000.0],
            speedpv_range: (70.0 * kmh, 95.0 * kmh),
            p_male: 0.64,
            age_weights: ages.map(|a| a / total),
            style_mean: 2.5,
            style_sd: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_maneuvers: usize,
    pub classes: ClassWeights,
    pub ttc: MarginSpec,
    pub thw: MarginSpec,
    /// Logistic dependence between the two critical measures.
    pub r: f64,
    pub covariates: CovariateGenerators,
    /// Uniform range of non-critical TTC values (s).
    pub benign_ttc: (f64, f64),
    /// Uniform range of non-critical THW values (s).
    pub benign_thw: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::calibrated(1)
    }
}

impl SynthConfig {
    /// 1287 maneuvers, a covariate-located TTC margin at the scale of the
    /// best gender model, a stationary Gumbel THW margin and `r = 0.865`.
    /// Expected collisions are about 9 head-on and 2 rear-end.
    pub fn calibrated(seed: u64) -> Self {
        let coefficients = [
            ("speedfront", 0.026),
            ("tailgatetp", 0.003),
            ("passinggap", -0.023),
            ("curvature", -34.304),
            ("gender", -0.097),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let n = 1287.0;
        Self {
            n_maneuvers: 1287,
            classes: ClassWeights {
                both: 261.0 / n,
                ttc_only: 211.0 / n,
                thw_only: 233.0 / n,
                neither: 582.0 / n,
            },
            ttc: MarginSpec {
                mu0: -0.983,
                coefficients,
                sigma: 0.362,
                xi: -0.217,
            },
            thw: MarginSpec::stationary(GevParams {
                mu: -1.456,
                sigma: 0.256,
                xi: 0.0,
            }),
            r: 0.865,
            covariates: CovariateGenerators::default(),
            benign_ttc: (2.0, 6.0),
            benign_thw: (2.5, 6.0),
            seed,
        }
    }

    /// Every maneuver critical for both measures, stationary margins.
    pub fn stationary_pair(ttc: GevParams, thw: GevParams, r: f64, n: usize, seed: u64) -> Self {
        Self {
            n_maneuvers: n,
            classes: ClassWeights {
                both: 1.0,
                ttc_only: 0.0,
                thw_only: 0.0,
                neither: 0.0,
            },
            ttc: MarginSpec::stationary(ttc),
            thw: MarginSpec::stationary(thw),
            r,
            covariates: CovariateGenerators::default(),
            benign_ttc: (2.0, 6.0),
            benign_thw: (2.5, 6.0),
            seed,
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Domain(m));
        let w = self.classes.as_array();
        if w.iter().any(|p| !(*p >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("class weights must be non-negative and sum to 1".into());
        }
        let a = self.covariates.age_weights;
        if a.iter().any(|p| !(*p >= 0.0)) || (a.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("age weights must be non-negative and sum to 1".into());
        }
        if !(0.0..=1.0).contains(&self.covariates.p_male) {
            return bad("p_male must be in [0,1]".into());
        }
        if !(self.r > 0.0 && self.r <= 1.0) {
            return bad(format!("r must be in (0,1], got {}", self.r));
        }
        for (name, m) in [("ttc", &self.ttc), ("thw", &self.thw)] {
            if !(m.sigma > 0.0) || !m.xi.is_finite() || !m.mu0.is_finite() {
                return bad(format!("invalid {name} margin"));
            }
            if let Some(k) = m.coefficients.keys().find(|k| !COVARIATE_NAMES.contains(&k.as_str())) {
                return bad(format!("unknown covariate `{k}` in {name} margin"));
            }
        }
        for (lo, hi) in [self.benign_ttc, self.benign_thw] {
            if !(lo > 0.0 && hi > lo) {
                return bad("benign ranges must satisfy 0 < lo < hi".into());
            }
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn pick(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// One covariate row in [`COVARIATE_NAMES`] order.
fn draw_covariates(g: &CovariateGenerators, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let style = Normal::new(g.style_mean, g.style_sd.max(0.0)).expect("finite style parameters");
    let speedfront = g.speedfront_levels[usize::from(rng.random::<bool>())];
    let tailgatetp = uniform(rng, g.tailgatetp_range);
    let passinggap = uniform(rng, g.passinggap_range);
    let curvature = g.curvature_levels[usize::from(rng.random::<bool>())];
    let speedpv = uniform(rng, g.speedpv_range);
    let gender = f64::from(u8::from(rng.random::<f64>() < g.p_male));
    let age = (pick(rng, &g.age_weights) + 1) as f64;
    let mut row = vec![speedfront, tailgatetp, passinggap, curvature, speedpv, gender, age];
    for _ in 0..4 {
        row.push(style.sample(rng).clamp(1.0, 6.0));
    }
    row.push(if gender == 0.0 && age == 1.0 { 1.0 } else { 0.0 });
    row
}

fn gev_draw(p: &GevParams, rng: &mut ChaCha8Rng) -> f64 {
    let e = -(1.0 - rng.random::<f64>()).ln();
    gev_from_t(p.mu, p.sigma, p.xi, e)
}

/// Draws a dataset. Identical configs give identical datasets.
pub fn generate(config: &SynthConfig) -> Result<ManeuverDataset> {
    config.validate()?;
    let weights = config.classes.as_array();
    let chunks = run_streams(config.n_maneuvers, config.seed, |rng, count| {
        (0..count)
            .map(|_| {
                let row = draw_covariates(&config.covariates, rng);
                let class = pick(rng, &weights);
                let p1 = config.ttc.params_at(&row);
                let p2 = config.thw.params_at(&row);
                let (x1, x2) = match class {
                    0 => {
                        let (t1, t2) = logistic_t_pair(config.r, rng);
                        (
                            Some(gev_from_t(p1.mu, p1.sigma, p1.xi, t1)),
                            Some(gev_from_t(p2.mu, p2.sigma, p2.xi, t2)),
                        )
                    }
                    1 => (Some(gev_draw(&p1, rng)), None),
                    2 => (None, Some(gev_draw(&p2, rng))),
                    _ => (None, None),
                };
                let ttc = x1.map_or_else(|| uniform(rng, config.benign_ttc), |x| -x);
                let thw = x2.map_or_else(|| uniform(rng, config.benign_thw), |x| -x);
                let collided = if ttc <= 0.0 {
                    Collision::HeadOn
                } else if thw <= 0.0 {
                    Collision::RearEnd
                } else {
                    Collision::None
                };
                ManeuverRecord {
                    ttc: ttc.max(0.0),
                    thw: thw.max(0.0),
                    covariates: row,
                    collided,
                }
            })
            .collect::<Vec<_>>()
    });
    Ok(ManeuverDataset {
        covariate_names: COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(),
        records: chunks.into_iter().flatten().collect(),
        provenance: format!("synthetic seed={}", config.seed),
        filter_log: vec![],
        excluded_collisions: CollisionCounts::default(),
    })
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McValue {
    pub p: f64,
    pub se: f64,
}

impl McValue {
    fn from_count(k: u64, n: usize) -> Self {
        let p = k as f64 / n as f64;
        Self {
            p,
            se: (p * (1.0 - p) / n as f64).sqrt(),
        }
    }
}

/// Per-maneuver collision probabilities of the critical populations:
/// head-on and rear-end from the margins, joint as either collision when
/// both measures are critical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueProbabilities {
    pub head_on: McValue,
    pub rear_end: McValue,
    pub joint: McValue,
    pub n_sim: usize,
    /// `(1 − F(0), 1 − G(0), 1 − C(F(0), G(0)))` when both margins are
    /// stationary.
    pub closed_form: Option<(f64, f64, f64)>,
}

/// Brute-force truth from `n_sim` simulated maneuvers (at least 10⁷ is the
/// intended use; smaller counts are accepted for quick checks).
pub fn true_collision_probability(config: &SynthConfig, n_sim: usize) -> Result<TrueProbabilities> {
    config.validate()?;
    if n_sim == 0 {
        return Err(Error::Domain("n_sim must be positive".into()));
    }
    let counts = run_streams(n_sim, config.seed ^ 0x7472_7565, |rng, count| {
        let mut c = [0u64; 3];
        for _ in 0..count {
            let row = draw_covariates(&config.covariates, rng);
            let p1 = config.ttc.params_at(&row);
            let p2 = config.thw.params_at(&row);
            let (t1, t2) = logistic_t_pair(config.r, rng);
            let x1 = gev_from_t(p1.mu, p1.sigma, p1.xi, t1);
            let x2 = gev_from_t(p2.mu, p2.sigma, p2.xi, t2);
            c[0] += u64::from(x1 >= 0.0);
            c[1] += u64::from(x2 >= 0.0);
            c[2] += u64::from(x1 >= 0.0 || x2 >= 0.0);
        }
        c
    });
    let total = counts.iter().fold([0u64; 3], |a, c| [a[0] + c[0], a[1] + c[1], a[2] + c[2]]);
    let closed_form = (config.ttc.is_stationary() && config.thw.is_stationary()).then(|| {
        let row = vec![0.0; COVARIATE_NAMES.len()];
        let f0 = gev_cdf(&config.ttc.params_at(&row), 0.0);
        let g0 = gev_cdf(&config.thw.params_at(&row), 0.0);
        (1.0 - f0, 1.0 - g0, 1.0 - logistic_copula_cdf(f0, g0, config.r))
    });
    Ok(TrueProbabilities {
        head_on: McValue::from_count(total[0], n_sim),
        rear_end: McValue::from_count(total[1], n_sim),
        joint: McValue::from_count(total[2], n_sim),
        n_sim,
        closed_form,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bivar::kendall_tau;
    use crate::dataset::{filter_threshold, Measure};
    use crate::stats;

    #[test]
    fn calibrated_config_is_valid_and_deterministic() {
        let cfg = SynthConfig::calibrated(3);
        cfg.validate().unwrap();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.len(), 1287);
        assert_eq!(a.covariate_names.len(), COVARIATE_NAMES.len());
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<SynthConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = SynthConfig::calibrated(1);
        cfg.classes.neither += 0.1;
        assert!(generate(&cfg).is_err());
        let mut cfg = SynthConfig::calibrated(1);
        cfg.ttc.coefficients.insert("nonsense".into(), 1.0);
        assert!(cfg.validate().is_err());
        let mut cfg = SynthConfig::calibrated(1);
        cfg.r = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn independence_config_has_no_rank_association() {
        let m = GevParams::new(-1.0, 0.4, -0.2).unwrap();
        let cfg = SynthConfig::stationary_pair(m, m, 1.0, 5000, 8);
        let ds = generate(&cfg).unwrap();
        let x: Vec<f64> = ds.records.iter().map(|r| r.ttc).collect();
        let y: Vec<f64> = ds.records.iter().map(|r| r.thw).collect();
        assert!(kendall_tau(&x, &y).unwrap().tau.abs() < 0.03);
    }

    #[test]
    fn zero_coefficients_give_constant_location() {
        let mut cfg = SynthConfig::calibrated(2);
        cfg.ttc.coefficients.values_mut().for_each(|b| *b = 0.0);
        let ds = generate(&cfg).unwrap();
        let mus: Vec<f64> = ds.records.iter().map(|r| cfg.ttc.location(&r.covariates)).collect();
        assert!(mus.iter().all(|m| *m == cfg.ttc.mu0));
    }

    #[test]
    fn calibrated_collision_counts() {
        let (mut ho, mut re) = (0usize, 0usize);
        let seeds = 40;
        for s in 0..seeds {
            let c = generate(&SynthConfig::calibrated(100 + s)).unwrap().collision_counts();
            ho += c.head_on;
            re += c.rear_end;
        }
        let (ho, re) = (ho as f64 / seeds as f64, re as f64 / seeds as f64);
        assert!((6.0..13.0).contains(&ho), "{ho}");
        assert!((0.8..3.5).contains(&re), "{re}");
    }

    #[test]
    fn mean_location_near_target() {
        let ds = generate(&SynthConfig::calibrated(4)).unwrap();
        let cfg = SynthConfig::calibrated(4);
        let mus: Vec<f64> = ds.records.iter().map(|r| cfg.ttc.location(&r.covariates)).collect();
        assert!((stats::mean(&mus) + 0.99).abs() < 0.03, "{}", stats::mean(&mus));
    }

    #[test]
    fn brute_force_matches_closed_form() {
        let cfg = SynthConfig::stationary_pair(
            GevParams::new(-0.886, 0.431, -0.417).unwrap(),
            GevParams::gumbel(-1.456, 0.256).unwrap(),
            0.865,
            100,
            5,
        );
        let t = true_collision_probability(&cfg, 2_000_000).unwrap();
        let (a, b, c) = t.closed_form.unwrap();
        assert!((t.head_on.p - a).abs() < 3.0 * t.head_on.se);
        assert!((t.rear_end.p - b).abs() < 3.0 * t.rear_end.se);
        assert!((t.joint.p - c).abs() < 3.0 * t.joint.se);
        assert!((b - 0.00337).abs() < 1.5e-5);
    }

    #[test]
    fn independence_and_comonotone_limits() {
        let m1 = GevParams::new(-0.886, 0.431, -0.417).unwrap();
        let m2 = GevParams::gumbel(-1.456, 0.256).unwrap();
        let ind = true_collision_probability(&SynthConfig::stationary_pair(m1, m2, 1.0, 10, 1), 1_000_000).unwrap();
        let expect = 1.0 - gev_cdf(&m1, 0.0) * gev_cdf(&m2, 0.0);
        assert!((ind.joint.p - expect).abs() < 3.0 * ind.joint.se);
        let com = true_collision_probability(&SynthConfig::stationary_pair(m1, m2, 1e-3, 10, 1), 1_000_000).unwrap();
        let mx = com.head_on.p.max(com.rear_end.p);
        assert!((com.joint.p - mx).abs() < 3.0 * com.joint.se + 1e-4);
    }

    #[test]
    fn filtered_critical_set_size() {
        let ds = generate(&SynthConfig::calibrated(6)).unwrap();
        let f = filter_threshold(&ds, Measure::Ttc, 1.5).unwrap();
        assert!((380..520).contains(&f.len()), "{}", f.len());
    }
}
