//! Collision-probability estimation for overtaking maneuvers from surrogate
//! safety measures (time-to-collision and time headway).
//!
//! The crate covers the whole estimation chain:
//!
//! - [`dataset`]: CSV ingestion, surrogate filters, negation and sample-max
//!   normalization, empirical binomial probabilities.
//! - [`dist`]: GEV (with the Gumbel limit) and GPD primitives.
//! - [`fit_uni`]: stationary and covariate-located GEV/Gumbel maximum
//!   likelihood, likelihood-ratio tests, residual standardization, QQ data.
//! - [`fit_pot`]: peaks-over-threshold GPD fitting and the POT estimator.
//! - [`bivar`]: logistic bivariate extreme-value model, Archimedean copulas
//!   (Joe-Frank, Gumbel), dependence diagnostics and joint probabilities.
//! - [`prob`]: block-maxima plug-in estimator and the two Monte Carlo
//!   approaches for covariate-dependent locations.
//! - [`sweep`]: filter/threshold sensitivity sweeps and stable-region search.
//! - [`synth`]: synthetic maneuver generator with known ground truth.
//! - [`cli`]: orchestration behind the `evtss` binary.
//!
//! All "minimum of a surrogate" problems are handled as maxima of the negated
//! measure, so the collision boundary is always `0`.

pub mod bivar;
pub mod cli;
pub mod dataset;
pub mod dist;
pub mod error;
pub mod fit_pot;
pub mod fit_uni;
pub mod mc;
pub mod optim;
pub mod plot;
pub mod prob;
pub mod quad;
pub mod stats;
pub mod sweep;
pub mod synth;

pub use error::{Error, Result};
