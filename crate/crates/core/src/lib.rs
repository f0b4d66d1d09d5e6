//! Regime-stratified stress testing for CGM imputation.
//!
//! The crate covers the whole evaluation path: ingesting CGM exports into
//! 5-minute episodes, estimating an empirical missingness process and
//! sampling realistic masks from it, building regime-specific evaluation
//! windows (stable, post-prandial, hypoglycemic), classical imputers, metrics
//! and the regime-conditional router that sends stationary gaps to linear
//! interpolation and transient gaps to an external model.

pub mod data;
pub mod error;
pub mod imputers;
pub mod mask;
pub mod metrics;
pub mod missingness;
pub mod protocols;
pub mod rng;
pub mod router;
pub mod synth;

pub use data::{Episode, EpisodeKey, Exog};
pub use error::{Error, Result};
pub use mask::{Mask, Provenance};
pub use missingness::{DurationMixture, MissingnessModel, MixtureParams, Regime};
pub use imputers::{Imputation, Method};
pub use metrics::{CalibrationSummary, MetricsReport};
pub use protocols::{Protocol, RegimeWindow, StabilityCriteria};
pub use router::{GapLabel, RoutingDecision};
pub use synth::{RegimeLabel, SynthConfig};
