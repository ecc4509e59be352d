//! Parametric survival estimation when event occurrences stay hidden until a
//! delayed report arrives and reports are right-censored.
//!
//! The crate jointly models the time to an accident and the delay from the
//! accident to its report. Unreported accidents are treated as latent: the
//! observed-data likelihood marginalizes over them, a Monte-Carlo EM
//! algorithm fits the joint model, and a two-stage procedure transfers
//! source-domain estimates to an administratively censored target cohort
//! where only a scalar risk level remains to be estimated. A simulator and a
//! benchmark harness reproduce the behavior of all estimators end to end.
//!
//! Module map:
//! - [`numeric`]: quadrature, concave maximization, root finding, RNG streams
//! - [`hazard`]: constant, piecewise-constant, and proportional hazards
//! - [`joint`]: the two-event mixture likelihood and posterior
//! - [`sim`]: synthetic and semi-synthetic data generation
//! - [`em`]: lower-bound maximization with a Monte-Carlo E-step
//! - [`two_stage`]: source-to-target transfer of the fitted hazards
//! - [`harness`]: benchmark drivers and the validation suite

pub mod em;
pub mod harness;
pub mod hazard;
pub mod joint;
pub mod numeric;
pub mod sim;
pub mod stats;
pub mod two_stage;

pub use em::{run_em, EmConfig, EstimationResult};
pub use hazard::{CovariateEffect, HazardModel, PiecewiseConstantHazard};
pub use joint::{marginal_loglik, Dataset, ModelPair, Observation};
pub use numeric::{QuadratureSpec, RngStream};
