//! Two-event probability structure for accidents observed only through
//! delayed reports: the survival-type mixture component `S_circ`, the joint
//! density `f_circ`, the marginal log-likelihood over observed data, its
//! analytic gradient, the posterior over the latent accident status of
//! unreported rows, and censoring-model likelihoods with the
//! administrative-censoring atom.
//!
//! Covariates are arbitrary finite real vectors; identifiability of the
//! chosen parametric families on the covariate support is the caller's
//! responsibility.

use crate::hazard::{CovariateEffect, HazardError, HazardModel};
use crate::numeric::{integrate_with_breakpoints, NumericError, QuadratureSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JointError {
    #[error(transparent)]
    Hazard(#[from] HazardError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("accident time z = {z} out of order with report time y = {y}")]
    OrderViolation { z: f64, y: f64 },
    #[error("reported observation lacks its accident time")]
    MissingLatent,
    #[error("administrative censoring time required but absent from the dataset")]
    MissingTau,
    #[error("posterior over latent accident status is defined only for unreported rows")]
    RowIsReported,
    #[error("log-likelihood is not finite: {0}")]
    NonFinite(String),
    #[error("analytic gradient requires a constant delay family")]
    UnsupportedGradientModel,
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
}

/// One individual's covariates and censored two-event outcome.
///
/// `time` is the report-or-censoring time `y` and `reported` the report
/// indicator `v`. The accident status `(z, w)` is present exactly when the
/// report arrived; unreported rows carry no accident information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub covariates: Vec<f64>,
    pub time: f64,
    pub reported: bool,
    pub accident_time: Option<f64>,
    pub accident_occurred: Option<bool>,
}

impl Observation {
    /// Row with an observed report: accident at `z`, report at `y`.
    pub fn reported(covariates: Vec<f64>, y: f64, z: f64) -> Result<Self, JointError> {
        if !(y.is_finite() && y >= 0.0) {
            return Err(JointError::InvalidObservation(format!(
                "report time must be finite and nonnegative, got {y}"
            )));
        }
        if !(z.is_finite() && z >= 0.0) {
            return Err(JointError::InvalidObservation(format!(
                "accident time must be finite and nonnegative, got {z}"
            )));
        }
        if z > y {
            return Err(JointError::OrderViolation { z, y });
        }
        Ok(Self {
            covariates,
            time: y,
            reported: true,
            accident_time: Some(z),
            accident_occurred: Some(true),
        })
    }

    /// Row censored before any report arrived; accident status latent.
    pub fn censored(covariates: Vec<f64>, y: f64) -> Result<Self, JointError> {
        if !(y.is_finite() && y >= 0.0) {
            return Err(JointError::InvalidObservation(format!(
                "censoring time must be finite and nonnegative, got {y}"
            )));
        }
        Ok(Self {
            covariates,
            time: y,
            reported: false,
            accident_time: None,
            accident_occurred: None,
        })
    }

    /// `y_dagger = (1 - v) y + v z`; defined for censored rows and for
    /// reported rows carrying their accident time.
    pub fn y_dagger(&self) -> Option<f64> {
        if self.reported {
            self.accident_time
        } else {
            Some(self.time)
        }
    }

    /// `v_dagger = I(y >= tau (1 - v))`: reported rows always count as
    /// censor-survivals, unreported rows only at the administrative atom.
    pub fn v_dagger(&self, tau: f64) -> bool {
        self.time >= tau * (1.0 - if self.reported { 1.0 } else { 0.0 })
    }

    fn validate(&self) -> Result<(), JointError> {
        if self.reported {
            let z = self.accident_time.ok_or(JointError::MissingLatent)?;
            if z > self.time {
                return Err(JointError::OrderViolation { z, y: self.time });
            }
            if self.accident_occurred != Some(true) {
                return Err(JointError::InvalidObservation(
                    "a reported row must carry an occurred accident".into(),
                ));
            }
        } else if self.accident_time.is_some() || self.accident_occurred.is_some() {
            return Err(JointError::InvalidObservation(
                "unreported rows must not carry accident status".into(),
            ));
        }
        Ok(())
    }
}

/// An ordered collection of observations with domain metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    observations: Vec<Observation>,
    tau: Option<f64>,
    domain_label: String,
}

impl Dataset {
    pub fn new(
        observations: Vec<Observation>,
        tau: Option<f64>,
        domain_label: impl Into<String>,
    ) -> Result<Self, JointError> {
        if let Some(tau) = tau {
            if !(tau > 0.0) {
                return Err(JointError::InvalidDataset(format!(
                    "administrative censoring time must be positive, got {tau}"
                )));
            }
        }
        let dim = observations.first().map(|o| o.covariates.len());
        for obs in &observations {
            obs.validate()?;
            if Some(obs.covariates.len()) != dim {
                return Err(JointError::InvalidDataset(
                    "covariate dimension differs across rows".into(),
                ));
            }
            if let Some(tau) = tau {
                if obs.time > tau {
                    return Err(JointError::InvalidDataset(format!(
                        "row time {} exceeds administrative censoring at {tau}",
                        obs.time
                    )));
                }
            }
        }
        Ok(Self {
            observations,
            tau,
            domain_label: domain_label.into(),
        })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn tau(&self) -> Option<f64> {
        self.tau
    }

    pub fn domain_label(&self) -> &str {
        &self.domain_label
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Number of unreported rows (`m`).
    pub fn censored_count(&self) -> usize {
        self.observations.iter().filter(|o| !o.reported).count()
    }

    /// Number of reported rows (`n - m`).
    pub fn reported_count(&self) -> usize {
        self.observations.iter().filter(|o| o.reported).count()
    }

    /// Fitting requires at least one reported accident with positive time.
    pub fn validate_for_fitting(&self) -> Result<(), JointError> {
        let total_z: f64 = self
            .observations
            .iter()
            .filter(|o| o.reported)
            .filter_map(|o| o.accident_time)
            .sum();
        if self.reported_count() == 0 {
            return Err(JointError::InvalidDataset(
                "no reported events in the dataset".into(),
            ));
        }
        if !(total_z > 0.0) {
            return Err(JointError::InvalidDataset(
                "reported accident times sum to zero".into(),
            ));
        }
        Ok(())
    }
}

/// Accident-process and delay-process models, the pair `(theta_1, theta_2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPair {
    pub accident: HazardModel,
    pub delay: HazardModel,
}

impl ModelPair {
    pub fn new(accident: HazardModel, delay: HazardModel) -> Self {
        Self { accident, delay }
    }

    /// Free parameters in natural scale: accident coordinates then delay
    /// coordinates, each in their model's serialization order.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = self.accident.parameters();
        p.extend(self.delay.parameters());
        p
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = self.accident.parameter_names("accident_");
        names.extend(self.delay.parameter_names("delay_"));
        names
    }

    pub fn with_parameters(&self, params: &[f64]) -> Result<Self, HazardError> {
        let na = self.accident.parameters().len();
        if params.len() != na + self.delay.parameters().len() {
            return Err(HazardError::InvalidParameter(format!(
                "expected {} parameters, got {}",
                na + self.delay.parameters().len(),
                params.len()
            )));
        }
        Ok(Self {
            accident: self.accident.with_parameters(&params[..na])?,
            delay: self.delay.with_parameters(&params[na..])?,
        })
    }
}

struct HazSegment {
    lo: f64,
    hi: f64,
    rate: f64,
    cum_lo: f64,
}

/// Decompose the accident hazard over `[0, y]` into constant-rate segments
/// with the covariate effect folded in.
fn accident_segments(
    model: &HazardModel,
    x: &[f64],
    y: f64,
) -> Result<Vec<HazSegment>, HazardError> {
    match model {
        HazardModel::Constant(c) => Ok(vec![HazSegment {
            lo: 0.0,
            hi: y,
            rate: c.rate(),
            cum_lo: 0.0,
        }]),
        HazardModel::PiecewisePh(ph) => {
            let phi = ph.effect.value(x)?;
            let knots = ph.baseline.knots();
            let rates = ph.baseline.rates();
            let mut segments = Vec::with_capacity(rates.len());
            let mut cum = 0.0;
            for k in 0..rates.len() {
                let lo = knots[k];
                if lo >= y {
                    break;
                }
                let hi = knots.get(k + 1).copied().unwrap_or(f64::INFINITY).min(y);
                segments.push(HazSegment {
                    lo,
                    hi,
                    rate: phi * rates[k],
                    cum_lo: cum,
                });
                cum += phi * rates[k] * (hi - lo);
            }
            Ok(segments)
        }
    }
}

/// Stable `rate * e^{c0} * int_0^L e^{(lambda - rate) u} du` for one segment.
/// Both `c0` and `c0 + v` are nonpositive by construction, so neither
/// exponential overflows; the short series handles the cancellation band.
fn convolution_segment(rate: f64, len: f64, c0: f64, v: f64) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    if v.abs() < 1e-4 {
        rate * len * c0.exp() * (1.0 + v * (0.5 + v * (1.0 / 6.0 + v / 24.0)))
    } else {
        rate * len * ((c0 + v).exp() - c0.exp()) / v
    }
}

/// `S_circ(y | x) = S_1(y | x) + int_0^y f_1(t | x) S_2(y - t | x) dt`.
///
/// Closed form whenever the delay hazard is constant (covering the
/// constant-constant and piecewise-PH-constant pairs); adaptive quadrature
/// with knot breakpoints otherwise.
pub fn s_circ(pair: &ModelPair, y: f64, x: &[f64]) -> Result<f64, JointError> {
    if !(y >= 0.0) {
        return Err(JointError::InvalidObservation(format!(
            "report time must be nonnegative, got {y}"
        )));
    }
    if y == 0.0 {
        return Ok(1.0);
    }
    if let Some(delay) = pair.delay.as_constant() {
        let lambda = delay.rate();
        let segments = accident_segments(&pair.accident, x, y)?;
        let survival = (-pair.accident.cumulative_hazard(y, x)?).exp();
        let mut conv = 0.0;
        for seg in &segments {
            let len = seg.hi - seg.lo;
            let c0 = -seg.cum_lo - lambda * (y - seg.lo);
            let v = (lambda - seg.rate) * len;
            conv += convolution_segment(seg.rate, len, c0, v);
        }
        Ok(survival + conv)
    } else {
        s_circ_quadrature(pair, y, x, &QuadratureSpec::default())
    }
}

/// Quadrature route for `S_circ`, independent of the closed form.
pub fn s_circ_quadrature(
    pair: &ModelPair,
    y: f64,
    x: &[f64],
    spec: &QuadratureSpec,
) -> Result<f64, JointError> {
    if y == 0.0 {
        return Ok(1.0);
    }
    let mut breakpoints: Vec<f64> = pair.accident.quadrature_breakpoints().to_vec();
    breakpoints.extend(pair.delay.quadrature_breakpoints().iter().map(|k| y - k));
    let failure = std::cell::Cell::new(false);
    let integrand = |t: f64| match pair
        .accident
        .density(t, x)
        .and_then(|f1| Ok(f1 * pair.delay.survival(y - t, x)?))
    {
        Ok(v) => v,
        Err(_) => {
            failure.set(true);
            f64::NAN
        }
    };
    let conv = integrate_with_breakpoints(integrand, 0.0, y, &breakpoints, spec);
    if failure.get() {
        return Err(JointError::InvalidObservation(
            "hazard evaluation failed inside the convolution integrand".into(),
        ));
    }
    Ok((-pair.accident.cumulative_hazard(y, x)?).exp() + conv?)
}

/// `f_circ(z, y | x) = f_1(z | x) f_2(y - z | x)` for `0 <= z <= y`.
pub fn f_circ(pair: &ModelPair, z: f64, y: f64, x: &[f64]) -> Result<f64, JointError> {
    if !(z >= 0.0) || z > y {
        return Err(JointError::OrderViolation { z, y });
    }
    Ok(pair.accident.density(z, x)? * pair.delay.density(y - z, x)?)
}

/// Marginal log-likelihood of the observed data: censored rows contribute
/// `log S_circ`, reported rows `log f_circ`. Censoring-model terms are
/// excluded; they separate from the accident and delay parameters.
pub fn marginal_loglik(pair: &ModelPair, data: &Dataset) -> Result<f64, JointError> {
    let mut total = 0.0;
    for obs in data.observations() {
        let term = if obs.reported {
            let z = obs.accident_time.ok_or(JointError::MissingLatent)?;
            f_circ(pair, z, obs.time, &obs.covariates)?.ln()
        } else {
            s_circ(pair, obs.time, &obs.covariates)?.ln()
        };
        if !term.is_finite() {
            return Err(JointError::NonFinite(format!(
                "row at y = {} contributed log-likelihood {term}",
                obs.time
            )));
        }
        total += term;
    }
    Ok(total)
}

/// Per-coordinate derivative of `log f_1(t | x)` for the accident model,
/// natural parameter scale, serialization order.
fn accident_log_density_grad(model: &HazardModel, x: &[f64], t: f64) -> Result<Vec<f64>, JointError> {
    match model {
        HazardModel::Constant(c) => Ok(vec![1.0 / c.rate() - t]),
        HazardModel::PiecewisePh(ph) => {
            let phi = ph.effect.value(x)?;
            let overlaps = ph.baseline.segment_overlaps(t);
            let cum = ph.baseline.cumulative(t);
            let seg = ph
                .baseline
                .knots()
                .partition_point(|k| *k <= t)
                .saturating_sub(1);
            let mut grad: Vec<f64> = overlaps
                .iter()
                .enumerate()
                .map(|(k, overlap)| {
                    let event = if k == seg { 1.0 / ph.baseline.rates()[k] } else { 0.0 };
                    event - phi * overlap
                })
                .collect();
            match &ph.effect {
                CovariateEffect::LogLinear(beta) => {
                    if beta.len() != x.len() {
                        return Err(JointError::Hazard(HazardError::DimensionMismatch {
                            expected: beta.len(),
                            got: x.len(),
                        }));
                    }
                    grad.extend(x.iter().map(|xj| xj * (1.0 - phi * cum)));
                }
                CovariateEffect::Scalar(g) => grad.push(1.0 / g - cum),
            }
            Ok(grad)
        }
    }
}

/// Per-coordinate derivative of `log S_1(t | x)` for the accident model.
fn accident_log_survival_grad(
    model: &HazardModel,
    x: &[f64],
    t: f64,
) -> Result<Vec<f64>, JointError> {
    match model {
        HazardModel::Constant(_) => Ok(vec![-t]),
        HazardModel::PiecewisePh(ph) => {
            let phi = ph.effect.value(x)?;
            let overlaps = ph.baseline.segment_overlaps(t);
            let cum = ph.baseline.cumulative(t);
            let mut grad: Vec<f64> = overlaps.iter().map(|overlap| -phi * overlap).collect();
            match &ph.effect {
                CovariateEffect::LogLinear(beta) => {
                    if beta.len() != x.len() {
                        return Err(JointError::Hazard(HazardError::DimensionMismatch {
                            expected: beta.len(),
                            got: x.len(),
                        }));
                    }
                    grad.extend(x.iter().map(|xj| -xj * phi * cum));
                }
                CovariateEffect::Scalar(_) => grad.push(-cum),
            }
            Ok(grad)
        }
    }
}

/// Analytic gradient of the marginal log-likelihood with respect to all free
/// parameters, ordered as in [`ModelPair::parameters`]. Convolution terms
/// are differentiated under the integral and evaluated by quadrature with
/// knot breakpoints. Callers holding parameters fixed select the matching
/// coordinates.
pub fn marginal_loglik_gradient(pair: &ModelPair, data: &Dataset) -> Result<Vec<f64>, JointError> {
    let delay_rate = pair
        .delay
        .as_constant()
        .ok_or(JointError::UnsupportedGradientModel)?
        .rate();
    let na = pair.accident.parameters().len();
    let mut grad = vec![0.0f64; na + 1];
    let spec = QuadratureSpec::default();

    for obs in data.observations() {
        let x = &obs.covariates;
        let y = obs.time;
        if obs.reported {
            let z = obs.accident_time.ok_or(JointError::MissingLatent)?;
            let ga = accident_log_density_grad(&pair.accident, x, z)?;
            for (g, d) in grad.iter_mut().zip(&ga) {
                *g += d;
            }
            grad[na] += 1.0 / delay_rate - (y - z);
            continue;
        }

        let s = s_circ(pair, y, x)?;
        if !(s > 0.0) || !s.is_finite() {
            return Err(JointError::NonFinite(format!(
                "S_circ({y}) = {s} while differentiating"
            )));
        }
        if y == 0.0 {
            continue;
        }
        let breakpoints = pair.accident.quadrature_breakpoints();
        let s1y = pair.accident.survival(y, x)?;
        let surv_grad = accident_log_survival_grad(&pair.accident, x, y)?;
        for j in 0..na {
            let integral = integrate_with_breakpoints(
                |t| {
                    let f1 = pair.accident.density(t, x).unwrap_or(f64::NAN);
                    let s2 = pair.delay.survival(y - t, x).unwrap_or(f64::NAN);
                    let dj = accident_log_density_grad(&pair.accident, x, t)
                        .map(|g| g[j])
                        .unwrap_or(f64::NAN);
                    f1 * s2 * dj
                },
                0.0,
                y,
                breakpoints,
                &spec,
            )?;
            grad[j] += (s1y * surv_grad[j] + integral) / s;
        }
        // d S_2(u) / d lambda = -u S_2(u) for the constant delay family.
        let delay_integral = integrate_with_breakpoints(
            |t| {
                let f1 = pair.accident.density(t, x).unwrap_or(f64::NAN);
                let u = y - t;
                let s2 = pair.delay.survival(u, x).unwrap_or(f64::NAN);
                -f1 * s2 * u
            },
            0.0,
            y,
            breakpoints,
            &spec,
        )?;
        grad[na] += delay_integral / s;
    }
    Ok(grad)
}

/// Mixed posterior distribution of the latent accident status `(z, w)` for
/// an unreported row: an atom at `(z = y, w = 0)` plus a density on
/// `z in (0, y)` with `w = 1`.
#[derive(Debug)]
pub struct PosteriorQ<'a> {
    pair: &'a ModelPair,
    covariates: &'a [f64],
    y: f64,
    s_circ: f64,
    atom_mass: f64,
}

impl<'a> PosteriorQ<'a> {
    /// Mass of the no-accident atom, `S_1(y) / S_circ(y)`.
    pub fn atom_mass(&self) -> f64 {
        self.atom_mass
    }

    /// Total mass of the accident branch.
    pub fn continuous_mass(&self) -> f64 {
        1.0 - self.atom_mass
    }

    /// Density of `(z, w = 1)`: `f_1(z) S_2(y - z) / S_circ(y)`.
    pub fn density(&self, z: f64) -> Result<f64, JointError> {
        if !(0.0..=self.y).contains(&z) {
            return Err(JointError::OrderViolation { z, y: self.y });
        }
        Ok(self.pair.accident.density(z, self.covariates)?
            * self.pair.delay.survival(self.y - z, self.covariates)?
            / self.s_circ)
    }

    pub fn s_circ(&self) -> f64 {
        self.s_circ
    }

    pub fn report_window(&self) -> f64 {
        self.y
    }
}

/// Posterior over the latent accident status of an unreported observation.
pub fn posterior_q<'a>(
    pair: &'a ModelPair,
    obs: &'a Observation,
) -> Result<PosteriorQ<'a>, JointError> {
    if obs.reported {
        return Err(JointError::RowIsReported);
    }
    let s = s_circ(pair, obs.time, &obs.covariates)?;
    let s1 = pair.accident.survival(obs.time, &obs.covariates)?;
    Ok(PosteriorQ {
        pair,
        covariates: &obs.covariates,
        y: obs.time,
        s_circ: s,
        atom_mass: s1 / s,
    })
}

/// Censoring-model log-likelihood. Without administrative censoring the
/// report indicator decides between censor-survival and censor-density
/// terms; with it, the indicator is replaced by
/// `v_dagger = I(y >= tau (1 - v))` so the atom rows at `tau` count as
/// censor-survivals.
pub fn censoring_loglik(
    censor_model: &HazardModel,
    data: &Dataset,
    admin: bool,
) -> Result<f64, JointError> {
    let tau = if admin {
        Some(data.tau().ok_or(JointError::MissingTau)?)
    } else {
        None
    };
    let mut total = 0.0;
    for obs in data.observations() {
        let survives_censoring = match tau {
            Some(tau) => obs.v_dagger(tau),
            None => obs.reported,
        };
        let term = if survives_censoring {
            censor_model.survival(obs.time, &obs.covariates)?.ln()
        } else {
            censor_model.density(obs.time, &obs.covariates)?.ln()
        };
        if !term.is_finite() {
            return Err(JointError::NonFinite(format!(
                "censoring term at y = {} is {term}",
                obs.time
            )));
        }
        total += term;
    }
    Ok(total)
}

/// Probability of landing on the administrative atom `(y = tau, v = 0)`:
/// `S_circ(tau) S_c(tau)`.
pub fn admin_atom_probability(
    pair: &ModelPair,
    censor_model: &HazardModel,
    tau: f64,
    x: &[f64],
) -> Result<f64, JointError> {
    if !(tau >= 0.0) {
        return Err(JointError::InvalidObservation(format!(
            "administrative censoring time must be nonnegative, got {tau}"
        )));
    }
    Ok(s_circ(pair, tau, x)? * censor_model.survival(tau, x)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hazard::{CovariateEffect, PiecewiseConstantHazard};
    use crate::numeric::{finite_diff_gradient, integrate_with_breakpoints, RngStream};
    use rand::Rng;

    fn const_pair(l1: f64, l2: f64) -> ModelPair {
        ModelPair::new(
            HazardModel::constant(l1).unwrap(),
            HazardModel::constant(l2).unwrap(),
        )
    }

    fn toy_pair(lambda: f64) -> ModelPair {
        let baseline =
            PiecewiseConstantHazard::new(vec![0.0, 0.5, 1.0], vec![0.1, 0.2, 0.3]).unwrap();
        ModelPair::new(
            HazardModel::piecewise_ph(baseline, CovariateEffect::log_linear(vec![1.0]).unwrap()),
            HazardModel::constant(lambda).unwrap(),
        )
    }

    /// Brute-force Riemann oracle for the convolution term of S_circ.
    fn s_circ_riemann(pair: &ModelPair, y: f64, x: &[f64], n: usize) -> f64 {
        let h = y / n as f64;
        let conv: f64 = (0..n)
            .map(|i| {
                let t = (i as f64 + 0.5) * h;
                pair.accident.density(t, x).unwrap() * pair.delay.survival(y - t, x).unwrap() * h
            })
            .sum();
        pair.accident.survival(y, x).unwrap() + conv
    }

    #[test]
    fn s_circ_at_zero_is_one() {
        assert_eq!(s_circ(&const_pair(1.0, 5.0), 0.0, &[]).unwrap(), 1.0);
        assert_eq!(s_circ(&toy_pair(5.0), 0.0, &[0.3]).unwrap(), 1.0);
    }

    #[test]
    fn s_circ_constant_constant_closed_form() {
        // e^{-1} + e^{-5}(e^4 - 1)/4, frozen, double-checked by a 1e6-point
        // Riemann oracle.
        let pair = const_pair(1.0, 5.0);
        let expected = (-1.0f64).exp() + (-5.0f64).exp() * (4.0f64.exp() - 1.0) / 4.0;
        assert!((expected - 0.458_164_814_714_531_5).abs() < 1e-12);
        let got = s_circ(&pair, 1.0, &[]).unwrap();
        assert!((got - expected).abs() < 1e-12);
        let oracle = s_circ_riemann(&pair, 1.0, &[], 1_000_000);
        assert!((got - oracle).abs() < 1e-7);
    }

    #[test]
    fn s_circ_instant_report_limit() {
        // With an enormous delay rate the hidden-accident mass vanishes.
        let pair = const_pair(1.0, 1e6);
        let got = s_circ(&pair, 1.0, &[]).unwrap();
        assert!((got - (-1.0f64).exp()).abs() < 1e-4);
    }

    #[test]
    fn s_circ_degenerate_rates_hit_series_branch() {
        let y = 1.3;
        // At equal rates the convolution collapses to l y e^{-l y}.
        for eps in [0.0, 1e-12, 1e-9] {
            let pair = const_pair(2.0, 2.0 + eps);
            let got = s_circ(&pair, y, &[]).unwrap();
            let exact = (-2.0f64 * y).exp() * (1.0 + 2.0 * y);
            assert!(
                (got - exact).abs() < 1e-8,
                "eps = {eps}: got {got}, exact {exact}"
            );
        }
        // Slightly off the degenerate point the Riemann oracle takes over.
        for eps in [1e-7, 1e-6, 1e-4] {
            let pair = const_pair(2.0, 2.0 + eps);
            let got = s_circ(&pair, y, &[]).unwrap();
            let oracle = s_circ_riemann(&pair, y, &[], 1_000_000);
            assert!(
                (got - oracle).abs() < 1e-7,
                "eps = {eps}: got {got}, oracle {oracle}"
            );
        }
    }

    #[test]
    fn s_circ_closed_form_matches_quadrature_on_piecewise() {
        let pair = toy_pair(5.0);
        let spec = QuadratureSpec::strict();
        for (y, x) in [(0.3, 0.5), (0.75, -0.8), (1.6, 0.0), (3.2, 1.0)] {
            let closed = s_circ(&pair, y, &[x]).unwrap();
            let quad = s_circ_quadrature(&pair, y, &[x], &spec).unwrap();
            assert!(
                ((closed - quad) / quad).abs() < 1e-10,
                "y = {y}: closed {closed} vs quad {quad}"
            );
        }
    }

    #[test]
    fn s_circ_stays_between_s1_and_one() {
        let mut rng = RngStream::new(21).rng();
        for _ in 0..200 {
            let l1 = 0.05 + 5.0 * rng.gen::<f64>();
            let l2 = 0.05 + 5.0 * rng.gen::<f64>();
            let y = 3.0 * rng.gen::<f64>();
            let pair = const_pair(l1, l2);
            let s = s_circ(&pair, y, &[]).unwrap();
            let s1 = pair.accident.survival(y, &[]).unwrap();
            assert!(s >= s1 - 1e-12 && s <= 1.0 + 1e-12, "s = {s}, s1 = {s1}");
        }
    }

    #[test]
    fn s_circ_derivative_identity() {
        // d/dy S_circ(y) = -int_0^y f_1(t) f_2(y - t) dt.
        let pair = toy_pair(4.0);
        let x = [0.4];
        for y in [0.4, 0.8, 1.4] {
            let h = 1e-5;
            let fd = (s_circ(&pair, y + h, &x).unwrap() - s_circ(&pair, y - h, &x).unwrap())
                / (2.0 * h);
            let conv = integrate_with_breakpoints(
                |t| {
                    pair.accident.density(t, &x).unwrap()
                        * pair.delay.density(y - t, &x).unwrap()
                },
                0.0,
                y,
                pair.accident.quadrature_breakpoints(),
                &QuadratureSpec::default(),
            )
            .unwrap();
            assert!((fd + conv).abs() < 1e-6, "y = {y}: fd {fd}, conv {conv}");
        }
    }

    #[test]
    fn f_circ_values() {
        let pair = const_pair(1.0, 5.0);
        let expected = (-0.2f64).exp() * 5.0 * (-1.0f64).exp();
        let got = f_circ(&pair, 0.2, 0.4, &[]).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 1.505_971_059_561_010_5).abs() < 1e-10);

        // z = y: the delay density at 0 is the delay hazard.
        let at_end = f_circ(&pair, 0.4, 0.4, &[]).unwrap();
        let f1 = pair.accident.density(0.4, &[]).unwrap();
        assert!((at_end - f1 * 5.0).abs() < 1e-12);

        // z = 0 boundary.
        let at_start = f_circ(&pair, 0.0, 0.4, &[]).unwrap();
        assert!((at_start - 1.0 * pair.delay.density(0.4, &[]).unwrap()).abs() < 1e-12);

        assert!(matches!(
            f_circ(&pair, 0.5, 0.4, &[]),
            Err(JointError::OrderViolation { .. })
        ));
    }

    #[test]
    fn marginal_loglik_values() {
        let pair = const_pair(1.0, 5.0);
        let one = Dataset::new(
            vec![Observation::reported(vec![], 0.4, 0.2).unwrap()],
            None,
            "t",
        )
        .unwrap();
        let ll = marginal_loglik(&pair, &one).unwrap();
        assert!((ll - 1.505_971_059_561_010_5f64.ln()).abs() < 1e-10);
        assert!((ll - 0.409_437_9).abs() < 1e-4);

        let zero = Dataset::new(
            vec![Observation::censored(vec![], 0.0).unwrap()],
            None,
            "t",
        )
        .unwrap();
        assert_eq!(marginal_loglik(&pair, &zero).unwrap(), 0.0);

        let both = Dataset::new(
            vec![
                Observation::reported(vec![], 0.4, 0.2).unwrap(),
                Observation::censored(vec![], 0.0).unwrap(),
            ],
            None,
            "t",
        )
        .unwrap();
        let sum = marginal_loglik(&pair, &both).unwrap();
        assert!((sum - ll).abs() < 1e-12);
    }

    #[test]
    fn marginal_loglik_is_permutation_invariant() {
        let pair = toy_pair(5.0);
        let mut rng = RngStream::new(5).rng();
        let mut rows = Vec::new();
        for i in 0..40 {
            let x = vec![rng.gen::<f64>() * 2.0 - 1.0];
            let y = 0.05 + rng.gen::<f64>();
            if i % 3 == 0 {
                rows.push(Observation::reported(x, y, y * rng.gen::<f64>()).unwrap());
            } else {
                rows.push(Observation::censored(x, y).unwrap());
            }
        }
        let a = marginal_loglik(&pair, &Dataset::new(rows.clone(), None, "a").unwrap()).unwrap();
        rows.reverse();
        rows.swap(3, 17);
        let b = marginal_loglik(&pair, &Dataset::new(rows, None, "b").unwrap()).unwrap();
        assert!((a - b).abs() <= 1e-10 * a.abs());
    }

    #[test]
    fn gradient_reduces_to_exponential_score_on_reported_rows() {
        // All rows reported, constant accident: dE/dl1 = n/l1 - sum z.
        let pair = const_pair(1.3, 5.0);
        let rows = vec![
            Observation::reported(vec![], 0.5, 0.4).unwrap(),
            Observation::reported(vec![], 1.0, 0.3).unwrap(),
            Observation::reported(vec![], 0.8, 0.8).unwrap(),
        ];
        let data = Dataset::new(rows, None, "t").unwrap();
        let grad = marginal_loglik_gradient(&pair, &data).unwrap();
        let expected = 3.0 / 1.3 - (0.4 + 0.3 + 0.8);
        assert!((grad[0] - expected).abs() < 1e-12);
    }

    fn mixed_fixture(seed: u64, covariate_dim: usize) -> Dataset {
        let mut rng = RngStream::new(seed).rng();
        let mut rows = Vec::new();
        for i in 0..5 {
            let x: Vec<f64> = (0..covariate_dim)
                .map(|_| rng.gen::<f64>() * 2.0 - 1.0)
                .collect();
            let y = 0.1 + 1.4 * rng.gen::<f64>();
            if i % 2 == 0 {
                rows.push(Observation::reported(x, y, y * rng.gen::<f64>()).unwrap());
            } else {
                rows.push(Observation::censored(x, y).unwrap());
            }
        }
        Dataset::new(rows, None, "fixture").unwrap()
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let data = mixed_fixture(42, 1);
        for pair in [toy_pair(3.0), const_pair(0.8, 4.0)] {
            let data = if pair.accident.as_constant().is_some() {
                mixed_fixture(43, 0)
            } else {
                data.clone()
            };
            let analytic = marginal_loglik_gradient(&pair, &data).unwrap();
            let params = pair.parameters();
            let fd = finite_diff_gradient(
                |p| {
                    let candidate = pair.with_parameters(p).unwrap();
                    marginal_loglik(&candidate, &data).unwrap()
                },
                &params,
                1e-6,
            )
            .unwrap();
            for (a, f) in analytic.iter().zip(&fd) {
                let rel = (a - f).abs() / f.abs().max(1e-8);
                assert!(rel < 1e-5, "analytic {a} vs fd {f}");
            }
        }
    }

    #[test]
    fn posterior_atom_and_density() {
        let pair = const_pair(1.0, 5.0);
        let obs = Observation::censored(vec![], 1.0).unwrap();
        let q = posterior_q(&pair, &obs).unwrap();
        assert!((q.atom_mass() - 0.802_941_276_493_824).abs() < 1e-9);
        assert!((q.atom_mass() - 0.8029).abs() < 1e-4);
        // Density at z = 0: f_1(0) S_2(1) / S_circ(1).
        let d0 = q.density(0.0).unwrap();
        assert!((d0 - 0.014_706_382_469_120_1).abs() < 1e-9);
        assert!((d0 - 0.014_71).abs() < 1e-5);
    }

    #[test]
    fn posterior_normalizes() {
        let mut rng = RngStream::new(77).rng();
        for _ in 0..25 {
            let pair = const_pair(0.2 + 3.0 * rng.gen::<f64>(), 0.2 + 6.0 * rng.gen::<f64>());
            let y = 0.1 + 2.0 * rng.gen::<f64>();
            let obs = Observation::censored(vec![], y).unwrap();
            let q = posterior_q(&pair, &obs).unwrap();
            let continuous = integrate_with_breakpoints(
                |z| q.density(z).unwrap(),
                0.0,
                y,
                &[],
                &QuadratureSpec::default(),
            )
            .unwrap();
            assert!(
                (q.atom_mass() + continuous - 1.0).abs() < 1e-8,
                "total = {}",
                q.atom_mass() + continuous
            );
        }
        let pair = toy_pair(5.0);
        let obs = Observation::censored(vec![0.4], 0.9).unwrap();
        let q = posterior_q(&pair, &obs).unwrap();
        let continuous = integrate_with_breakpoints(
            |z| q.density(z).unwrap(),
            0.0,
            0.9,
            pair.accident.quadrature_breakpoints(),
            &QuadratureSpec::default(),
        )
        .unwrap();
        assert!((q.atom_mass() + continuous - 1.0).abs() < 1e-8);
    }

    #[test]
    fn posterior_requires_unreported_row() {
        let pair = const_pair(1.0, 5.0);
        let obs = Observation::reported(vec![], 1.0, 0.5).unwrap();
        assert!(matches!(
            posterior_q(&pair, &obs),
            Err(JointError::RowIsReported)
        ));
    }

    #[test]
    fn censoring_loglik_cases() {
        let censor = HazardModel::constant(1.0).unwrap();
        let reported = Dataset::new(
            vec![Observation::reported(vec![], 1.0, 0.5).unwrap()],
            None,
            "t",
        )
        .unwrap();
        let ll = censoring_loglik(&censor, &reported, false).unwrap();
        assert!((ll - (-1.0)).abs() < 1e-12);

        let tau = 0.75;
        let at_atom = Dataset::new(
            vec![Observation::censored(vec![], tau).unwrap()],
            Some(tau),
            "t",
        )
        .unwrap();
        let ll = censoring_loglik(&censor, &at_atom, true).unwrap();
        assert!((ll - (-tau)).abs() < 1e-12, "atom row is a censor-survival");

        let before_atom = Dataset::new(
            vec![Observation::censored(vec![], 0.4).unwrap()],
            Some(tau),
            "t",
        )
        .unwrap();
        let ll = censoring_loglik(&censor, &before_atom, true).unwrap();
        let expected = censor.density(0.4, &[]).unwrap().ln();
        assert!((ll - expected).abs() < 1e-12);

        assert!(matches!(
            censoring_loglik(&censor, &reported, true),
            Err(JointError::MissingTau)
        ));
    }

    #[test]
    fn admin_atom_probability_values() {
        let pair = const_pair(1.0, 5.0);
        let censor = HazardModel::constant(1.0).unwrap();
        assert_eq!(admin_atom_probability(&pair, &censor, 0.0, &[]).unwrap(), 1.0);
        let p = admin_atom_probability(&pair, &censor, 1.0, &[]).unwrap();
        assert!((p - 0.458_164_814_714_531_5 * (-1.0f64).exp()).abs() < 1e-12);
        assert!((p - 0.1686).abs() < 1e-4);
    }

    #[test]
    fn probability_closure_for_constant_triple() {
        // Integral of g_{v=0} plus the double integral of g_{v=1} is 1.
        let pair = const_pair(1.0, 5.0);
        let censor = HazardModel::constant(1.0).unwrap();
        let spec = QuadratureSpec {
            absolute_tolerance: 1e-12,
            relative_tolerance: 1e-10,
            max_subdivisions: 400,
        };
        let horizon = 40.0;
        let censored_mass = integrate_with_breakpoints(
            |y| s_circ(&pair, y, &[]).unwrap() * censor.density(y, &[]).unwrap(),
            0.0,
            horizon,
            &[],
            &spec,
        )
        .unwrap();
        let reported_mass = integrate_with_breakpoints(
            |y| {
                let inner = integrate_with_breakpoints(
                    |z| f_circ(&pair, z, y, &[]).unwrap(),
                    0.0,
                    y,
                    &[],
                    &spec,
                )
                .unwrap();
                inner * censor.survival(y, &[]).unwrap()
            },
            0.0,
            horizon,
            &[],
            &spec,
        )
        .unwrap();
        assert!(
            (censored_mass + reported_mass - 1.0).abs() < 1e-6,
            "total = {}",
            censored_mass + reported_mass
        );
    }

    #[test]
    fn dagger_transforms() {
        let reported = Observation::reported(vec![], 1.0, 0.25).unwrap();
        assert_eq!(reported.y_dagger(), Some(0.25));
        assert!(reported.v_dagger(0.75));
        let censored = Observation::censored(vec![], 0.5).unwrap();
        assert_eq!(censored.y_dagger(), Some(0.5));
        assert!(!censored.v_dagger(0.75));
        let at_tau = Observation::censored(vec![], 0.75).unwrap();
        assert!(at_tau.v_dagger(0.75));
    }

    #[test]
    fn dataset_validation() {
        let bad_tau = Dataset::new(
            vec![Observation::censored(vec![], 1.0).unwrap()],
            Some(0.75),
            "t",
        );
        assert!(bad_tau.is_err());

        let no_reports = Dataset::new(
            vec![Observation::censored(vec![], 0.5).unwrap()],
            None,
            "t",
        )
        .unwrap();
        assert!(no_reports.validate_for_fitting().is_err());

        let zero_z = Dataset::new(
            vec![Observation::reported(vec![], 0.5, 0.0).unwrap()],
            None,
            "t",
        )
        .unwrap();
        assert!(zero_z.validate_for_fitting().is_err());

        let ok = Dataset::new(
            vec![
                Observation::reported(vec![], 0.5, 0.2).unwrap(),
                Observation::censored(vec![], 0.7).unwrap(),
            ],
            None,
            "t",
        )
        .unwrap();
        assert!(ok.validate_for_fitting().is_ok());
        assert_eq!(ok.censored_count(), 1);
        assert_eq!(ok.reported_count(), 1);
    }
}
