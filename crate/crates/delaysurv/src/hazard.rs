//! Parametric hazard families: constant hazard, piecewise-constant baseline,
//! and proportional-hazards composition with a log-linear or scalar
//! covariate effect.
//!
//! Hazards are right-continuous at knots: `t` in `[knot_k, knot_{k+1})` takes
//! the k-th rate, and the final segment extends to infinity so every survival
//! function is proper.

use crate::numeric::RngStream;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HazardError {
    #[error("covariate dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown model family `{0}`")]
    UnknownFamily(String),
    #[error("unknown effect type `{0}`")]
    UnknownEffect(String),
}

/// Constant hazard rate per unit time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantHazard {
    rate: f64,
}

impl ConstantHazard {
    pub fn new(rate: f64) -> Result<Self, HazardError> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(HazardError::InvalidParameter(format!(
                "constant hazard rate must be positive and finite, got {rate}"
            )));
        }
        Ok(Self { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

/// Piecewise-constant baseline hazard.
///
/// `knots` holds the left endpoint of every segment, starting at 0; the last
/// segment runs to infinity. `rates[k]` applies on `[knots[k], knots[k+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstantHazard {
    knots: Vec<f64>,
    rates: Vec<f64>,
}

impl PiecewiseConstantHazard {
    pub fn new(knots: Vec<f64>, rates: Vec<f64>) -> Result<Self, HazardError> {
        if knots.is_empty() || rates.is_empty() {
            return Err(HazardError::InvalidParameter(
                "piecewise hazard needs at least one segment".into(),
            ));
        }
        if knots.len() != rates.len() {
            return Err(HazardError::InvalidParameter(format!(
                "knots ({}) and rates ({}) must have equal length",
                knots.len(),
                rates.len()
            )));
        }
        if knots[0] != 0.0 {
            return Err(HazardError::InvalidParameter(
                "first knot must be 0".into(),
            ));
        }
        for w in knots.windows(2) {
            if !(w[0] < w[1]) || !w[1].is_finite() {
                return Err(HazardError::InvalidParameter(
                    "knots must be finite and strictly increasing".into(),
                ));
            }
        }
        if rates.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(HazardError::InvalidParameter(
                "all rates must be positive and finite".into(),
            ));
        }
        Ok(Self { knots, rates })
    }

    /// Single-segment baseline with the given rate.
    pub fn constant(rate: f64) -> Result<Self, HazardError> {
        Self::new(vec![0.0], vec![rate])
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn segment_count(&self) -> usize {
        self.rates.len()
    }

    /// Interior knots, the breakpoints a quadrature over `[0, t]` must split at.
    pub fn interior_knots(&self) -> &[f64] {
        &self.knots[1..]
    }

    fn segment_index(&self, t: f64) -> usize {
        // Right-continuous lookup: the last knot <= t.
        self.knots.partition_point(|k| *k <= t).saturating_sub(1)
    }

    /// Baseline hazard value at `t`.
    pub fn rate_at(&self, t: f64) -> f64 {
        self.rates[self.segment_index(t)]
    }

    /// Maximum of the baseline hazard over the closed interval `[0, t]`.
    pub fn max_rate_on(&self, t: f64) -> f64 {
        let last = self.segment_index(t);
        self.rates[..=last].iter().copied().fold(f64::MIN, f64::max)
    }

    /// Integrated baseline hazard over `[0, t]`, in closed form.
    pub fn cumulative(&self, t: f64) -> f64 {
        let mut total = 0.0;
        for k in 0..self.rates.len() {
            let lo = self.knots[k];
            if lo >= t {
                break;
            }
            let hi = self.knots.get(k + 1).copied().unwrap_or(f64::INFINITY);
            total += self.rates[k] * (t.min(hi) - lo);
        }
        total
    }

    /// Overlap of `[0, t]` with each segment; the per-rate exposure lengths.
    pub fn segment_overlaps(&self, t: f64) -> Vec<f64> {
        (0..self.rates.len())
            .map(|k| {
                let lo = self.knots[k];
                let hi = self.knots.get(k + 1).copied().unwrap_or(f64::INFINITY);
                (t.min(hi) - lo).max(0.0)
            })
            .collect()
    }

    /// Invert the cumulative baseline hazard: smallest `t` with `cumulative(t) = target`.
    pub fn inverse_cumulative(&self, target: f64) -> f64 {
        let mut remaining = target;
        for k in 0..self.rates.len() {
            let lo = self.knots[k];
            let hi = self.knots.get(k + 1).copied().unwrap_or(f64::INFINITY);
            let capacity = self.rates[k] * (hi - lo);
            if remaining <= capacity || k == self.rates.len() - 1 {
                return lo + remaining / self.rates[k];
            }
            remaining -= capacity;
        }
        unreachable!("last segment is unbounded");
    }
}

/// Multiplicative covariate effect of a proportional-hazards model.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateEffect {
    /// `exp(beta . x)`.
    LogLinear(Vec<f64>),
    /// A fixed positive factor, ignoring covariates (homogeneous cohort).
    Scalar(f64),
}

impl CovariateEffect {
    pub fn scalar(gamma: f64) -> Result<Self, HazardError> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(HazardError::InvalidParameter(format!(
                "scalar effect must be positive and finite, got {gamma}"
            )));
        }
        Ok(Self::Scalar(gamma))
    }

    pub fn log_linear(beta: Vec<f64>) -> Result<Self, HazardError> {
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(HazardError::InvalidParameter(
                "log-linear coefficients must be finite".into(),
            ));
        }
        Ok(Self::LogLinear(beta))
    }

    /// Evaluate the multiplier for covariates `x`.
    pub fn value(&self, x: &[f64]) -> Result<f64, HazardError> {
        match self {
            Self::LogLinear(beta) => {
                if beta.len() != x.len() {
                    return Err(HazardError::DimensionMismatch {
                        expected: beta.len(),
                        got: x.len(),
                    });
                }
                Ok(beta.iter().zip(x).map(|(b, xi)| b * xi).sum::<f64>().exp())
            }
            Self::Scalar(gamma) => Ok(*gamma),
        }
    }
}

/// Proportional-hazards composition `h(t | x) = h_b(t) * phi(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProportionalHazard {
    pub baseline: PiecewiseConstantHazard,
    pub effect: CovariateEffect,
}

/// A parametric hazard model over time, optionally covariate-modulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub enum HazardModel {
    Constant(ConstantHazard),
    PiecewisePh(ProportionalHazard),
}

impl HazardModel {
    pub fn constant(rate: f64) -> Result<Self, HazardError> {
        Ok(Self::Constant(ConstantHazard::new(rate)?))
    }

    pub fn piecewise_ph(
        baseline: PiecewiseConstantHazard,
        effect: CovariateEffect,
    ) -> Self {
        Self::PiecewisePh(ProportionalHazard { baseline, effect })
    }

    /// Hazard value at `t` given covariates `x`.
    pub fn hazard(&self, t: f64, x: &[f64]) -> Result<f64, HazardError> {
        match self {
            Self::Constant(c) => Ok(c.rate),
            Self::PiecewisePh(ph) => Ok(ph.baseline.rate_at(t) * ph.effect.value(x)?),
        }
    }

    /// Integrated hazard over `[0, t]` given covariates `x`; exact closed form.
    pub fn cumulative_hazard(&self, t: f64, x: &[f64]) -> Result<f64, HazardError> {
        match self {
            Self::Constant(c) => Ok(c.rate * t),
            Self::PiecewisePh(ph) => Ok(ph.baseline.cumulative(t) * ph.effect.value(x)?),
        }
    }

    pub fn survival(&self, t: f64, x: &[f64]) -> Result<f64, HazardError> {
        Ok((-self.cumulative_hazard(t, x)?).exp())
    }

    pub fn density(&self, t: f64, x: &[f64]) -> Result<f64, HazardError> {
        Ok(self.hazard(t, x)? * self.survival(t, x)?)
    }

    /// Inverse-transform event time for a uniform `u` in `(0, 1]`: the `t`
    /// with `survival(t | x) = u`.
    pub fn inverse_survival(&self, u: f64, x: &[f64]) -> Result<f64, HazardError> {
        if !(u > 0.0 && u <= 1.0) {
            return Err(HazardError::InvalidParameter(format!(
                "inverse-transform input must be in (0, 1], got {u}"
            )));
        }
        let target = -u.ln();
        match self {
            Self::Constant(c) => Ok(target / c.rate),
            Self::PiecewisePh(ph) => {
                let phi = ph.effect.value(x)?;
                Ok(ph.baseline.inverse_cumulative(target / phi))
            }
        }
    }

    /// Draw an event time by exact inversion; no rejection involved.
    pub fn sample<R: Rng>(&self, x: &[f64], rng: &mut R) -> Result<f64, HazardError> {
        // 1 - gen() lies in (0, 1], keeping the log finite.
        let u = 1.0 - rng.gen::<f64>();
        self.inverse_survival(u, x)
    }

    /// Draw with a dedicated stream; sugar over `sample`.
    pub fn sample_stream(&self, x: &[f64], stream: &RngStream) -> Result<f64, HazardError> {
        self.sample(x, &mut stream.rng())
    }

    /// Interior time breakpoints a quadrature against this model should split at.
    pub fn quadrature_breakpoints(&self) -> &[f64] {
        match self {
            Self::Constant(_) => &[],
            Self::PiecewisePh(ph) => ph.baseline.interior_knots(),
        }
    }

    pub fn as_constant(&self) -> Option<&ConstantHazard> {
        match self {
            Self::Constant(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_piecewise_ph(&self) -> Option<&ProportionalHazard> {
        match self {
            Self::PiecewisePh(ph) => Some(ph),
            _ => None,
        }
    }

    /// Free parameters in natural scale, in serialization order:
    /// constant -> `[rate]`; piecewise-PH -> rates then effect values.
    pub fn parameters(&self) -> Vec<f64> {
        match self {
            Self::Constant(c) => vec![c.rate],
            Self::PiecewisePh(ph) => {
                let mut p = ph.baseline.rates.clone();
                match &ph.effect {
                    CovariateEffect::LogLinear(beta) => p.extend_from_slice(beta),
                    CovariateEffect::Scalar(g) => p.push(*g),
                }
                p
            }
        }
    }

    /// Names matching [`HazardModel::parameters`], for traces and reports.
    pub fn parameter_names(&self, prefix: &str) -> Vec<String> {
        match self {
            Self::Constant(_) => vec![format!("{prefix}rate")],
            Self::PiecewisePh(ph) => {
                let mut names: Vec<String> = (1..=ph.baseline.rates.len())
                    .map(|k| format!("{prefix}alpha_{k}"))
                    .collect();
                match &ph.effect {
                    CovariateEffect::LogLinear(beta) => {
                        names.extend((1..=beta.len()).map(|j| format!("{prefix}beta_{j}")));
                    }
                    CovariateEffect::Scalar(_) => names.push(format!("{prefix}gamma")),
                }
                names
            }
        }
    }

    /// Rebuild a model of the same shape from a natural-scale parameter
    /// vector in the order of [`HazardModel::parameters`].
    pub fn with_parameters(&self, params: &[f64]) -> Result<Self, HazardError> {
        match self {
            Self::Constant(_) => {
                if params.len() != 1 {
                    return Err(HazardError::InvalidParameter(
                        "constant model takes exactly one parameter".into(),
                    ));
                }
                Self::constant(params[0])
            }
            Self::PiecewisePh(ph) => {
                let k = ph.baseline.rates.len();
                let effect_len = match &ph.effect {
                    CovariateEffect::LogLinear(beta) => beta.len(),
                    CovariateEffect::Scalar(_) => 1,
                };
                if params.len() != k + effect_len {
                    return Err(HazardError::InvalidParameter(format!(
                        "expected {} parameters, got {}",
                        k + effect_len,
                        params.len()
                    )));
                }
                let baseline =
                    PiecewiseConstantHazard::new(ph.baseline.knots.clone(), params[..k].to_vec())?;
                let effect = match &ph.effect {
                    CovariateEffect::LogLinear(_) => {
                        CovariateEffect::log_linear(params[k..].to_vec())?
                    }
                    CovariateEffect::Scalar(_) => CovariateEffect::scalar(params[k])?,
                };
                Ok(Self::piecewise_ph(baseline, effect))
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct EffectRepr {
    #[serde(rename = "type")]
    kind: String,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    family: String,
    rates: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    knots: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    effect: Option<EffectRepr>,
}

impl From<HazardModel> for ModelRepr {
    fn from(model: HazardModel) -> Self {
        match model {
            HazardModel::Constant(c) => ModelRepr {
                family: "constant".into(),
                rates: vec![c.rate],
                knots: None,
                effect: None,
            },
            HazardModel::PiecewisePh(ph) => {
                let effect = match &ph.effect {
                    CovariateEffect::LogLinear(beta) => EffectRepr {
                        kind: "loglinear".into(),
                        values: beta.clone(),
                    },
                    CovariateEffect::Scalar(g) => EffectRepr {
                        kind: "scalar".into(),
                        values: vec![*g],
                    },
                };
                ModelRepr {
                    family: "piecewise_ph".into(),
                    rates: ph.baseline.rates,
                    knots: Some(ph.baseline.knots),
                    effect: Some(effect),
                }
            }
        }
    }
}

impl TryFrom<ModelRepr> for HazardModel {
    type Error = HazardError;

    fn try_from(repr: ModelRepr) -> Result<Self, Self::Error> {
        match repr.family.as_str() {
            "constant" => {
                if repr.rates.len() != 1 {
                    return Err(HazardError::InvalidParameter(
                        "constant family takes exactly one rate".into(),
                    ));
                }
                HazardModel::constant(repr.rates[0])
            }
            "piecewise_ph" => {
                let knots = repr.knots.ok_or_else(|| {
                    HazardError::InvalidParameter("piecewise_ph family requires knots".into())
                })?;
                let baseline = PiecewiseConstantHazard::new(knots, repr.rates)?;
                let effect_repr = repr.effect.ok_or_else(|| {
                    HazardError::InvalidParameter("piecewise_ph family requires an effect".into())
                })?;
                let effect = match effect_repr.kind.as_str() {
                    "loglinear" => CovariateEffect::log_linear(effect_repr.values)?,
                    "scalar" => {
                        if effect_repr.values.len() != 1 {
                            return Err(HazardError::InvalidParameter(
                                "scalar effect takes exactly one value".into(),
                            ));
                        }
                        CovariateEffect::scalar(effect_repr.values[0])?
                    }
                    other => return Err(HazardError::UnknownEffect(other.into())),
                };
                Ok(HazardModel::piecewise_ph(baseline, effect))
            }
            other => Err(HazardError::UnknownFamily(other.into())),
        }
    }
}
