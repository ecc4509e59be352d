//! Two-stage transfer estimation: stage one jointly fits the baseline
//! hazard, covariate effect, and delay model on a source domain free of
//! administrative censoring; stage two estimates a single homogeneous-cohort
//! effect `gamma` on an administratively censored target, either by the
//! delay-weighted closed form or by exact one-dimensional maximization of
//! the marginal log-likelihood.

use crate::em::{run_em, EmConfig, EmError, EstimationResult, Families};
use crate::hazard::{CovariateEffect, HazardError, HazardModel, PiecewiseConstantHazard};
use crate::joint::{Dataset, JointError, ModelPair};
use crate::numeric::{
    find_root_increasing, integrate_with_breakpoints, NumericError, QuadratureSpec,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("source domain must be free of administrative censoring")]
    TauPresent,
    #[error("target domain contains no reported events; gamma is undefined")]
    NoReports,
    #[error("zero integrated baseline exposure in the target domain")]
    ZeroExposure,
    #[error("failed to bracket a maximizer for gamma: {0}")]
    NonUnimodal(String),
    #[error("model family mismatch: {0}")]
    WrongFamily(String),
    #[error(transparent)]
    Em(#[from] EmError),
    #[error(transparent)]
    Joint(#[from] JointError),
    #[error(transparent)]
    Hazard(#[from] HazardError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// Stage-one output: the transferable pieces plus full fit provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageOneResult {
    pub baseline: Vec<f64>,
    pub baseline_knots: Vec<f64>,
    pub effect: Vec<f64>,
    pub delay: HazardModel,
    pub provenance: EstimationResult,
}

impl StageOneResult {
    pub fn baseline_hazard(&self) -> Result<PiecewiseConstantHazard, HazardError> {
        PiecewiseConstantHazard::new(self.baseline_knots.clone(), self.baseline.clone())
    }
}

/// Jointly estimate the baseline hazard, log-linear covariate effect, and
/// delay model on the source domain.
pub fn fit_source(
    source: &Dataset,
    families: &Families,
    config: &EmConfig,
) -> Result<StageOneResult, TransferError> {
    if source.tau().is_some() {
        return Err(TransferError::TauPresent);
    }
    let provenance = run_em(source, families, config)?;
    let ph = provenance
        .fitted
        .accident
        .as_piecewise_ph()
        .ok_or_else(|| {
            TransferError::WrongFamily(
                "stage one requires a piecewise proportional-hazards accident family".into(),
            )
        })?;
    let effect = match &ph.effect {
        CovariateEffect::LogLinear(beta) => beta.clone(),
        CovariateEffect::Scalar(_) => {
            return Err(TransferError::WrongFamily(
                "stage one requires a log-linear covariate effect".into(),
            ))
        }
    };
    Ok(StageOneResult {
        baseline: ph.baseline.rates().to_vec(),
        baseline_knots: ph.baseline.knots().to_vec(),
        effect,
        delay: provenance.fitted.delay.clone(),
        provenance,
    })
}

fn reported_count_checked(target: &Dataset) -> Result<usize, TransferError> {
    let reported = target.reported_count();
    if reported == 0 {
        return Err(TransferError::NoReports);
    }
    Ok(reported)
}

fn y_dagger(obs: &crate::joint::Observation) -> Result<f64, TransferError> {
    obs.y_dagger()
        .ok_or(TransferError::Joint(JointError::MissingLatent))
}

/// Closed-form target effect that ignores unreported accidents entirely:
/// reported events over integrated baseline exposure up to `y_dagger`.
pub fn gamma_check0(
    target: &Dataset,
    baseline: &PiecewiseConstantHazard,
) -> Result<f64, TransferError> {
    let reported = reported_count_checked(target)?;
    let mut denominator = 0.0;
    for obs in target.observations() {
        denominator += baseline.cumulative(y_dagger(obs)?);
    }
    if !(denominator > 0.0) {
        return Err(TransferError::ZeroExposure);
    }
    Ok(reported as f64 / denominator)
}

/// Delay-weighted closed-form target effect: exposure on unreported rows is
/// down-weighted by the probability that an accident at each time would have
/// been reported within the remaining window.
pub fn gamma_check(
    target: &Dataset,
    baseline: &PiecewiseConstantHazard,
    delay: &HazardModel,
) -> Result<f64, TransferError> {
    let reported = reported_count_checked(target)?;
    let spec = QuadratureSpec::default();
    let mut denominator = 0.0;
    for obs in target.observations() {
        if obs.reported {
            denominator += baseline.cumulative(y_dagger(obs)?);
        } else {
            let y = obs.time;
            if y == 0.0 {
                continue;
            }
            let x = &obs.covariates;
            let mut breakpoints: Vec<f64> = baseline.interior_knots().to_vec();
            breakpoints.extend(delay.quadrature_breakpoints().iter().map(|k| y - k));
            denominator += integrate_with_breakpoints(
                |t| baseline.rate_at(t) * (1.0 - delay.survival(y - t, x).unwrap_or(f64::NAN)),
                0.0,
                y,
                &breakpoints,
                &spec,
            )?;
        }
    }
    if !(denominator > 0.0) {
        return Err(TransferError::ZeroExposure);
    }
    Ok(reported as f64 / denominator)
}

/// Analytic score `dE/dgamma` of the target marginal log-likelihood with the
/// baseline and delay frozen. The latent-row ratio terms are rescaled by
/// `exp(-gamma A(y))` so every exponent stays nonpositive.
pub fn gamma_score(
    target: &Dataset,
    baseline: &PiecewiseConstantHazard,
    delay: &HazardModel,
    gamma: f64,
    spec: &QuadratureSpec,
) -> Result<f64, TransferError> {
    let reported = target.reported_count() as f64;
    let mut score = reported / gamma;
    for obs in target.observations() {
        score -= baseline.cumulative(y_dagger(obs)?);
    }
    for obs in target.observations().iter().filter(|o| !o.reported) {
        let y = obs.time;
        if y == 0.0 {
            continue;
        }
        let x = &obs.covariates;
        let cum_y = baseline.cumulative(y);
        let mut breakpoints: Vec<f64> = baseline.interior_knots().to_vec();
        breakpoints.extend(delay.quadrature_breakpoints().iter().map(|k| y - k));
        let numerator = integrate_with_breakpoints(
            |t| {
                let cum_t = baseline.cumulative(t);
                (1.0 + gamma * (cum_y - cum_t))
                    * baseline.rate_at(t)
                    * (-gamma * cum_t).exp()
                    * delay.survival(y - t, x).unwrap_or(f64::NAN)
            },
            0.0,
            y,
            &breakpoints,
            spec,
        )?;
        let integral = integrate_with_breakpoints(
            |t| {
                let cum_t = baseline.cumulative(t);
                baseline.rate_at(t)
                    * (-gamma * cum_t).exp()
                    * delay.survival(y - t, x).unwrap_or(f64::NAN)
            },
            0.0,
            y,
            &breakpoints,
            spec,
        )?;
        let denominator = (-gamma * cum_y).exp() + gamma * integral;
        score += numerator / denominator;
    }
    Ok(score)
}

#[derive(Debug, Clone, Copy)]
pub struct GammaHatOptions {
    pub relative_tolerance: f64,
    pub quadrature: QuadratureSpec,
}

impl Default for GammaHatOptions {
    fn default() -> Self {
        Self {
            relative_tolerance: 1e-8,
            quadrature: QuadratureSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GammaHat {
    pub value: f64,
    /// Residual score at the returned maximizer.
    pub score: f64,
}

fn target_loglik(
    target: &Dataset,
    baseline: &PiecewiseConstantHazard,
    delay: &HazardModel,
    gamma: f64,
) -> Result<f64, TransferError> {
    let accident = HazardModel::piecewise_ph(baseline.clone(), CovariateEffect::scalar(gamma)?);
    Ok(crate::joint::marginal_loglik(
        &ModelPair::new(accident, delay.clone()),
        target,
    )?)
}

/// Exact one-dimensional maximizer of the target marginal log-likelihood
/// over `gamma`, with all other parameters frozen: golden-section
/// localization followed by a Newton polish on the analytic score.
pub fn gamma_hat(
    target: &Dataset,
    baseline: &PiecewiseConstantHazard,
    delay: &HazardModel,
    opts: &GammaHatOptions,
) -> Result<GammaHat, TransferError> {
    reported_count_checked(target)?;
    let lower = gamma_check0(target, baseline)?;
    let score_at = |g: f64| gamma_score(target, baseline, delay, g, &opts.quadrature);

    // The score is strictly positive below gamma_check0 unless there is no
    // latent mass at all, in which case gamma_check0 is already exact.
    let score_lower = score_at(lower)?;
    if score_lower <= 0.0 {
        return Ok(GammaHat {
            value: lower,
            score: score_lower,
        });
    }
    let mut hi = lower * 2.0;
    let mut score_hi = score_at(hi)?;
    let mut doublings = 0;
    while score_hi > 0.0 {
        hi *= 2.0;
        score_hi = score_at(hi)?;
        doublings += 1;
        if doublings > 60 {
            return Err(TransferError::NonUnimodal(format!(
                "score still positive at gamma = {hi}"
            )));
        }
    }

    // Golden-section on the log-likelihood localizes the maximizer.
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut a = lower;
    let mut b = hi;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = target_loglik(target, baseline, delay, c)?;
    let mut fd = target_loglik(target, baseline, delay, d)?;
    // Localize to 1e-6 relative width; the Newton polish finishes the job.
    while (b - a) > 1e-6 * b.max(1e-12) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = target_loglik(target, baseline, delay, c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = target_loglik(target, baseline, delay, d)?;
        }
    }
    let mut gamma = 0.5 * (a + b);

    // Newton polish on the score with a secant-style derivative.
    for _ in 0..40 {
        let s = score_at(gamma)?;
        let h = 1e-6 * gamma;
        let slope = (score_at(gamma + h)? - score_at(gamma - h)?) / (2.0 * h);
        if !(slope < 0.0) {
            break;
        }
        let next = (gamma - s / slope).clamp(lower, hi);
        let shift = (next - gamma).abs();
        gamma = next;
        if shift <= opts.relative_tolerance * gamma {
            break;
        }
    }
    Ok(GammaHat {
        value: gamma,
        score: score_at(gamma)?,
    })
}

/// `epsilon(delta) = int_delta^y S_2(u | x) e^{u nu} du`, the inflated tail
/// mass of the delay survival over the remaining window.
fn epsilon(
    delay: &HazardModel,
    x: &[f64],
    y: f64,
    nu: f64,
    delta: f64,
    spec: &QuadratureSpec,
) -> Result<f64, TransferError> {
    if delta >= y {
        return Ok(0.0);
    }
    Ok(integrate_with_breakpoints(
        |u| delay.survival(u, x).unwrap_or(f64::NAN) * (u * nu).exp(),
        delta,
        y,
        delay.quadrature_breakpoints(),
        spec,
    )?)
}

/// Per-row ingredients of the approximation-error order term.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RowDiagnostic {
    /// Report window `y` of the unreported row.
    pub report_time: f64,
    /// `nu = gamma_hat * max h_b over [0, y]`.
    pub nu: f64,
    /// Fixed point of `delta = epsilon(delta)`.
    pub delta_star: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaDiagnostics {
    pub rows: Vec<RowDiagnostic>,
    /// `sum delta* y nu^2 / (n - m)`, the order term bounding
    /// `gamma_hat / gamma_check - 1`.
    pub aggregate: f64,
}

/// Evaluate the ratio-error diagnostic for a computed `gamma_hat`: per
/// unreported row the fixed point `delta* = epsilon(delta*)` exists because
/// `epsilon` decreases to `epsilon(y) = 0`.
pub fn ratio_diagnostic(
    target: &Dataset,
    baseline: &PiecewiseConstantHazard,
    delay: &HazardModel,
    gamma_hat: f64,
) -> Result<GammaDiagnostics, TransferError> {
    let reported = reported_count_checked(target)?;
    let spec = QuadratureSpec::default();
    let mut rows = Vec::new();
    let mut aggregate = 0.0;
    for obs in target.observations().iter().filter(|o| !o.reported) {
        let y = obs.time;
        let nu = gamma_hat * baseline.max_rate_on(y);
        let delta_star = if y == 0.0 {
            0.0
        } else {
            let x = obs.covariates.clone();
            let g = |delta: f64| match epsilon(delay, &x, y, nu, delta, &spec) {
                Ok(e) => delta - e,
                Err(_) => f64::NAN,
            };
            find_root_increasing(g, 0.0, y, 1e-10 * (1.0 + y))?
        };
        aggregate += delta_star * y * nu * nu;
        rows.push(RowDiagnostic {
            report_time: y,
            nu,
            delta_star,
        });
    }
    aggregate /= reported as f64;
    Ok(GammaDiagnostics { rows, aggregate })
}

/// All target-effect estimators plus diagnostics, ready for serialization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaEstimates {
    pub gamma_check0: f64,
    pub gamma_check: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<RowDiagnostic>>,
}

impl GammaEstimates {
    /// CSV row `gamma_check0,gamma_check,gamma_hat,diag`.
    pub fn csv_row(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        format!(
            "{},{},{},{}",
            self.gamma_check0,
            self.gamma_check,
            fmt(self.gamma_hat),
            fmt(self.diagnostic)
        )
    }
}

/// Run stage two on a target domain. The default mode reports the
/// closed forms only; exact mode adds the one-dimensional maximizer and its
/// error diagnostic.
pub fn estimate_gamma(
    target: &Dataset,
    baseline: &PiecewiseConstantHazard,
    delay: &HazardModel,
    exact: bool,
) -> Result<GammaEstimates, TransferError> {
    let check0 = gamma_check0(target, baseline)?;
    let check = gamma_check(target, baseline, delay)?;
    if !exact {
        return Ok(GammaEstimates {
            gamma_check0: check0,
            gamma_check: check,
            gamma_hat: None,
            diagnostic: None,
            rows: None,
        });
    }
    let hat = gamma_hat(target, baseline, delay, &GammaHatOptions::default())?;
    let diag = ratio_diagnostic(target, baseline, delay, hat.value)?;
    Ok(GammaEstimates {
        gamma_check0: check0,
        gamma_check: check,
        gamma_hat: Some(hat.value),
        diagnostic: Some(diag.aggregate),
        rows: Some(diag.rows),
    })
}
