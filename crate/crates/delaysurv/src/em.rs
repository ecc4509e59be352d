//! Lower-bound maximization with a Monte-Carlo E-step.
//!
//! Each iteration refreshes the posterior over the latent accident status of
//! every unreported row, imputes it `s` times by rejection sampling, and
//! refits the accident and delay models by weighted full likelihood on the
//! aggregated pseudo-complete datasets. Reported rows enter once with weight
//! `s` instead of being duplicated; the argmax is identical and the memory
//! cost `s` times lower.

use crate::hazard::{CovariateEffect, HazardError, HazardModel, PiecewiseConstantHazard};
use crate::joint::{
    f_circ, marginal_loglik, posterior_q, Dataset, JointError, ModelPair, Observation,
};
use crate::numeric::{
    integrate_with_breakpoints, maximize_concave, NumericError, OptimOptions, QuadratureSpec,
    RngStream,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmError {
    #[error(transparent)]
    Joint(#[from] JointError),
    #[error(transparent)]
    Hazard(#[from] HazardError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("no events in the pseudo-complete data; nothing to fit")]
    NoEvents,
    #[error("zero total exposure in the pseudo-complete data")]
    ZeroExposure,
    #[error("rejection sampler exhausted its cap of {cap} attempts; parameters are pathological")]
    IterationCap { cap: usize },
    #[error("rejection sampling applies only to unreported rows")]
    RowIsReported,
    #[error("model family mismatch: {0}")]
    WrongFamily(String),
    #[error("invalid EM config: {0}")]
    InvalidConfig(String),
}

/// Covariate-effect shape of the accident family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectSpec {
    LogLinear { dim: usize },
    Scalar,
}

/// Parametric family fitted for the accident process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccidentFamily {
    Constant,
    PiecewisePh { knots: Vec<f64>, effect: EffectSpec },
}

/// Parametric family fitted for the reporting delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayFamily {
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Families {
    pub accident: AccidentFamily,
    pub delay: DelayFamily,
}

/// Initialization strategy for the EM loop.
#[derive(Debug, Clone)]
pub enum EmInit {
    /// Substitute the missing accident status with `(y, 0)` and fit.
    Naive,
    Explicit(ModelPair),
}

#[derive(Debug, Clone)]
pub struct EmConfig {
    pub iterations: usize,
    /// Number of pseudo-complete replicates `s`.
    pub replicates: usize,
    pub seed: RngStream,
    pub optim: OptimOptions,
    pub rejection_cap: usize,
    pub init: EmInit,
}

impl EmConfig {
    pub fn new(seed: RngStream) -> Self {
        Self {
            iterations: 30,
            replicates: 10,
            seed,
            optim: OptimOptions::default(),
            rejection_cap: 1_000_000,
            init: EmInit::Naive,
        }
    }
}

/// One weighted right-censored accident observation `(x, z, w)`.
#[derive(Debug, Clone)]
pub struct AccidentRow {
    pub covariates: Vec<f64>,
    pub time: f64,
    pub event: bool,
    pub weight: f64,
}

/// One weighted right-censored delay duration `(x, y - z, v)`.
#[derive(Debug, Clone)]
pub struct DurationRow {
    pub covariates: Vec<f64>,
    pub duration: f64,
    pub event: bool,
    pub weight: f64,
}

/// The aggregated pseudo-complete datasets produced by the E-step.
#[derive(Debug, Clone)]
pub struct PseudoCompleteDatasets {
    pub accident_rows: Vec<AccidentRow>,
    pub delay_rows: Vec<DurationRow>,
    pub replicate_count: usize,
}

/// Draw the latent accident status of an unreported row from its posterior.
///
/// Repeatedly samples an accident time from the current accident model; a
/// draw beyond the censoring window returns the no-accident imputation
/// `(y, 0)`, and a draw inside it is accepted with probability equal to the
/// survival of the delay over the remaining window. The accepted pair is
/// distributed exactly as the posterior, with no normalizing constant
/// evaluated.
pub fn reject_sample<R: Rng>(
    pair: &ModelPair,
    obs: &Observation,
    rng: &mut R,
    cap: usize,
) -> Result<(f64, bool), EmError> {
    if obs.reported {
        return Err(EmError::RowIsReported);
    }
    let x = &obs.covariates;
    let y = obs.time;
    for _ in 0..cap {
        let t = pair.accident.sample(x, rng)?;
        if t > y {
            return Ok((y, false));
        }
        let u: f64 = rng.gen();
        if u <= pair.delay.survival(y - t, x)? {
            return Ok((t, true));
        }
    }
    Err(EmError::IterationCap { cap })
}

/// Build the pseudo-complete datasets: every unreported row contributes `s`
/// independent imputations with unit weight, every reported row its observed
/// status once with weight `s`. Deterministic given the stream.
pub fn e_step(
    pair: &ModelPair,
    data: &Dataset,
    replicates: usize,
    stream: RngStream,
    rejection_cap: usize,
) -> Result<PseudoCompleteDatasets, EmError> {
    data.validate_for_fitting()?;
    let s = replicates.max(1);
    let mut accident_rows = Vec::new();
    let mut delay_rows = Vec::new();
    for (i, obs) in data.observations().iter().enumerate() {
        if obs.reported {
            let z = obs.accident_time.ok_or(JointError::MissingLatent)?;
            accident_rows.push(AccidentRow {
                covariates: obs.covariates.clone(),
                time: z,
                event: true,
                weight: s as f64,
            });
            delay_rows.push(DurationRow {
                covariates: obs.covariates.clone(),
                duration: obs.time - z,
                event: true,
                weight: s as f64,
            });
        } else {
            let mut rng = stream.substream(i as u64).rng();
            for _ in 0..s {
                let (z, w) = reject_sample(pair, obs, &mut rng, rejection_cap)?;
                accident_rows.push(AccidentRow {
                    covariates: obs.covariates.clone(),
                    time: z,
                    event: w,
                    weight: 1.0,
                });
                delay_rows.push(DurationRow {
                    covariates: obs.covariates.clone(),
                    duration: obs.time - z,
                    event: false,
                    weight: 1.0,
                });
            }
        }
    }
    Ok(PseudoCompleteDatasets {
        accident_rows,
        delay_rows,
        replicate_count: s,
    })
}

fn constant_rate_mle(events: f64, exposure: f64) -> Result<f64, EmError> {
    if !(events > 0.0) {
        return Err(EmError::NoEvents);
    }
    if !(exposure > 0.0) {
        return Err(EmError::ZeroExposure);
    }
    Ok(events / exposure)
}

/// Weighted full-likelihood MLE of the accident model on a right-censored
/// sample. The constant family has the closed-form exposure estimator; the
/// piecewise-PH family maximizes the concave log-likelihood over
/// `(log rates, effect)` by projected Newton.
pub fn m_step_accident(
    rows: &[AccidentRow],
    family: &AccidentFamily,
    warm_start: Option<&HazardModel>,
    optim: &OptimOptions,
) -> Result<HazardModel, EmError> {
    let events: f64 = rows.iter().filter(|r| r.event).map(|r| r.weight).sum();
    if !(events > 0.0) {
        return Err(EmError::NoEvents);
    }
    match family {
        AccidentFamily::Constant => {
            let exposure: f64 = rows.iter().map(|r| r.weight * r.time).sum();
            Ok(HazardModel::constant(constant_rate_mle(events, exposure)?)?)
        }
        AccidentFamily::PiecewisePh { knots, effect } => {
            fit_piecewise_ph(rows, knots, effect, warm_start, optim)
        }
    }
}

struct PhRow {
    x: Vec<f64>,
    weight: f64,
    event: bool,
    /// Segment index of the event time (valid when `event`).
    segment: usize,
    /// Exposure overlap with each baseline segment.
    overlaps: Vec<f64>,
}

fn fit_piecewise_ph(
    rows: &[AccidentRow],
    knots: &[f64],
    effect: &EffectSpec,
    warm_start: Option<&HazardModel>,
    optim: &OptimOptions,
) -> Result<HazardModel, EmError> {
    // A unit-rate skeleton supplies segment bookkeeping for the fit.
    let skeleton = PiecewiseConstantHazard::new(knots.to_vec(), vec![1.0; knots.len()])?;
    let n_seg = skeleton.segment_count();
    let effect_dim = match effect {
        EffectSpec::LogLinear { dim } => *dim,
        EffectSpec::Scalar => 1,
    };
    let dim = n_seg + effect_dim;

    let prepared: Vec<PhRow> = rows
        .iter()
        .map(|r| {
            if let EffectSpec::LogLinear { dim } = effect {
                if r.covariates.len() != *dim {
                    return Err(EmError::Hazard(HazardError::DimensionMismatch {
                        expected: *dim,
                        got: r.covariates.len(),
                    }));
                }
            }
            Ok(PhRow {
                x: r.covariates.clone(),
                weight: r.weight,
                event: r.event,
                segment: knots.partition_point(|k| *k <= r.time).saturating_sub(1),
                overlaps: skeleton.segment_overlaps(r.time),
            })
        })
        .collect::<Result<_, _>>()?;

    // Parameters: log baseline rates, then the effect coordinates
    // (log-linear coefficients in natural scale, scalar effect as its log).
    let log_phi = |theta: &[f64], x: &[f64]| -> f64 {
        match effect {
            EffectSpec::LogLinear { .. } => theta[n_seg..]
                .iter()
                .zip(x)
                .map(|(b, xi)| b * xi)
                .sum::<f64>(),
            EffectSpec::Scalar => theta[n_seg],
        }
    };

    let objective = |theta: &[f64]| -> f64 {
        let mut total = 0.0;
        for row in &prepared {
            let lp = log_phi(theta, &row.x);
            let phi = lp.exp();
            let cum: f64 = row
                .overlaps
                .iter()
                .zip(&theta[..n_seg])
                .map(|(o, u)| o * u.exp())
                .sum();
            if row.event {
                total += row.weight * (theta[row.segment] + lp);
            }
            total -= row.weight * phi * cum;
        }
        total
    };

    let gradient = |theta: &[f64]| -> Vec<f64> {
        let mut grad = vec![0.0f64; dim];
        for row in &prepared {
            let lp = log_phi(theta, &row.x);
            let phi = lp.exp();
            let mut cum = 0.0;
            for (k, overlap) in row.overlaps.iter().enumerate() {
                let exposure = overlap * theta[k].exp();
                cum += exposure;
                grad[k] -= row.weight * phi * exposure;
            }
            if row.event {
                grad[row.segment] += row.weight;
            }
            match effect {
                EffectSpec::LogLinear { .. } => {
                    let event_ind = if row.event { 1.0 } else { 0.0 };
                    for (j, xj) in row.x.iter().enumerate() {
                        grad[n_seg + j] += row.weight * xj * (event_ind - phi * cum);
                    }
                }
                EffectSpec::Scalar => {
                    let event_ind = if row.event { 1.0 } else { 0.0 };
                    grad[n_seg] += row.weight * (event_ind - phi * cum);
                }
            }
        }
        grad
    };

    let init = initial_theta(&prepared, n_seg, effect_dim, effect, warm_start);
    let mut bounds = vec![(-25.0, 15.0); n_seg];
    match effect {
        EffectSpec::LogLinear { .. } => bounds.extend(vec![(-50.0, 50.0); effect_dim]),
        EffectSpec::Scalar => bounds.push((-25.0, 15.0)),
    }

    let report = maximize_concave(objective, gradient, &init, &bounds, optim)?;
    let theta = report.argmax;
    let rates: Vec<f64> = theta[..n_seg].iter().map(|u| u.exp()).collect();
    let baseline = PiecewiseConstantHazard::new(knots.to_vec(), rates)?;
    let fitted_effect = match effect {
        EffectSpec::LogLinear { .. } => CovariateEffect::log_linear(theta[n_seg..].to_vec())?,
        EffectSpec::Scalar => CovariateEffect::scalar(theta[n_seg].exp())?,
    };
    Ok(HazardModel::piecewise_ph(baseline, fitted_effect))
}

fn initial_theta(
    rows: &[PhRow],
    n_seg: usize,
    effect_dim: usize,
    effect: &EffectSpec,
    warm_start: Option<&HazardModel>,
) -> Vec<f64> {
    if let Some(HazardModel::PiecewisePh(ph)) = warm_start {
        if ph.baseline.segment_count() == n_seg {
            let mut theta: Vec<f64> = ph.baseline.rates().iter().map(|r| r.ln()).collect();
            match (&ph.effect, effect) {
                (CovariateEffect::LogLinear(beta), EffectSpec::LogLinear { dim })
                    if beta.len() == *dim =>
                {
                    theta.extend_from_slice(beta);
                    return theta;
                }
                (CovariateEffect::Scalar(g), EffectSpec::Scalar) => {
                    theta.push(g.ln());
                    return theta;
                }
                _ => {}
            }
        }
    }
    // Pooled exposure estimate: one shared rate, neutral effect.
    let events: f64 = rows.iter().filter(|r| r.event).map(|r| r.weight).sum();
    let exposure: f64 = rows
        .iter()
        .map(|r| r.weight * r.overlaps.iter().sum::<f64>())
        .sum();
    let pooled = (events / exposure.max(1e-12)).max(1e-8).ln();
    let mut theta = vec![pooled; n_seg];
    theta.extend(vec![0.0; effect_dim]);
    theta
}

/// Weighted exposure MLE of the constant delay rate; zero-duration rows from
/// no-accident imputations contribute neither events nor exposure.
pub fn m_step_delay(rows: &[DurationRow], family: &DelayFamily) -> Result<HazardModel, EmError> {
    match family {
        DelayFamily::Constant => {
            let events: f64 = rows.iter().filter(|r| r.event).map(|r| r.weight).sum();
            let exposure: f64 = rows.iter().map(|r| r.weight * r.duration).sum();
            Ok(HazardModel::constant(constant_rate_mle(events, exposure)?)?)
        }
    }
}

/// Substitute the missing accident status with `(y, 0)` and fit both models
/// by full likelihood. This is the EM initializer and also the Naive
/// baseline estimator.
pub fn naive_init(
    data: &Dataset,
    families: &Families,
    optim: &OptimOptions,
) -> Result<ModelPair, EmError> {
    data.validate_for_fitting()?;
    let mut accident_rows = Vec::with_capacity(data.len());
    let mut delay_rows = Vec::with_capacity(data.len());
    for obs in data.observations() {
        if obs.reported {
            let z = obs.accident_time.ok_or(JointError::MissingLatent)?;
            accident_rows.push(AccidentRow {
                covariates: obs.covariates.clone(),
                time: z,
                event: true,
                weight: 1.0,
            });
            delay_rows.push(DurationRow {
                covariates: obs.covariates.clone(),
                duration: obs.time - z,
                event: true,
                weight: 1.0,
            });
        } else {
            accident_rows.push(AccidentRow {
                covariates: obs.covariates.clone(),
                time: obs.time,
                event: false,
                weight: 1.0,
            });
            delay_rows.push(DurationRow {
                covariates: obs.covariates.clone(),
                duration: 0.0,
                event: false,
                weight: 1.0,
            });
        }
    }
    let accident = m_step_accident(&accident_rows, &families.accident, None, optim)?;
    let delay = m_step_delay(&delay_rows, &families.delay)?;
    Ok(ModelPair::new(accident, delay))
}

/// Parameters and exact marginal log-likelihood after one EM iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub loglik: f64,
    pub parameters: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmDiagnostics {
    /// Relative parameter movement per iteration; reported only, never used
    /// for early stopping.
    pub parameter_drift: Vec<f64>,
    /// Drift of the final iteration.
    pub final_parameter_drift: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationResult {
    pub fitted: ModelPair,
    pub trace: Vec<TracePoint>,
    pub seed: RngStream,
    pub diagnostics: EmDiagnostics,
}

impl EstimationResult {
    pub fn parameter_names(&self) -> Vec<String> {
        self.fitted.parameter_names()
    }

    /// Trace as CSV `iter,loglik,param_1,...`.
    pub fn write_trace_csv<W: std::io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["iter".to_string(), "loglik".to_string()];
        header.extend(self.parameter_names());
        w.write_record(&header)?;
        for point in &self.trace {
            let mut row = vec![point.iteration.to_string(), format!("{}", point.loglik)];
            row.extend(point.parameters.iter().map(|p| format!("{p}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Run the fixed-iteration EM loop: refresh the posterior, impute `s`
/// pseudo-complete datasets, refit both models, and record the exact
/// marginal log-likelihood. No early stopping.
pub fn run_em(
    data: &Dataset,
    families: &Families,
    config: &EmConfig,
) -> Result<EstimationResult, EmError> {
    data.validate_for_fitting()?;
    if config.iterations == 0 {
        return Err(EmError::InvalidConfig("iterations must be >= 1".into()));
    }
    let mut current = match &config.init {
        EmInit::Naive => naive_init(data, families, &config.optim)?,
        EmInit::Explicit(pair) => pair.clone(),
    };
    let mut trace = vec![TracePoint {
        iteration: 0,
        loglik: marginal_loglik(&current, data)?,
        parameters: current.parameters(),
    }];

    let mut drifts = Vec::with_capacity(config.iterations);
    for iteration in 1..=config.iterations {
        let stream = config.seed.substream(iteration as u64);
        let pseudo = e_step(&current, data, config.replicates, stream, config.rejection_cap)?;
        let accident = m_step_accident(
            &pseudo.accident_rows,
            &families.accident,
            Some(&current.accident),
            &config.optim,
        )?;
        let delay = m_step_delay(&pseudo.delay_rows, &families.delay)?;
        let next = ModelPair::new(accident, delay);

        let prev = current.parameters();
        let now = next.parameters();
        let num: f64 = prev
            .iter()
            .zip(&now)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let den: f64 = (1.0 + now.iter().map(|p| p * p).sum::<f64>()).sqrt();
        drifts.push(num / den);

        current = next;
        trace.push(TracePoint {
            iteration,
            loglik: marginal_loglik(&current, data)?,
            parameters: current.parameters(),
        });
    }

    Ok(EstimationResult {
        fitted: current,
        trace,
        seed: config.seed,
        diagnostics: EmDiagnostics {
            final_parameter_drift: drifts.last().copied().unwrap_or(0.0),
            parameter_drift: drifts,
        },
    })
}

/// Exact evidence lower bound: the expected complete-data log-likelihood
/// under the posterior formed from `q_source`, plus that posterior's
/// entropy, with the latent integrals evaluated by quadrature. Equals the
/// marginal log-likelihood when `q_source` is the evaluated pair.
pub fn lower_bound_value(
    pair: &ModelPair,
    data: &Dataset,
    q_source: &ModelPair,
    spec: &QuadratureSpec,
) -> Result<f64, EmError> {
    let mut total = 0.0;
    for obs in data.observations() {
        let x = &obs.covariates;
        let y = obs.time;
        if obs.reported {
            let z = obs.accident_time.ok_or(JointError::MissingLatent)?;
            total += f_circ(pair, z, y, x)?.ln();
            continue;
        }
        let q = posterior_q(q_source, obs)?;
        let atom = q.atom_mass();
        if atom > 0.0 {
            total += atom * (pair.accident.survival(y, x)?.ln() - atom.ln());
        }
        if y > 0.0 {
            let mut breakpoints: Vec<f64> = pair.accident.quadrature_breakpoints().to_vec();
            breakpoints.extend_from_slice(q_source.accident.quadrature_breakpoints());
            let integral = integrate_with_breakpoints(
                |z| {
                    let density = q.density(z).unwrap_or(f64::NAN);
                    if density <= 0.0 {
                        return 0.0;
                    }
                    let complete = pair.accident.density(z, x).unwrap_or(f64::NAN).ln()
                        + pair.delay.survival(y - z, x).unwrap_or(f64::NAN).ln();
                    density * (complete - density.ln())
                },
                0.0,
                y,
                &breakpoints,
                spec,
            )?;
            total += integral;
        }
    }
    Ok(total)
}
