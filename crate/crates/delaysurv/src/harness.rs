//! Benchmark drivers and the validation suite: the toy benchmark comparing
//! Complete/Naive/Ours estimation, the insurance risk-metric evaluation, and
//! machine-checkable invariant suites shared by the `validate` command and
//! the acceptance tests.

use crate::em::{
    m_step_accident, naive_init, run_em, AccidentFamily, AccidentRow, DelayFamily, EffectSpec,
    EmConfig, EmError, Families,
};
use crate::hazard::{CovariateEffect, HazardModel, PiecewiseConstantHazard};
use crate::joint::{
    admin_atom_probability, f_circ, marginal_loglik, marginal_loglik_gradient, posterior_q,
    s_circ, s_circ_quadrature, Dataset, ModelPair, Observation,
};
use crate::numeric::{
    finite_diff_gradient, integrate_with_breakpoints, OptimOptions, QuadratureSpec, RngStream,
};
use crate::sim::{
    observe, semi_synthetic, simulate_complete, AccidentRecord, CovariateLaw, ObservedData,
    SimulationConfig,
};
use crate::stats;
use crate::two_stage::{
    gamma_check, gamma_check0, gamma_hat, ratio_diagnostic, GammaHatOptions, TransferError,
};
use crate::em::reject_sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Em(#[from] EmError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error(transparent)]
    Joint(#[from] crate::joint::JointError),
    #[error(transparent)]
    Hazard(#[from] crate::hazard::HazardError),
    #[error(transparent)]
    Numeric(#[from] crate::numeric::NumericError),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("all {0} trials failed")]
    AllTrialsFailed(usize),
}

/// Estimation method compared in the benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Fits on the hidden complete data; the oracle upper bound.
    Complete,
    /// Substitutes missing accident status with `(y, 0)`.
    Naive,
    /// Marginalized-likelihood EM plus the delay-weighted transfer.
    Ours,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Complete => write!(f, "Complete"),
            Method::Naive => write!(f, "Naive"),
            Method::Ours => write!(f, "Ours"),
        }
    }
}

fn default_trials() -> usize {
    100
}
fn default_n() -> usize {
    1000
}
fn default_dim() -> usize {
    1
}
fn default_knots() -> Vec<f64> {
    vec![0.0, 0.5, 1.0]
}
fn default_alpha() -> Vec<f64> {
    vec![0.1, 0.2, 0.3]
}
fn default_beta() -> Vec<f64> {
    vec![1.0]
}
fn default_gamma() -> f64 {
    2.0
}
fn default_lambda() -> f64 {
    5.0
}
fn default_censor() -> f64 {
    1.0
}
fn default_tau() -> f64 {
    0.75
}
fn default_methods() -> Vec<Method> {
    vec![Method::Complete, Method::Naive, Method::Ours]
}
fn default_seed() -> u64 {
    20260809
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EmSettings {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
}

fn default_iterations() -> usize {
    30
}
fn default_replicates() -> usize {
    10
}

impl Default for EmSettings {
    fn default() -> Self {
        Self {
            iterations: 30,
            replicates: 10,
        }
    }
}

/// Configuration of the toy benchmark: true parameter values, trial count,
/// method set, and EM settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyConfig {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_dim")]
    pub covariate_dim: usize,
    #[serde(default = "default_knots")]
    pub knots: Vec<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: Vec<f64>,
    #[serde(default = "default_beta")]
    pub beta: Vec<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_lambda")]
    pub lambda_star: f64,
    #[serde(default = "default_censor")]
    pub censor_rate: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub em: EmSettings,
    /// Use the true `(alpha, lambda)` for the second stage, isolating its
    /// behavior from stage-one error.
    #[serde(default = "default_true")]
    pub stage2_truth: bool,
    /// Worker threads for parallel trials; 0 uses the rayon default.
    #[serde(default)]
    pub jobs: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl ToyConfig {
    pub fn baseline(&self) -> Result<PiecewiseConstantHazard, HarnessError> {
        Ok(PiecewiseConstantHazard::new(
            self.knots.clone(),
            self.alpha.clone(),
        )?)
    }

    fn families(&self) -> Families {
        Families {
            accident: AccidentFamily::PiecewisePh {
                knots: self.knots.clone(),
                effect: EffectSpec::LogLinear {
                    dim: self.covariate_dim,
                },
            },
            delay: DelayFamily::Constant,
        }
    }

    /// True parameter value by report column name.
    pub fn truth(&self, param: &str) -> Option<f64> {
        if param == "lambda" {
            return Some(self.lambda_star);
        }
        if param == "gamma" {
            return Some(self.gamma);
        }
        if let Some(idx) = param.strip_prefix("alpha_") {
            return idx.parse::<usize>().ok().and_then(|k| self.alpha.get(k - 1)).copied();
        }
        if let Some(idx) = param.strip_prefix("beta_") {
            return idx.parse::<usize>().ok().and_then(|j| self.beta.get(j - 1)).copied();
        }
        None
    }
}

/// One aggregated summary cell of a benchmark table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub lambda_star: f64,
    pub param: String,
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToySummary {
    pub rows: Vec<SummaryRow>,
    /// `(trial, method, error)` for excluded trials.
    pub failures: Vec<(usize, Method, String)>,
}

impl ToySummary {
    pub fn mean_of(&self, method: Method, param: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.param == param)
            .map(|r| r.mean)
    }
}

type ParamEstimates = Vec<(String, f64)>;

/// Weighted accident rows built from the hidden truth channel, the input of
/// complete-data baseline fits.
pub fn accident_rows_from_truth(data: &ObservedData) -> Vec<AccidentRow> {
    data.dataset
        .observations()
        .iter()
        .zip(&data.truth)
        .map(|(obs, truth)| AccidentRow {
            covariates: obs.covariates.clone(),
            time: truth.accident_time,
            event: truth.accident_occurred,
            weight: 1.0,
        })
        .collect()
}

/// Complete-data exposure MLE of the scalar target effect with a fixed
/// baseline: accidents over integrated baseline hazard.
fn complete_gamma(
    data: &ObservedData,
    baseline: &PiecewiseConstantHazard,
) -> Result<f64, HarnessError> {
    let events = data.truth.iter().filter(|t| t.accident_occurred).count();
    if events == 0 {
        return Err(TransferError::NoReports.into());
    }
    let exposure: f64 = data
        .truth
        .iter()
        .map(|t| baseline.cumulative(t.accident_time))
        .sum();
    if !(exposure > 0.0) {
        return Err(TransferError::ZeroExposure.into());
    }
    Ok(events as f64 / exposure)
}

fn named_ph_params(model: &HazardModel) -> Result<ParamEstimates, HarnessError> {
    let ph = model.as_piecewise_ph().ok_or_else(|| {
        HarnessError::InvalidConfig("expected a piecewise-PH accident fit".into())
    })?;
    let mut params: ParamEstimates = ph
        .baseline
        .rates()
        .iter()
        .enumerate()
        .map(|(k, r)| (format!("alpha_{}", k + 1), *r))
        .collect();
    if let CovariateEffect::LogLinear(beta) = &ph.effect {
        params.extend(
            beta.iter()
                .enumerate()
                .map(|(j, b)| (format!("beta_{}", j + 1), *b)),
        );
    }
    Ok(params)
}

fn toy_trial(
    config: &ToyConfig,
    trial: usize,
) -> Vec<(Method, Result<ParamEstimates, HarnessError>)> {
    let run = || -> Result<_, HarnessError> {
        let trial_seed = RngStream::new(config.seed).substream(trial as u64);
        let baseline = config.baseline()?;
        let source_config = SimulationConfig {
            n: config.n,
            accident: HazardModel::piecewise_ph(
                baseline.clone(),
                CovariateEffect::log_linear(config.beta.clone())?,
            ),
            delay: HazardModel::constant(config.lambda_star)?,
            censor: HazardModel::constant(config.censor_rate)?,
            tau: None,
            covariate_dim: config.covariate_dim,
            covariate_law: CovariateLaw::Uniform,
            seed: trial_seed.substream(0),
        };
        let source = observe(&simulate_complete(&source_config)?, None, "source")?;
        let target_config = SimulationConfig {
            accident: HazardModel::piecewise_ph(
                baseline.clone(),
                CovariateEffect::scalar(config.gamma)?,
            ),
            tau: Some(config.tau),
            seed: trial_seed.substream(1),
            ..source_config
        };
        let target = observe(
            &simulate_complete(&target_config)?,
            Some(config.tau),
            "target",
        )?;
        Ok((trial_seed, baseline, source, target))
    };
    let prepared = match run() {
        Ok(p) => p,
        Err(e) => {
            let msg = e.to_string();
            return config
                .methods
                .iter()
                .map(|m| (*m, Err(HarnessError::InvalidConfig(msg.clone()))))
                .collect();
        }
    };
    let (trial_seed, true_baseline, source, target) = prepared;

    config
        .methods
        .iter()
        .map(|method| {
            let result = (|| -> Result<ParamEstimates, HarnessError> {
                match method {
                    Method::Complete => {
                        let rows = accident_rows_from_truth(&source);
                        let fitted = m_step_accident(
                            &rows,
                            &config.families().accident,
                            None,
                            &OptimOptions::default(),
                        )?;
                        let mut params = named_ph_params(&fitted)?;
                        let stage2_baseline = if config.stage2_truth {
                            true_baseline.clone()
                        } else {
                            fitted
                                .as_piecewise_ph()
                                .expect("piecewise fit")
                                .baseline
                                .clone()
                        };
                        params.push(("gamma".into(), complete_gamma(&target, &stage2_baseline)?));
                        Ok(params)
                    }
                    Method::Naive => {
                        let pair = naive_init(
                            &source.dataset,
                            &config.families(),
                            &OptimOptions::default(),
                        )?;
                        let mut params = named_ph_params(&pair.accident)?;
                        let stage2_baseline = if config.stage2_truth {
                            true_baseline.clone()
                        } else {
                            pair.accident
                                .as_piecewise_ph()
                                .expect("piecewise fit")
                                .baseline
                                .clone()
                        };
                        params.push((
                            "gamma".into(),
                            gamma_check0(&target.dataset, &stage2_baseline)?,
                        ));
                        Ok(params)
                    }
                    Method::Ours => {
                        let mut em_config = EmConfig::new(trial_seed.substream(2));
                        em_config.iterations = config.em.iterations;
                        em_config.replicates = config.em.replicates;
                        let result = run_em(&source.dataset, &config.families(), &em_config)?;
                        let mut params = named_ph_params(&result.fitted.accident)?;
                        let fitted_delay = result
                            .fitted
                            .delay
                            .as_constant()
                            .expect("constant delay family")
                            .rate();
                        params.push(("lambda".into(), fitted_delay));
                        let (stage2_baseline, stage2_delay) = if config.stage2_truth {
                            (
                                true_baseline.clone(),
                                HazardModel::constant(config.lambda_star)?,
                            )
                        } else {
                            (
                                result
                                    .fitted
                                    .accident
                                    .as_piecewise_ph()
                                    .expect("piecewise fit")
                                    .baseline
                                    .clone(),
                                result.fitted.delay.clone(),
                            )
                        };
                        params.push((
                            "gamma".into(),
                            gamma_check(&target.dataset, &stage2_baseline, &stage2_delay)?,
                        ));
                        Ok(params)
                    }
                }
            })();
            (*method, result)
        })
        .collect()
}

fn with_pool<T: Send>(jobs: usize, run: impl FnOnce() -> T + Send) -> T {
    if jobs == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .expect("thread pool")
            .install(run)
    }
}

/// Run the toy benchmark: per trial, simulate a source and a target domain,
/// fit with every configured method, and aggregate mean and population
/// standard deviation per parameter. Failed trials are excluded and counted.
pub fn run_toy(config: &ToyConfig) -> Result<ToySummary, HarnessError> {
    if config.trials == 0 || config.methods.is_empty() {
        return Err(HarnessError::InvalidConfig(
            "need at least one trial and one method".into(),
        ));
    }
    let outcomes: Vec<_> = with_pool(config.jobs, || {
        (0..config.trials)
            .into_par_iter()
            .map(|t| toy_trial(config, t))
            .collect()
    });

    let mut failures = Vec::new();
    let mut rows = Vec::new();
    for method in &config.methods {
        let mut per_param: Vec<(String, Vec<f64>)> = Vec::new();
        let mut successes = 0usize;
        for (trial, outcome) in outcomes.iter().enumerate() {
            let (_, result) = outcome
                .iter()
                .find(|(m, _)| m == method)
                .expect("method present in outcome");
            match result {
                Ok(params) => {
                    successes += 1;
                    for (name, value) in params {
                        match per_param.iter_mut().find(|(n, _)| n == name) {
                            Some((_, values)) => values.push(*value),
                            None => per_param.push((name.clone(), vec![*value])),
                        }
                    }
                }
                Err(e) => failures.push((trial, *method, e.to_string())),
            }
        }
        if successes == 0 {
            return Err(HarnessError::AllTrialsFailed(config.trials));
        }
        for (param, values) in per_param {
            rows.push(SummaryRow {
                method: *method,
                lambda_star: config.lambda_star,
                param,
                mean: stats::mean(&values),
                std: stats::population_std(&values),
                trials: values.len(),
            });
        }
    }
    Ok(ToySummary { rows, failures })
}

/// Render the toy summary as a text table. Cells whose mean deviates from
/// the true value by more than 5% relative error are marked `*`, more than
/// 25% `**`, mirroring the benchmark's shading convention.
pub fn render_toy_table(summary: &ToySummary, config: &ToyConfig) -> String {
    let mut params: Vec<String> = Vec::new();
    for row in &summary.rows {
        if !params.contains(&row.param) {
            params.push(row.param.clone());
        }
    }
    let mut out = String::new();
    out.push_str(&format!(
        "method      lambda* {}\n",
        params
            .iter()
            .map(|p| format!("{p:>22}"))
            .collect::<Vec<_>>()
            .join(" ")
    ));
    for method in &config.methods {
        let mut line = format!("{:<11} {:>7}", method.to_string(), config.lambda_star);
        for param in &params {
            let cell = summary
                .rows
                .iter()
                .find(|r| r.method == *method && &r.param == param);
            match cell {
                Some(row) => {
                    let mark = match config.truth(param) {
                        Some(truth) if truth != 0.0 => {
                            let rel = ((row.mean - truth) / truth).abs();
                            if rel > 0.25 {
                                "**"
                            } else if rel > 0.05 {
                                "*"
                            } else {
                                ""
                            }
                        }
                        _ => "",
                    };
                    line.push_str(&format!(
                        " {:>20}{:<2}",
                        format!("{:.4} ± {:.4}", row.mean, row.std),
                        mark
                    ));
                }
                None => line.push_str(&format!(" {:>20}{:<2}", "--", "")),
            }
        }
        out.push_str(&line);
        out.push('\n');
    }
    out.push_str("marks: * relative error of the mean > 5%, ** > 25%\n");
    out.push_str(&format!(
        "std is the population standard deviation across trials; {} trial(s) failed\n",
        summary.failures.len()
    ));
    out
}

/// Write the summary as CSV `method,lambda_star,param,mean,std,trials`.
pub fn write_toy_csv<W: std::io::Write>(
    summary: &ToySummary,
    mut writer: W,
) -> std::io::Result<()> {
    writeln!(
        writer,
        "# std = population standard deviation across successful trials"
    )?;
    writeln!(writer, "method,lambda_star,param,mean,std,trials")?;
    for row in &summary.rows {
        writeln!(
            writer,
            "{},{},{},{},{},{}",
            row.method, row.lambda_star, row.param, row.mean, row.std, row.trials
        )?;
    }
    Ok(())
}

/// Which covariate quartile forms the target cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetRule {
    /// Lowest 25% of the split covariate.
    Young,
    /// Highest 25% of the split covariate.
    Senior,
}

impl fmt::Display for TargetRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetRule::Young => write!(f, "Young"),
            TargetRule::Senior => write!(f, "Senior"),
        }
    }
}

fn default_target_rule() -> TargetRule {
    TargetRule::Young
}
fn default_synth_n() -> usize {
    4000
}
// Accident rates for the synthetic record pool sit well above the toy
// truth so each half-split carries enough events for a stable rate ratio,
// comparable to the external datasets' event counts.
fn default_synth_alpha() -> Vec<f64> {
    vec![0.4, 0.8, 1.2]
}
fn default_orig_censor() -> f64 {
    0.25
}
fn default_label() -> String {
    "synthetic".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskConfig {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_lambda")]
    pub delay_rate: f64,
    #[serde(default = "default_censor")]
    pub censor_rate: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub em: EmSettings,
    #[serde(default = "default_target_rule")]
    pub target: TargetRule,
    /// Covariate column used for the quartile split.
    #[serde(default)]
    pub covariate_index: usize,
    #[serde(default = "default_knots")]
    pub knots: Vec<f64>,
    #[serde(default = "default_label")]
    pub dataset_label: String,
    /// Size of the generated record pool when no CSV is supplied.
    #[serde(default = "default_synth_n")]
    pub synthetic_n: usize,
    #[serde(default = "default_synth_alpha")]
    pub synthetic_alpha: Vec<f64>,
    #[serde(default = "default_beta")]
    pub synthetic_beta: Vec<f64>,
    /// Censoring already present in the synthetic records before the
    /// benchmark layers its own censoring on top.
    #[serde(default = "default_orig_censor")]
    pub synthetic_censor_rate: f64,
    #[serde(default)]
    pub jobs: usize,
}

impl Default for RiskConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

/// Generate a fully synthetic accident-record pool shaped like the external
/// datasets: accident times from a piecewise proportional-hazards model over
/// a uniform covariate, lightly right-censored.
pub fn synthetic_accident_records(
    config: &RiskConfig,
    seed: RngStream,
) -> Result<Vec<AccidentRecord>, HarnessError> {
    let baseline =
        PiecewiseConstantHazard::new(config.knots.clone(), config.synthetic_alpha.clone())?;
    let accident = HazardModel::piecewise_ph(
        baseline,
        CovariateEffect::log_linear(config.synthetic_beta.clone())?,
    );
    let censor = HazardModel::constant(config.synthetic_censor_rate)?;
    let d = config.synthetic_beta.len();
    let mut records = Vec::with_capacity(config.synthetic_n);
    for i in 0..config.synthetic_n {
        let mut rng = seed.substream(i as u64).rng();
        let x: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let t = accident.sample(&x, &mut rng)?;
        let c = censor.sample(&x, &mut rng)?;
        records.push(AccidentRecord {
            covariates: x,
            time: t.min(c),
            event: t <= c,
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskRow {
    pub dataset: String,
    pub target: String,
    pub method: Method,
    pub metric_mean: f64,
    pub metric_std: f64,
    pub trials: usize,
    /// Per-trial metric values behind the aggregate, trial order.
    pub metrics: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskReport {
    pub rows: Vec<RiskRow>,
    pub failures: Vec<(usize, Method, String)>,
    /// Interpretation notes carried into every serialized report.
    pub metadata: Vec<String>,
}

fn risk_metadata() -> Vec<String> {
    vec![
        "metric = (total premiums - total benefits) / total premiums; \
         0 means premiums exactly cover benefits, negative means underpricing"
            .into(),
        "premium_i integrates the estimated accident hazard over the exposure \
         window [0, min(accident-or-censor time)]; the window ends at \
         min(accident, censoring), not at the report"
            .into(),
        "benefit_i = 1 when the accident occurs within the exposure window".into(),
    ]
}

struct StageTwoFit {
    baseline: PiecewiseConstantHazard,
    gamma: f64,
}

fn risk_trial(
    config: &RiskConfig,
    source_records: &[AccidentRecord],
    target_records: &[AccidentRecord],
    trial: usize,
) -> Vec<(Method, Result<f64, HarnessError>)> {
    let trial_seed = RngStream::new(config.seed).substream(trial as u64);
    let families = Families {
        accident: AccidentFamily::PiecewisePh {
            knots: config.knots.clone(),
            effect: EffectSpec::LogLinear {
                dim: source_records[0].covariates.len(),
            },
        },
        delay: DelayFamily::Constant,
    };

    let prepared = (|| -> Result<_, HarnessError> {
        let source = semi_synthetic(
            source_records,
            config.delay_rate,
            config.censor_rate,
            None,
            trial_seed.substream(0),
            "source",
        )?;
        let mut indices: Vec<usize> = (0..target_records.len()).collect();
        stats::shuffle(&mut indices, &mut trial_seed.substream(1).rng());
        let half = indices.len() / 2;
        let fit_records: Vec<AccidentRecord> = indices[..half]
            .iter()
            .map(|i| target_records[*i].clone())
            .collect();
        let test_records: Vec<AccidentRecord> = indices[half..]
            .iter()
            .map(|i| target_records[*i].clone())
            .collect();
        let fit_half = semi_synthetic(
            &fit_records,
            config.delay_rate,
            config.censor_rate,
            Some(config.tau),
            trial_seed.substream(2),
            "target-fit",
        )?;
        let test_half = semi_synthetic(
            &test_records,
            config.delay_rate,
            config.censor_rate,
            None,
            trial_seed.substream(3),
            "target-test",
        )?;
        Ok((source, fit_half, test_half))
    })();
    let (source, fit_half, test_half) = match prepared {
        Ok(p) => p,
        Err(e) => {
            let msg = e.to_string();
            return config
                .methods
                .iter()
                .map(|m| (*m, Err(HarnessError::InvalidConfig(msg.clone()))))
                .collect();
        }
    };

    config
        .methods
        .iter()
        .map(|method| {
            let result = (|| -> Result<f64, HarnessError> {
                let fit = match method {
                    Method::Complete => {
                        let rows = accident_rows_from_truth(&source);
                        let fitted = m_step_accident(
                            &rows,
                            &families.accident,
                            None,
                            &OptimOptions::default(),
                        )?;
                        let baseline = fitted
                            .as_piecewise_ph()
                            .expect("piecewise fit")
                            .baseline
                            .clone();
                        let gamma = complete_gamma(&fit_half, &baseline)?;
                        StageTwoFit { baseline, gamma }
                    }
                    Method::Naive => {
                        let pair =
                            naive_init(&source.dataset, &families, &OptimOptions::default())?;
                        let baseline = pair
                            .accident
                            .as_piecewise_ph()
                            .expect("piecewise fit")
                            .baseline
                            .clone();
                        let gamma = gamma_check0(&fit_half.dataset, &baseline)?;
                        StageTwoFit { baseline, gamma }
                    }
                    Method::Ours => {
                        let mut em_config = EmConfig::new(trial_seed.substream(4));
                        em_config.iterations = config.em.iterations;
                        em_config.replicates = config.em.replicates;
                        let result = run_em(&source.dataset, &families, &em_config)?;
                        let baseline = result
                            .fitted
                            .accident
                            .as_piecewise_ph()
                            .expect("piecewise fit")
                            .baseline
                            .clone();
                        let gamma =
                            gamma_check(&fit_half.dataset, &baseline, &result.fitted.delay)?;
                        StageTwoFit { baseline, gamma }
                    }
                };
                // Premiums integrate the fitted target hazard over each test
                // individual's exposure window; benefits count accidents
                // inside that window.
                let premiums: f64 = fit_half_premiums(&fit, &test_half);
                let benefits = test_half
                    .truth
                    .iter()
                    .filter(|t| t.accident_occurred)
                    .count() as f64;
                if !(premiums > 0.0) {
                    return Err(HarnessError::InvalidConfig(
                        "zero total premiums on the test half".into(),
                    ));
                }
                Ok(premium_surplus(premiums, benefits))
            })();
            (*method, result)
        })
        .collect()
}

fn fit_half_premiums(fit: &StageTwoFit, test_half: &ObservedData) -> f64 {
    test_half
        .truth
        .iter()
        .map(|t| fit.gamma * fit.baseline.cumulative(t.accident_time))
        .sum()
}

/// Premium surplus ratio `(premiums - benefits) / premiums`: 0 when premiums
/// exactly cover benefits, negative when the model underprices, +1 when no
/// benefit was ever paid.
pub fn premium_surplus(premiums: f64, benefits: f64) -> f64 {
    (premiums - benefits) / premiums
}

/// Run the risk-metric benchmark over an accident-record pool: quartile
/// split into source and target by covariate, then per trial a shuffled
/// 50/50 target split, stage-two fitting on the administratively censored
/// half, and premium-vs-benefit evaluation on the other half.
pub fn run_risk(
    config: &RiskConfig,
    records: &[AccidentRecord],
) -> Result<RiskReport, HarnessError> {
    if config.trials == 0 || config.methods.is_empty() {
        return Err(HarnessError::InvalidConfig(
            "need at least one trial and one method".into(),
        ));
    }
    if records.len() < 8 {
        return Err(HarnessError::InvalidConfig(
            "need at least 8 accident records".into(),
        ));
    }
    let idx = config.covariate_index;
    if records.iter().any(|r| r.covariates.len() <= idx) {
        return Err(HarnessError::InvalidConfig(format!(
            "covariate index {idx} out of range"
        )));
    }

    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|a, b| {
        records[*a].covariates[idx]
            .total_cmp(&records[*b].covariates[idx])
            .then(a.cmp(b))
    });
    let quartile = records.len() / 4;
    let (target_idx, source_idx): (Vec<usize>, Vec<usize>) = match config.target {
        TargetRule::Young => (
            order[..quartile].to_vec(),
            order[quartile..].to_vec(),
        ),
        TargetRule::Senior => (
            order[records.len() - quartile..].to_vec(),
            order[..records.len() - quartile].to_vec(),
        ),
    };
    let target_records: Vec<AccidentRecord> =
        target_idx.iter().map(|i| records[*i].clone()).collect();
    let source_records: Vec<AccidentRecord> =
        source_idx.iter().map(|i| records[*i].clone()).collect();

    let outcomes: Vec<_> = with_pool(config.jobs, || {
        (0..config.trials)
            .into_par_iter()
            .map(|t| risk_trial(config, &source_records, &target_records, t))
            .collect()
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for method in &config.methods {
        let mut metrics = Vec::new();
        for (trial, outcome) in outcomes.iter().enumerate() {
            let (_, result) = outcome
                .iter()
                .find(|(m, _)| m == method)
                .expect("method present");
            match result {
                Ok(metric) if metric.is_finite() => metrics.push(*metric),
                Ok(metric) => {
                    failures.push((trial, *method, format!("non-finite metric {metric}")))
                }
                Err(e) => failures.push((trial, *method, e.to_string())),
            }
        }
        if metrics.is_empty() {
            return Err(HarnessError::AllTrialsFailed(config.trials));
        }
        rows.push(RiskRow {
            dataset: config.dataset_label.clone(),
            target: config.target.to_string(),
            method: *method,
            metric_mean: stats::mean(&metrics),
            metric_std: stats::population_std(&metrics),
            trials: metrics.len(),
            metrics,
        });
    }
    Ok(RiskReport {
        rows,
        failures,
        metadata: risk_metadata(),
    })
}

/// Write the risk report as CSV `dataset,target,method,metric_mean,metric_std`.
pub fn write_risk_csv<W: std::io::Write>(report: &RiskReport, mut writer: W) -> std::io::Result<()> {
    for note in &report.metadata {
        writeln!(writer, "# {note}")?;
    }
    writeln!(writer, "dataset,target,method,metric_mean,metric_std,trials")?;
    for row in &report.rows {
        writeln!(
            writer,
            "{},{},{},{},{},{}",
            row.dataset, row.target, row.method, row.metric_mean, row.metric_std, row.trials
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Validation checks, shared between `validate` and the acceptance suite.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidateLevel {
    Quick,
    Full,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub level: ValidateLevel,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

fn random_pair<R: Rng>(rng: &mut R, piecewise: bool) -> ModelPair {
    let log_uniform = |rng: &mut R, lo: f64, hi: f64| -> f64 {
        (lo.ln() + (hi.ln() - lo.ln()) * rng.gen::<f64>()).exp()
    };
    let delay = HazardModel::constant(log_uniform(rng, 0.05, 8.0)).unwrap();
    if !piecewise {
        let accident = HazardModel::constant(log_uniform(rng, 0.05, 8.0)).unwrap();
        return ModelPair::new(accident, delay);
    }
    let segments = 1 + rng.gen_range(0..3usize);
    let mut knots = vec![0.0];
    let mut last = 0.0;
    for _ in 1..segments {
        last += 0.2 + 1.2 * rng.gen::<f64>();
        knots.push(last);
    }
    let rates: Vec<f64> = (0..segments).map(|_| log_uniform(rng, 0.05, 4.0)).collect();
    let baseline = PiecewiseConstantHazard::new(knots, rates).unwrap();
    let effect = if rng.gen::<bool>() {
        CovariateEffect::scalar(log_uniform(rng, 0.3, 3.0)).unwrap()
    } else {
        CovariateEffect::log_linear(vec![rng.gen::<f64>() * 2.0 - 1.0]).unwrap()
    };
    ModelPair::new(HazardModel::piecewise_ph(baseline, effect), delay)
}

fn covariates_for(pair: &ModelPair, rng: &mut impl Rng) -> Vec<f64> {
    match &pair.accident {
        HazardModel::PiecewisePh(ph) => match &ph.effect {
            CovariateEffect::LogLinear(beta) => {
                (0..beta.len()).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()
            }
            CovariateEffect::Scalar(_) => vec![rng.gen::<f64>() * 2.0 - 1.0],
        },
        HazardModel::Constant(_) => Vec::new(),
    }
}

/// Closed-form `S_circ` against adaptive quadrature on random draws,
/// including the degenerate equal-rates band. `fault_scale` perturbs the
/// closed form and exists so tests can prove the check has teeth.
pub fn check_s_circ_closed_form(seed: u64, draws: usize, fault_scale: f64) -> CheckResult {
    let mut rng = RngStream::new(seed).substream(101).rng();
    let spec = QuadratureSpec::strict();
    let mut worst = 0.0f64;
    let mut failures = 0usize;
    for i in 0..draws {
        let mut pair = random_pair(&mut rng, i % 2 == 0);
        // Every fifth draw lands in the degenerate band where the delay rate
        // nearly equals an accident rate.
        if i % 5 == 0 {
            let accident_rate = match &pair.accident {
                HazardModel::Constant(c) => c.rate(),
                HazardModel::PiecewisePh(ph) => ph.baseline.rates()[0],
            };
            let offsets = [0.0, 1e-13, 1e-9, 1e-7, 1e-5];
            let rate = accident_rate * (1.0 + offsets[(i / 5) % offsets.len()]);
            pair = ModelPair::new(pair.accident.clone(), HazardModel::constant(rate).unwrap());
        }
        let x = covariates_for(&pair, &mut rng);
        let y = 2.5 * rng.gen::<f64>();
        let closed = s_circ(&pair, y, &x).unwrap() * (1.0 + fault_scale);
        let quad = s_circ_quadrature(&pair, y, &x, &spec).unwrap();
        let rel = ((closed - quad) / quad).abs();
        worst = worst.max(rel);
        if rel > 1e-8 {
            failures += 1;
        }
    }
    CheckResult::new(
        "s_circ_closed_form_vs_quadrature",
        failures == 0,
        format!("{draws} draws, worst relative error {worst:.3e}, {failures} beyond 1e-8"),
    )
}

/// Conditional CDF of the accepted accident time under the posterior, on a
/// dense grid with linear interpolation between nodes.
pub fn accepted_z_cdf(
    pair: &ModelPair,
    obs: &Observation,
    grid: usize,
) -> Result<impl Fn(f64) -> f64, HarnessError> {
    let q = posterior_q(pair, obs)?;
    let y = obs.time;
    let spec = QuadratureSpec::default();
    let mut nodes = Vec::with_capacity(grid + 1);
    let mut cumulative = vec![0.0f64];
    for i in 0..=grid {
        nodes.push(y * i as f64 / grid as f64);
    }
    for i in 0..grid {
        let cell = integrate_with_breakpoints(
            |z| q.density(z).unwrap_or(f64::NAN),
            nodes[i],
            nodes[i + 1],
            pair.accident.quadrature_breakpoints(),
            &spec,
        )?;
        cumulative.push(cumulative[i] + cell);
    }
    let total = *cumulative.last().unwrap();
    for c in cumulative.iter_mut() {
        *c /= total;
    }
    Ok(move |z: f64| -> f64 {
        if z <= 0.0 {
            return 0.0;
        }
        if z >= y {
            return 1.0;
        }
        let pos = z / y * grid as f64;
        let i = (pos.floor() as usize).min(grid - 1);
        let frac = pos - i as f64;
        cumulative[i] + frac * (cumulative[i + 1] - cumulative[i])
    })
}

/// Rejection-sampler correctness: the no-accident frequency matches the
/// posterior atom (binomial test) and accepted accident times pass a KS test
/// against the quadrature posterior CDF, both at the 0.1% level.
pub fn check_rejection_sampler(seed: u64, configs: usize, draws: usize) -> CheckResult {
    let mut rng = RngStream::new(seed).substream(202).rng();
    let mut detail = String::new();
    let mut passed = true;
    for c in 0..configs {
        let pair = random_pair(&mut rng, c % 2 == 1);
        let x = covariates_for(&pair, &mut rng);
        let y = 0.3 + 1.2 * rng.gen::<f64>();
        let obs = Observation::censored(x, y).unwrap();
        let q = posterior_q(&pair, &obs).unwrap();
        let atom = q.atom_mass();

        let mut sampler_rng = RngStream::new(seed)
            .substream(300 + c as u64)
            .rng();
        let mut atoms = 0usize;
        let mut accepted = Vec::new();
        for _ in 0..draws {
            let (z, w) = reject_sample(&pair, &obs, &mut sampler_rng, 1_000_000).unwrap();
            if w {
                accepted.push(z);
            } else {
                atoms += 1;
            }
        }
        let (zscore, crit) = stats::binomial_z_test(atoms, draws, atom, 0.001);
        let binomial_ok = zscore.abs() <= crit;

        accepted.sort_by(f64::total_cmp);
        let cdf = accepted_z_cdf(&pair, &obs, 4096).unwrap();
        let d = stats::ks_statistic(&accepted, cdf);
        let ks_crit = stats::ks_critical(0.001, accepted.len());
        let ks_ok = d <= ks_crit;

        if !(binomial_ok && ks_ok) {
            passed = false;
            detail.push_str(&format!(
                "config {c}: binomial z = {zscore:.2} (crit {crit:.2}), KS = {d:.5} (crit {ks_crit:.5}); "
            ));
        }
    }
    if detail.is_empty() {
        detail = format!("{configs} configurations x {draws} draws, all within 0.1% critical values");
    }
    CheckResult::new("rejection_sampler_distribution", passed, detail)
}

fn random_mixed_dataset(rng: &mut impl Rng, n: usize, dim: usize) -> Dataset {
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let x: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let y = 0.1 + 1.4 * rng.gen::<f64>();
        if i % 2 == 0 {
            rows.push(Observation::reported(x, y, y * rng.gen::<f64>()).unwrap());
        } else {
            rows.push(Observation::censored(x, y).unwrap());
        }
    }
    Dataset::new(rows, None, "random").unwrap()
}

/// Jensen bound: the lower bound never exceeds the marginal log-likelihood,
/// and matches it when the posterior comes from the evaluated parameters.
pub fn check_jensen_bound(seed: u64, instances: usize) -> CheckResult {
    let mut rng = RngStream::new(seed).substream(404).rng();
    let spec = QuadratureSpec::default();
    let mut worst_violation = f64::MIN;
    let mut worst_equality_gap = 0.0f64;
    let mut passed = true;
    for i in 0..instances {
        let pair = random_pair(&mut rng, i % 2 == 0);
        let dim = covariates_for(&pair, &mut rng).len();
        let data = random_mixed_dataset(&mut rng, 6, dim);
        let ml = marginal_loglik(&pair, &data).unwrap();

        let eq = crate::em::lower_bound_value(&pair, &data, &pair, &spec).unwrap();
        worst_equality_gap = worst_equality_gap.max((eq - ml).abs());
        if (eq - ml).abs() > 1e-6 {
            passed = false;
        }

        let q_source = random_pair(&mut rng, i % 2 == 0);
        let q_source = match (&q_source.accident, &pair.accident) {
            // Keep covariate dimensions aligned between the two pairs.
            (HazardModel::PiecewisePh(_), HazardModel::PiecewisePh(_)) => q_source,
            _ => ModelPair::new(pair.accident.clone(), q_source.delay.clone()),
        };
        let lb = crate::em::lower_bound_value(&pair, &data, &q_source, &spec).unwrap();
        worst_violation = worst_violation.max(lb - ml);
        if lb > ml + 1e-9 {
            passed = false;
        }
    }
    CheckResult::new(
        "jensen_lower_bound",
        passed,
        format!(
            "{instances} instances; max (bound - marginal) = {worst_violation:.3e}, \
             max equality gap = {worst_equality_gap:.3e}"
        ),
    )
}

fn simulate_toy_target(
    seed: RngStream,
    n: usize,
    gamma: f64,
    lambda: f64,
    tau: f64,
) -> Result<ObservedData, HarnessError> {
    let baseline = PiecewiseConstantHazard::new(vec![0.0, 0.5, 1.0], vec![0.1, 0.2, 0.3])?;
    let config = SimulationConfig {
        n,
        accident: HazardModel::piecewise_ph(baseline, CovariateEffect::scalar(gamma)?),
        delay: HazardModel::constant(lambda)?,
        censor: HazardModel::constant(1.0)?,
        tau: Some(tau),
        covariate_dim: 1,
        covariate_law: CovariateLaw::Uniform,
        seed,
    };
    Ok(observe(&simulate_complete(&config)?, Some(tau), "target")?)
}

/// Ordering of the target-effect estimators: `gamma_check0 < gamma_hat` and
/// `gamma_check0 <= gamma_check` on simulated targets.
pub fn check_gamma_estimator_ordering(seed: u64, targets: usize) -> CheckResult {
    let baseline =
        PiecewiseConstantHazard::new(vec![0.0, 0.5, 1.0], vec![0.1, 0.2, 0.3]).unwrap();
    let mut rng = RngStream::new(seed).substream(505).rng();
    let mut passed = true;
    let mut detail = String::new();
    for t in 0..targets {
        let lambda = [2.0, 5.0, 20.0][t % 3];
        let gamma_true = 1.0 + 2.0 * rng.gen::<f64>();
        let n = 200 + (rng.gen::<f64>() * 400.0) as usize;
        let delay = HazardModel::constant(lambda).unwrap();
        let data = match simulate_toy_target(
            RngStream::new(seed).substream(600 + t as u64),
            n,
            gamma_true,
            lambda,
            0.75,
        ) {
            Ok(d) => d,
            Err(e) => {
                passed = false;
                detail.push_str(&format!("target {t}: simulation failed ({e}); "));
                continue;
            }
        };
        let c0 = gamma_check0(&data.dataset, &baseline);
        let c = gamma_check(&data.dataset, &baseline, &delay);
        let hat = gamma_hat(&data.dataset, &baseline, &delay, &GammaHatOptions::default());
        match (c0, c, hat) {
            (Ok(c0), Ok(c), Ok(hat)) => {
                if !(c0 < hat.value) || !(c0 <= c) {
                    passed = false;
                    detail.push_str(&format!(
                        "target {t}: check0 = {c0:.4}, check = {c:.4}, hat = {:.4}; ",
                        hat.value
                    ));
                }
            }
            _ => {
                passed = false;
                detail.push_str(&format!("target {t}: estimator failed; "));
            }
        }
    }
    if detail.is_empty() {
        detail = format!("{targets} simulated targets, ordering held on all");
    }
    CheckResult::new("gamma_estimator_ordering", passed, detail)
}

/// Analytic marginal-likelihood gradient against central finite differences.
pub fn check_gradient(seed: u64, fixtures: usize) -> CheckResult {
    let mut rng = RngStream::new(seed).substream(707).rng();
    let mut worst = 0.0f64;
    let mut passed = true;
    for i in 0..fixtures {
        let pair = random_pair(&mut rng, i % 2 == 0);
        let dim = covariates_for(&pair, &mut rng).len();
        let data = random_mixed_dataset(&mut rng, 5, dim);
        let analytic = marginal_loglik_gradient(&pair, &data).unwrap();
        let params = pair.parameters();
        let fd = finite_diff_gradient(
            |p| match pair.with_parameters(p) {
                Ok(candidate) => marginal_loglik(&candidate, &data).unwrap_or(f64::NAN),
                Err(_) => f64::NAN,
            },
            &params,
            1e-6,
        )
        .unwrap();
        for (a, f) in analytic.iter().zip(&fd) {
            let rel = (a - f).abs() / f.abs().max(1e-6);
            worst = worst.max(rel);
            if rel > 1e-5 {
                passed = false;
            }
        }
    }
    CheckResult::new(
        "analytic_gradient_vs_finite_differences",
        passed,
        format!("{fixtures} fixtures, worst relative error {worst:.3e}"),
    )
}

/// Simulator law checks: the administrative atom frequency matches
/// `S_circ(tau) S_c(tau)` within 3 binomial standard errors, and binned
/// `(z, y - z)` on reported rows passes a chi-square test against
/// `f_circ * S_c` at the 0.1% level.
pub fn check_simulator_laws(seed: u64, draws: usize) -> CheckResult {
    let lambda1 = 1.0;
    let lambda2 = 5.0;
    let censor_rate = 1.0;
    let tau = 0.75;
    let pair = ModelPair::new(
        HazardModel::constant(lambda1).unwrap(),
        HazardModel::constant(lambda2).unwrap(),
    );
    let censor = HazardModel::constant(censor_rate).unwrap();
    let config = SimulationConfig {
        n: draws,
        accident: pair.accident.clone(),
        delay: pair.delay.clone(),
        censor: censor.clone(),
        tau: Some(tau),
        covariate_dim: 0,
        covariate_law: CovariateLaw::Uniform,
        seed: RngStream::new(seed).substream(808),
    };
    let records = simulate_complete(&config).unwrap();
    let data = observe(&records, Some(tau), "laws").unwrap();

    let atom_hits = data
        .dataset
        .observations()
        .iter()
        .filter(|o| !o.reported && o.time == tau)
        .count();
    let p_atom = admin_atom_probability(&pair, &censor, tau, &[]).unwrap();
    let se = (p_atom * (1.0 - p_atom) / draws as f64).sqrt();
    let atom_freq = atom_hits as f64 / draws as f64;
    let atom_ok = (atom_freq - p_atom).abs() <= 3.0 * se;

    // Reported rows: bin (z, u = y - z). Cell probabilities separate into
    // exponential factors because all three hazards are constant.
    let z_edges = [0.0, 0.1, 0.25, 0.45, 0.75];
    let u_edges = [0.0, 0.05, 0.12, 0.25, 0.75];
    let mass = |lo: f64, hi: f64, rate: f64| -> f64 {
        (-(rate + censor_rate) * lo).exp() - (-(rate + censor_rate) * hi).exp()
    };
    let factor_z = lambda1 / (lambda1 + censor_rate);
    let factor_u = lambda2 / (lambda2 + censor_rate);
    let mut cell_probs = Vec::new();
    for zi in 0..z_edges.len() - 1 {
        for ui in 0..u_edges.len() - 1 {
            // Constrain to y = z + u <= tau by rejecting overlapping cells;
            // choose edges so every cell lies inside the admissible triangle.
            let p = factor_z * mass(z_edges[zi], z_edges[zi + 1], lambda1)
                * factor_u
                * mass(u_edges[ui], u_edges[ui + 1], lambda2);
            cell_probs.push(((zi, ui), p));
        }
    }
    let mut observed = vec![0.0f64; cell_probs.len() + 1];
    let mut reported_total = 0usize;
    for obs in data.dataset.observations().iter().filter(|o| o.reported) {
        reported_total += 1;
        let z = obs.accident_time.unwrap();
        let u = obs.time - z;
        let zi = z_edges[1..].iter().position(|e| z < *e);
        let ui = u_edges[1..].iter().position(|e| u < *e);
        match (zi, ui) {
            (Some(zi), Some(ui)) if z + u <= tau => {
                let flat = zi * (u_edges.len() - 1) + ui;
                // Cells crossing the diagonal y > tau are excluded from the
                // expected probabilities, so only keep fully interior cells.
                if z_edges[zi + 1] + u_edges[ui + 1] <= tau {
                    observed[flat] += 1.0;
                } else {
                    observed[cell_probs.len()] += 1.0;
                }
            }
            _ => observed[cell_probs.len()] += 1.0,
        }
    }
    let p_report: f64 = {
        // P(v = 1) under administrative censoring at tau.
        let integrand = |z: f64| {
            pair.accident.density(z, &[]).unwrap()
                * integrate_with_breakpoints(
                    |u| {
                        pair.delay.density(u, &[]).unwrap()
                            * censor.survival(z + u, &[]).unwrap()
                    },
                    0.0,
                    tau - z,
                    &[],
                    &QuadratureSpec::default(),
                )
                .unwrap()
        };
        integrate_with_breakpoints(integrand, 0.0, tau, &[], &QuadratureSpec::default()).unwrap()
    };
    let mut expected: Vec<f64> = Vec::with_capacity(cell_probs.len() + 1);
    let mut interior_mass = 0.0;
    for (cell, p) in &cell_probs {
        let (zi, ui) = *cell;
        let keep = z_edges[zi + 1] + u_edges[ui + 1] <= tau;
        let p_cond = if keep { p / p_report } else { 0.0 };
        interior_mass += p_cond;
        expected.push(p_cond * reported_total as f64);
    }
    expected.push((1.0 - interior_mass) * reported_total as f64);
    let kept: Vec<(f64, f64)> = observed
        .iter()
        .zip(&expected)
        .filter(|(_, e)| **e >= 5.0)
        .map(|(o, e)| (*o, *e))
        .collect();
    let statistic = stats::chi_square_statistic(
        &kept.iter().map(|(o, _)| *o).collect::<Vec<_>>(),
        &kept.iter().map(|(_, e)| *e).collect::<Vec<_>>(),
    );
    let crit = stats::chi_square_critical(kept.len().saturating_sub(1), 0.001);
    let chi_ok = statistic <= crit;

    CheckResult::new(
        "simulator_law_checks",
        atom_ok && chi_ok,
        format!(
            "atom freq {atom_freq:.5} vs {p_atom:.5} (3se = {:.5}); chi-square {statistic:.1} \
             vs crit {crit:.1} over {} cells",
            3.0 * se,
            kept.len()
        ),
    )
}

/// Closeness of the exact maximizer to the delay-weighted closed form in the
/// fast-reporting regime, with the error diagnostic bounding the observed
/// deviation.
pub fn check_gamma_ratio_regime(seed: u64, trials: usize) -> CheckResult {
    let baseline =
        PiecewiseConstantHazard::new(vec![0.0, 0.5, 1.0], vec![0.1, 0.2, 0.3]).unwrap();
    let delay = HazardModel::constant(50.0).unwrap();
    let mut passed = true;
    let mut covered = 0usize;
    let mut worst_ratio = 0.0f64;
    let mut detail = String::new();
    for t in 0..trials {
        let data = match simulate_toy_target(
            RngStream::new(seed).substream(900 + t as u64),
            1000,
            2.0,
            50.0,
            0.75,
        ) {
            Ok(d) => d,
            Err(e) => {
                passed = false;
                detail.push_str(&format!("trial {t}: simulation failed ({e}); "));
                continue;
            }
        };
        let check = gamma_check(&data.dataset, &baseline, &delay).unwrap();
        let hat = gamma_hat(&data.dataset, &baseline, &delay, &GammaHatOptions::default()).unwrap();
        let deviation = (hat.value / check - 1.0).abs();
        worst_ratio = worst_ratio.max(deviation);
        if deviation > 0.02 {
            passed = false;
            detail.push_str(&format!("trial {t}: |ratio - 1| = {deviation:.4}; "));
        }
        let diag = ratio_diagnostic(&data.dataset, &baseline, &delay, hat.value).unwrap();
        if diag.aggregate >= deviation {
            covered += 1;
        }
    }
    let coverage = covered as f64 / trials as f64;
    if coverage < 0.9 {
        passed = false;
        detail.push_str(&format!("diagnostic covered only {covered}/{trials} trials; "));
    }
    if detail.is_empty() {
        detail = format!(
            "{trials} trials, worst |gamma_hat/gamma_check - 1| = {worst_ratio:.4}, \
             diagnostic covered {covered}"
        );
    }
    CheckResult::new("gamma_ratio_regime", passed, detail)
}

/// EM reproducibility: identical config and seed give bit-identical fits.
pub fn check_rng_reproducibility(seed: u64) -> CheckResult {
    let baseline =
        PiecewiseConstantHazard::new(vec![0.0, 0.5, 1.0], vec![0.1, 0.2, 0.3]).unwrap();
    let config = SimulationConfig {
        n: 120,
        accident: HazardModel::piecewise_ph(
            baseline,
            CovariateEffect::log_linear(vec![1.0]).unwrap(),
        ),
        delay: HazardModel::constant(5.0).unwrap(),
        censor: HazardModel::constant(1.0).unwrap(),
        tau: None,
        covariate_dim: 1,
        covariate_law: CovariateLaw::Uniform,
        seed: RngStream::new(seed).substream(1001),
    };
    let data = observe(&simulate_complete(&config).unwrap(), None, "repro").unwrap();
    let families = Families {
        accident: AccidentFamily::PiecewisePh {
            knots: vec![0.0, 0.5, 1.0],
            effect: EffectSpec::LogLinear { dim: 1 },
        },
        delay: DelayFamily::Constant,
    };
    let mut em_config = EmConfig::new(RngStream::new(seed).substream(1002));
    em_config.iterations = 4;
    let a = run_em(&data.dataset, &families, &em_config).unwrap();
    let b = run_em(&data.dataset, &families, &em_config).unwrap();
    let identical = a
        .fitted
        .parameters()
        .iter()
        .zip(b.fitted.parameters().iter())
        .all(|(x, y)| x.to_bits() == y.to_bits());
    CheckResult::new(
        "rng_stream_reproducibility",
        identical,
        "two EM runs with the same seed produce bit-identical parameters".into(),
    )
}

/// Probability closure of the report-pattern mixture for constant hazards.
pub fn check_probability_closure(_seed: u64) -> CheckResult {
    let pair = ModelPair::new(
        HazardModel::constant(1.0).unwrap(),
        HazardModel::constant(5.0).unwrap(),
    );
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
            integrate_with_breakpoints(
                |z| f_circ(&pair, z, y, &[]).unwrap(),
                0.0,
                y,
                &[],
                &spec,
            )
            .unwrap()
                * censor.survival(y, &[]).unwrap()
        },
        0.0,
        horizon,
        &[],
        &spec,
    )
    .unwrap();
    let total = censored_mass + reported_mass;
    CheckResult::new(
        "report_pattern_probability_closure",
        (total - 1.0).abs() < 1e-6,
        format!("total probability mass {total:.9}"),
    )
}

/// Run the invariant suite. `Quick` keeps every check under a minute
/// combined; `Full` adds the complete benchmark reproductions.
pub fn validate(level: ValidateLevel, seed: u64) -> ValidationReport {
    let mut checks = vec![
        check_s_circ_closed_form(seed, 250, 0.0),
        check_rejection_sampler(seed, 4, 20_000),
        check_jensen_bound(seed, 12),
        check_gamma_estimator_ordering(seed, 8),
        check_gradient(seed, 5),
        check_simulator_laws(seed, 30_000),
        check_probability_closure(seed),
        check_rng_reproducibility(seed),
    ];
    if level == ValidateLevel::Full {
        checks.push(check_toy_reproduction(seed, 50.0, 100));
        checks.push(check_toy_reproduction(seed, 5.0, 100));
        checks.push(check_gamma_ratio_regime(seed, 20));
    }
    let passed = checks.iter().all(|c| c.passed);
    ValidationReport {
        level,
        checks,
        passed,
    }
}

/// Empirical consistency trends: median parameter error strictly decreasing
/// in the sample size, for stage one (joint EM fit) and stage two (transfer
/// with true stage-one inputs).
pub fn check_consistency_trends(seed: u64, seeds_per_size: usize) -> CheckResult {
    let truth = [0.1, 0.2, 0.3, 1.0, 5.0];
    let baseline =
        PiecewiseConstantHazard::new(vec![0.0, 0.5, 1.0], vec![0.1, 0.2, 0.3]).unwrap();
    let families = Families {
        accident: AccidentFamily::PiecewisePh {
            knots: vec![0.0, 0.5, 1.0],
            effect: EffectSpec::LogLinear { dim: 1 },
        },
        delay: DelayFamily::Constant,
    };

    let stage_one_error = |n: usize, rep: u64| -> Result<f64, HarnessError> {
        let stream = RngStream::new(seed).substream(3000 + rep * 31 + n as u64);
        let config = SimulationConfig {
            n,
            accident: HazardModel::piecewise_ph(
                baseline.clone(),
                CovariateEffect::log_linear(vec![1.0])?,
            ),
            delay: HazardModel::constant(5.0)?,
            censor: HazardModel::constant(1.0)?,
            tau: None,
            covariate_dim: 1,
            covariate_law: CovariateLaw::Uniform,
            seed: stream.substream(0),
        };
        let data = observe(&simulate_complete(&config)?, None, "source")?;
        let mut em = EmConfig::new(stream.substream(1));
        em.iterations = 30;
        em.replicates = 10;
        let fitted = run_em(&data.dataset, &families, &em)?.fitted.parameters();
        Ok(fitted
            .iter()
            .zip(truth)
            .map(|(est, tru)| ((est - tru) / tru).powi(2))
            .sum::<f64>()
            .sqrt())
    };
    let stage_one_sizes = [250usize, 1000, 4000];
    let stage_one_medians: Vec<f64> = stage_one_sizes
        .iter()
        .map(|n| {
            let errors: Vec<f64> = with_pool(0, || {
                (0..seeds_per_size as u64)
                    .into_par_iter()
                    .map(|rep| stage_one_error(*n, rep).unwrap_or(f64::INFINITY))
                    .collect()
            });
            stats::median(&errors)
        })
        .collect();

    let stage_two_error = |n: usize, rep: u64| -> Result<f64, HarnessError> {
        let lambda = 10.0;
        let data = simulate_toy_target(
            RngStream::new(seed).substream(4000 + rep * 37 + n as u64),
            n,
            2.0,
            lambda,
            0.75,
        )?;
        let delay = HazardModel::constant(lambda)?;
        Ok((gamma_check(&data.dataset, &baseline, &delay)? - 2.0).abs())
    };
    let stage_two_sizes = [500usize, 2000, 8000];
    let stage_two_medians: Vec<f64> = stage_two_sizes
        .iter()
        .map(|n| {
            let errors: Vec<f64> = (0..seeds_per_size as u64)
                .map(|rep| stage_two_error(*n, rep).unwrap_or(f64::INFINITY))
                .collect();
            stats::median(&errors)
        })
        .collect();

    let stage_one_ok =
        stage_one_medians[0] > stage_one_medians[1] && stage_one_medians[1] > stage_one_medians[2];
    let stage_two_ok =
        stage_two_medians[0] > stage_two_medians[1] && stage_two_medians[1] > stage_two_medians[2];
    CheckResult::new(
        "consistency_trends",
        stage_one_ok && stage_two_ok,
        format!(
            "stage one medians over n {stage_one_sizes:?}: {stage_one_medians:.4?}; \
             stage two medians over n {stage_two_sizes:?}: {stage_two_medians:.4?}"
        ),
    )
}

/// Risk-metric bands on fully synthetic accident records: the delay-adjusted
/// pipeline prices near balance while the naive one underprices.
pub fn check_risk_metric(seed: u64, trials: usize) -> CheckResult {
    let config = RiskConfig {
        trials,
        seed,
        ..RiskConfig::default()
    };
    let records = match synthetic_accident_records(&config, RngStream::new(seed).substream(5000)) {
        Ok(r) => r,
        Err(e) => {
            return CheckResult::new("risk_metric_bands", false, format!("record generation failed: {e}"))
        }
    };
    let report = match run_risk(&config, &records) {
        Ok(r) => r,
        Err(e) => {
            return CheckResult::new("risk_metric_bands", false, format!("benchmark failed: {e}"))
        }
    };
    let metric = |m: Method| {
        report
            .rows
            .iter()
            .find(|r| r.method == m)
            .map(|r| r.metric_mean)
    };
    let ours = metric(Method::Ours);
    let naive = metric(Method::Naive);
    let complete = metric(Method::Complete);
    let passed = matches!(ours, Some(v) if v.abs() <= 0.10)
        && matches!(naive, Some(v) if v <= -0.20);
    CheckResult::new(
        "risk_metric_bands",
        passed,
        format!(
            "{trials} trials: Ours mean {ours:?} (need |.| <= 0.10), Naive mean {naive:?} \
             (need <= -0.20), Complete mean {complete:?}; {} failed trial(s)",
            report.failures.len()
        ),
    )
}

/// Toy-benchmark reproduction bands for the mean estimates.
pub fn check_toy_reproduction(seed: u64, lambda_star: f64, trials: usize) -> CheckResult {
    let config = ToyConfig {
        trials,
        lambda_star,
        seed,
        ..ToyConfig::default()
    };
    let summary = match run_toy(&config) {
        Ok(s) => s,
        Err(e) => {
            return CheckResult::new(
                "toy_benchmark_reproduction",
                false,
                format!("benchmark failed: {e}"),
            )
        }
    };
    let mut passed = true;
    let mut detail = format!("lambda* = {lambda_star}: ");
    let mut expect = |name: &str, method: Method, lo: f64, hi: f64| {
        let mean = summary.mean_of(method, name);
        match mean {
            Some(m) => {
                let ok = m >= lo && m <= hi;
                passed &= ok;
                detail.push_str(&format!(
                    "{method} {name} = {m:.4} {}in [{lo:.3}, {hi:.3}]; ",
                    if ok { "" } else { "NOT " }
                ));
            }
            None => {
                passed = false;
                detail.push_str(&format!("{method} {name} missing; "));
            }
        }
    };
    if (lambda_star - 50.0).abs() < 1e-9 {
        expect("alpha_1", Method::Ours, 0.095, 0.105);
        expect("alpha_2", Method::Ours, 0.19, 0.21);
        expect("alpha_3", Method::Ours, 0.285, 0.315);
        expect("beta_1", Method::Ours, 0.95, 1.05);
        expect("lambda", Method::Ours, 47.5, 52.5);
        expect("gamma", Method::Ours, 1.9, 2.1);
    } else if (lambda_star - 5.0).abs() < 1e-9 {
        expect("lambda", Method::Ours, 4.7, 5.4);
        expect("gamma", Method::Ours, 1.80, 2.08);
        expect("gamma", Method::Naive, 1.10, 1.40);
    } else {
        return CheckResult::new(
            "toy_benchmark_reproduction",
            false,
            format!("no reference bands for lambda* = {lambda_star}"),
        );
    }
    detail.push_str(&format!("{} failed trial(s)", summary.failures.len()));
    CheckResult::new("toy_benchmark_reproduction", passed, detail)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_match_benchmark_protocol() {
        let config = ToyConfig::default();
        assert_eq!(config.trials, 100);
        assert_eq!(config.n, 1000);
        assert_eq!(config.em.iterations, 30);
        assert_eq!(config.em.replicates, 10);
        assert_eq!(config.alpha, vec![0.1, 0.2, 0.3]);
        assert_eq!(config.tau, 0.75);
        assert!(config.stage2_truth);
        assert_eq!(config.truth("alpha_2"), Some(0.2));
        assert_eq!(config.truth("lambda"), Some(5.0));
        assert_eq!(config.truth("nope"), None);
    }

    #[test]
    fn toy_benchmark_small_run_is_deterministic() {
        let config = ToyConfig {
            trials: 3,
            n: 150,
            em: EmSettings {
                iterations: 3,
                replicates: 4,
            },
            seed: 11,
            ..ToyConfig::default()
        };
        let a = run_toy(&config).unwrap();
        let b = run_toy(&config).unwrap();
        assert_eq!(a.rows.len(), b.rows.len());
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.mean.to_bits(), rb.mean.to_bits());
            assert_eq!(ra.trials, 3);
        }
        // Parallel execution must not change the aggregate.
        let parallel = {
            let mut c = config.clone();
            c.jobs = 2;
            run_toy(&c).unwrap()
        };
        for (ra, rb) in a.rows.iter().zip(&parallel.rows) {
            assert_eq!(ra.mean.to_bits(), rb.mean.to_bits());
        }
    }

    #[test]
    fn toy_table_renders_with_marks() {
        let config = ToyConfig {
            trials: 2,
            n: 120,
            em: EmSettings {
                iterations: 2,
                replicates: 3,
            },
            seed: 12,
            ..ToyConfig::default()
        };
        let summary = run_toy(&config).unwrap();
        let table = render_toy_table(&summary, &config);
        assert!(table.contains("Complete"));
        assert!(table.contains("Naive"));
        assert!(table.contains("Ours"));
        assert!(table.contains("marks: *"));
        let mut csv = Vec::new();
        write_toy_csv(&summary, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.contains("method,lambda_star,param,mean,std,trials"));
        assert!(text.lines().count() > 3);
    }

    #[test]
    fn fault_injection_breaks_the_closed_form_check() {
        let clean = check_s_circ_closed_form(1, 60, 0.0);
        assert!(clean.passed, "{}", clean.detail);
        let corrupted = check_s_circ_closed_form(1, 60, 1e-4);
        assert!(!corrupted.passed, "fault injection went undetected");
    }

    #[test]
    fn quick_checks_pass() {
        let report = validate(ValidateLevel::Quick, 20260809);
        for check in &report.checks {
            assert!(check.passed, "{}: {}", check.name, check.detail);
        }
    }

    #[test]
    fn surplus_boundaries() {
        assert_eq!(premium_surplus(3.0, 0.0), 1.0);
        assert_eq!(premium_surplus(3.0, 3.0), 0.0);
        assert!(premium_surplus(2.0, 3.0) < 0.0);
    }

    #[test]
    fn true_hazard_prices_at_balance() {
        // Premiums from the data-generating hazard match paid benefits on a
        // large pool: the compensator identity in benchmark form.
        let config = RiskConfig {
            synthetic_n: 10_000,
            ..RiskConfig::default()
        };
        let records = synthetic_accident_records(&config, RngStream::new(31)).unwrap();
        let data = semi_synthetic(&records, 5.0, 1.0, None, RngStream::new(32), "pool").unwrap();
        let baseline = PiecewiseConstantHazard::new(
            config.knots.clone(),
            config.synthetic_alpha.clone(),
        )
        .unwrap();
        let mut premiums = 0.0;
        let mut benefits = 0.0;
        for (rec, truth) in records.iter().zip(&data.truth) {
            let effect: f64 = rec
                .covariates
                .iter()
                .zip(&config.synthetic_beta)
                .map(|(x, b)| x * b)
                .sum::<f64>()
                .exp();
            premiums += effect * baseline.cumulative(truth.accident_time);
            benefits += if truth.accident_occurred { 1.0 } else { 0.0 };
        }
        let metric = premium_surplus(premiums, benefits);
        assert!(metric.abs() < 0.05, "metric = {metric}");
    }

    #[test]
    fn synthetic_records_have_both_outcomes() {
        let config = RiskConfig {
            synthetic_n: 500,
            ..RiskConfig::default()
        };
        let records = synthetic_accident_records(&config, RngStream::new(5)).unwrap();
        assert_eq!(records.len(), 500);
        let events = records.iter().filter(|r| r.event).count();
        assert!(events > 50 && events < 500, "events = {events}");
    }

    #[test]
    fn risk_benchmark_runs_and_orders_methods() {
        let config = RiskConfig {
            trials: 6,
            synthetic_n: 2400,
            em: EmSettings {
                iterations: 10,
                replicates: 5,
            },
            seed: 21,
            jobs: 2,
            ..RiskConfig::default()
        };
        let records = synthetic_accident_records(&config, RngStream::new(22)).unwrap();
        let report = run_risk(&config, &records).unwrap();
        assert_eq!(report.rows.len(), 3);
        let by_method = |m: Method| {
            report
                .rows
                .iter()
                .find(|r| r.method == m)
                .map(|r| r.metric_mean)
                .unwrap()
        };
        // Naive underprices strongly; the other two stay near balance.
        assert!(by_method(Method::Naive) < by_method(Method::Complete) - 0.1);
        assert!(by_method(Method::Naive) < -0.1);
        assert!(by_method(Method::Complete).abs() < 0.35);
        assert!(by_method(Method::Ours).abs() < 0.35);
        let mut csv = Vec::new();
        write_risk_csv(&report, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.contains("dataset,target,method,metric_mean,metric_std,trials"));
    }
}
