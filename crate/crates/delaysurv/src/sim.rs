//! Synthetic and semi-synthetic data generation: covariates, accident times,
//! reporting delays, censoring, administrative censoring, and the masking of
//! unreported accidents.
//!
//! Simulation outputs carry a hidden truth channel alongside the observed
//! dataset so complete-data baselines and distribution tests can run;
//! estimation code paths only ever receive the observed [`Dataset`].

use crate::hazard::{HazardError, HazardModel};
use crate::joint::{Dataset, JointError, Observation};
use crate::numeric::RngStream;
use rand::Rng;
use std::io;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Hazard(#[from] HazardError),
    #[error(transparent)]
    Joint(#[from] JointError),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("csv schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Covariate generating law for fully synthetic domains.
#[derive(Debug, Clone)]
pub enum CovariateLaw {
    /// Uniform on `[-1, 1]^d`.
    Uniform,
    /// Externally supplied covariate rows, consumed in order.
    External(Vec<Vec<f64>>),
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub n: usize,
    pub accident: HazardModel,
    pub delay: HazardModel,
    pub censor: HazardModel,
    pub tau: Option<f64>,
    pub covariate_dim: usize,
    pub covariate_law: CovariateLaw,
    pub seed: RngStream,
}

/// One individual's full latent history before any censoring is applied.
#[derive(Debug, Clone)]
pub struct CompleteRecord {
    pub covariates: Vec<f64>,
    pub accident_time: f64,
    pub delay_time: f64,
    pub censor_time: f64,
}

/// The pre-masking accident status `(z, w)` of one observed row.
#[derive(Debug, Clone, Copy)]
pub struct TruthRecord {
    pub accident_time: f64,
    pub accident_occurred: bool,
}

/// Observed dataset plus the hidden truth channel, row-aligned.
#[derive(Debug, Clone)]
pub struct ObservedData {
    pub dataset: Dataset,
    pub truth: Vec<TruthRecord>,
}

/// Draw i.i.d. complete records: covariates, accident time, delay, and
/// censoring time, each from its configured model. Every record derives its
/// own substream of the config seed, so output is reproducible and
/// independent of evaluation order.
pub fn simulate_complete(config: &SimulationConfig) -> Result<Vec<CompleteRecord>, SimError> {
    if config.n == 0 {
        return Err(SimError::InvalidConfig("n must be at least 1".into()));
    }
    if let Some(tau) = config.tau {
        if !(tau > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "tau must be positive, got {tau}"
            )));
        }
    }
    if let CovariateLaw::External(rows) = &config.covariate_law {
        if rows.len() < config.n {
            return Err(SimError::InvalidConfig(format!(
                "external covariate law provides {} rows, need {}",
                rows.len(),
                config.n
            )));
        }
        if rows.iter().any(|r| r.len() != config.covariate_dim) {
            return Err(SimError::InvalidConfig(
                "external covariate rows must match covariate_dim".into(),
            ));
        }
    }

    let mut records = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let mut rng = config.seed.substream(i as u64).rng();
        let covariates = match &config.covariate_law {
            CovariateLaw::Uniform => (0..config.covariate_dim)
                .map(|_| rng.gen::<f64>() * 2.0 - 1.0)
                .collect(),
            CovariateLaw::External(rows) => rows[i].clone(),
        };
        let accident_time = config.accident.sample(&covariates, &mut rng)?;
        let delay_time = config.delay.sample(&covariates, &mut rng)?;
        let censor_time = config.censor.sample(&covariates, &mut rng)?;
        records.push(CompleteRecord {
            covariates,
            accident_time,
            delay_time,
            censor_time,
        });
    }
    Ok(records)
}

/// Apply censoring (plus administrative censoring at `tau` when given) and
/// mask the accident status of unreported rows.
pub fn observe(
    records: &[CompleteRecord],
    tau: Option<f64>,
    label: &str,
) -> Result<ObservedData, SimError> {
    let mut observations = Vec::with_capacity(records.len());
    let mut truth = Vec::with_capacity(records.len());
    for rec in records {
        let cutoff = tau.map_or(rec.censor_time, |t| rec.censor_time.min(t));
        let z = rec.accident_time.min(cutoff);
        let w = rec.accident_time <= cutoff;
        let total = rec.accident_time + rec.delay_time;
        let y = total.min(cutoff);
        let v = total <= cutoff;
        observations.push(if v {
            Observation::reported(rec.covariates.clone(), y, z)?
        } else {
            Observation::censored(rec.covariates.clone(), y)?
        });
        truth.push(TruthRecord {
            accident_time: z,
            accident_occurred: w,
        });
    }
    Ok(ObservedData {
        dataset: Dataset::new(observations, tau, label)?,
        truth,
    })
}

/// An external accident record: covariates, observed accident-or-censoring
/// time `z'`, and the accident indicator `w'`.
#[derive(Debug, Clone)]
pub struct AccidentRecord {
    pub covariates: Vec<f64>,
    pub time: f64,
    pub event: bool,
}

/// Divide every record time by the sample median, returning the median.
pub fn standardize_by_median(records: &mut [AccidentRecord]) -> Result<f64, SimError> {
    if records.is_empty() {
        return Err(SimError::InvalidConfig(
            "cannot standardize an empty record set".into(),
        ));
    }
    let med = crate::stats::median(&records.iter().map(|r| r.time).collect::<Vec<_>>());
    if !(med > 0.0) {
        return Err(SimError::InvalidConfig(format!(
            "median record time must be positive, got {med}"
        )));
    }
    for r in records.iter_mut() {
        r.time /= med;
    }
    Ok(med)
}

/// Core transformation of one semi-synthetic row given drawn censoring and
/// reporting times; returns `(z, y, w, v)`.
fn semi_synthetic_row(
    time: f64,
    event: bool,
    censor: f64,
    report_delay: f64,
    tau: Option<f64>,
) -> (f64, f64, bool, bool) {
    let cutoff = tau.map_or(censor, |t| censor.min(t));
    let z = time.min(cutoff);
    let w = event && time <= cutoff;
    let w_ind = if w { 1.0 } else { 0.0 };
    let y = (time + w_ind * report_delay).min(cutoff);
    let v = event && time + w_ind * report_delay <= cutoff;
    (z, y, w, v)
}

/// Build a dataset from external accident records by layering synthetic
/// censoring times and reporting delays on top, then masking as in
/// [`observe`]. Record times are expected to be pre-standardized (divide by
/// the median, see [`standardize_by_median`]).
pub fn semi_synthetic(
    records: &[AccidentRecord],
    delay_rate: f64,
    censor_rate: f64,
    tau: Option<f64>,
    seed: RngStream,
    label: &str,
) -> Result<ObservedData, SimError> {
    let delay = HazardModel::constant(delay_rate)?;
    let censor = HazardModel::constant(censor_rate)?;
    let mut observations = Vec::with_capacity(records.len());
    let mut truth = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        if !(rec.time >= 0.0 && rec.time.is_finite()) {
            return Err(SimError::Schema(format!(
                "record {i} has invalid time {}",
                rec.time
            )));
        }
        let mut rng = seed.substream(i as u64).rng();
        let c = censor.sample(&rec.covariates, &mut rng)?;
        let r = delay.sample(&rec.covariates, &mut rng)?;
        let (z, y, w, v) = semi_synthetic_row(rec.time, rec.event, c, r, tau);
        observations.push(if v {
            Observation::reported(rec.covariates.clone(), y, z)?
        } else {
            Observation::censored(rec.covariates.clone(), y)?
        });
        truth.push(TruthRecord {
            accident_time: z,
            accident_occurred: w,
        });
    }
    Ok(ObservedData {
        dataset: Dataset::new(observations, tau, label)?,
        truth,
    })
}

fn parse_field<T: std::str::FromStr>(raw: &str, what: &str, row: usize) -> Result<T, SimError> {
    raw.trim()
        .parse()
        .map_err(|_| SimError::Schema(format!("row {row}: cannot parse {what} from `{raw}`")))
}

fn parse_indicator(raw: &str, what: &str, row: usize) -> Result<bool, SimError> {
    match raw.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(SimError::Schema(format!(
            "row {row}: {what} must be 0 or 1, got `{other}`"
        ))),
    }
}

/// Read accident records from CSV with header `x_1,...,x_d,time,event`.
pub fn read_accident_records_csv<R: io::Read>(reader: R) -> Result<Vec<AccidentRecord>, SimError> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    let headers = csv_reader.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 2 || cols[cols.len() - 2] != "time" || cols[cols.len() - 1] != "event" {
        return Err(SimError::Schema(
            "expected header `x_1,...,x_d,time,event`".into(),
        ));
    }
    let d = cols.len() - 2;
    let mut records = Vec::new();
    for (i, row) in csv_reader.records().enumerate() {
        let row = row?;
        if row.len() != d + 2 {
            return Err(SimError::Schema(format!(
                "row {i}: expected {} fields, got {}",
                d + 2,
                row.len()
            )));
        }
        let covariates = (0..d)
            .map(|j| parse_field::<f64>(&row[j], "covariate", i))
            .collect::<Result<Vec<_>, _>>()?;
        let time: f64 = parse_field(&row[d], "time", i)?;
        if !(time >= 0.0 && time.is_finite()) {
            return Err(SimError::Schema(format!(
                "row {i}: time must be finite and nonnegative, got {time}"
            )));
        }
        let event = parse_indicator(&row[d + 1], "event", i)?;
        records.push(AccidentRecord {
            covariates,
            time,
            event,
        });
    }
    Ok(records)
}

fn dataset_header(d: usize) -> Vec<String> {
    let mut header: Vec<String> = (1..=d).map(|j| format!("x_{j}")).collect();
    header.extend(["y", "v", "z", "w"].map(String::from));
    header
}

/// Write the observed view of a dataset as CSV `x_*,y,v,z,w`, with empty
/// accident cells on unreported rows.
pub fn write_dataset_csv<W: io::Write>(data: &Dataset, writer: W) -> Result<(), SimError> {
    let d = data
        .observations()
        .first()
        .map_or(0, |o| o.covariates.len());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(dataset_header(d))?;
    for obs in data.observations() {
        let mut row: Vec<String> = obs.covariates.iter().map(|x| format!("{x}")).collect();
        row.push(format!("{}", obs.time));
        row.push(if obs.reported { "1" } else { "0" }.into());
        match obs.accident_time {
            Some(z) => row.push(format!("{z}")),
            None => row.push(String::new()),
        }
        match obs.accident_occurred {
            Some(flag) => row.push(if flag { "1" } else { "0" }.into()),
            None => row.push(String::new()),
        }
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Write the dataset with the hidden `(z, w)` truth filled in for every row.
/// Callers gate this behind an explicit export flag.
pub fn write_truth_csv<W: io::Write>(observed: &ObservedData, writer: W) -> Result<(), SimError> {
    let d = observed
        .dataset
        .observations()
        .first()
        .map_or(0, |o| o.covariates.len());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(dataset_header(d))?;
    for (obs, truth) in observed.dataset.observations().iter().zip(&observed.truth) {
        let mut row: Vec<String> = obs.covariates.iter().map(|x| format!("{x}")).collect();
        row.push(format!("{}", obs.time));
        row.push(if obs.reported { "1" } else { "0" }.into());
        row.push(format!("{}", truth.accident_time));
        row.push(if truth.accident_occurred { "1" } else { "0" }.into());
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a dataset from CSV `x_*,y,v,z,w` as written by [`write_dataset_csv`].
pub fn read_dataset_csv<R: io::Read>(
    reader: R,
    tau: Option<f64>,
    label: &str,
) -> Result<Dataset, SimError> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    let headers = csv_reader.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 4 || cols[cols.len() - 4..] != ["y", "v", "z", "w"] {
        return Err(SimError::Schema(
            "expected header `x_1,...,x_d,y,v,z,w`".into(),
        ));
    }
    let d = cols.len() - 4;
    let mut observations = Vec::new();
    for (i, row) in csv_reader.records().enumerate() {
        let row = row?;
        if row.len() != d + 4 {
            return Err(SimError::Schema(format!(
                "row {i}: expected {} fields, got {}",
                d + 4,
                row.len()
            )));
        }
        let covariates = (0..d)
            .map(|j| parse_field::<f64>(&row[j], "covariate", i))
            .collect::<Result<Vec<_>, _>>()?;
        let y: f64 = parse_field(&row[d], "y", i)?;
        let reported = parse_indicator(&row[d + 1], "v", i)?;
        let obs = if reported {
            let z: f64 = parse_field(&row[d + 2], "z", i)?;
            if !row[d + 3].trim().is_empty() {
                let w = parse_indicator(&row[d + 3], "w", i)?;
                if !w {
                    return Err(SimError::Schema(format!(
                        "row {i}: reported rows must have w = 1"
                    )));
                }
            }
            Observation::reported(covariates, y, z)?
        } else {
            if !row[d + 2].trim().is_empty() || !row[d + 3].trim().is_empty() {
                return Err(SimError::Schema(format!(
                    "row {i}: unreported rows must have empty z and w cells"
                )));
            }
            Observation::censored(covariates, y)?
        };
        observations.push(obs);
    }
    Ok(Dataset::new(observations, tau, label)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hazard::{CovariateEffect, PiecewiseConstantHazard};
    use crate::joint::{admin_atom_probability, ModelPair};

    fn toy_config(seed: u64) -> SimulationConfig {
        let baseline =
            PiecewiseConstantHazard::new(vec![0.0, 0.5, 1.0], vec![0.1, 0.2, 0.3]).unwrap();
        SimulationConfig {
            n: 200,
            accident: HazardModel::piecewise_ph(
                baseline,
                CovariateEffect::log_linear(vec![1.0]).unwrap(),
            ),
            delay: HazardModel::constant(5.0).unwrap(),
            censor: HazardModel::constant(1.0).unwrap(),
            tau: None,
            covariate_dim: 1,
            covariate_law: CovariateLaw::Uniform,
            seed: RngStream::new(seed),
        }
    }

    #[test]
    fn simulation_is_reproducible() {
        let config = toy_config(3);
        let a = simulate_complete(&config).unwrap();
        let b = simulate_complete(&config).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.covariates, rb.covariates);
            assert_eq!(ra.accident_time, rb.accident_time);
            assert_eq!(ra.delay_time, rb.delay_time);
            assert_eq!(ra.censor_time, rb.censor_time);
        }
    }

    #[test]
    fn covariates_live_on_unit_cube() {
        let config = toy_config(4);
        for rec in simulate_complete(&config).unwrap() {
            assert_eq!(rec.covariates.len(), 1);
            assert!((-1.0..=1.0).contains(&rec.covariates[0]));
        }
    }

    #[test]
    fn accident_times_obey_law_of_large_numbers() {
        let mut config = toy_config(5);
        config.accident = HazardModel::constant(2.0).unwrap();
        config.n = 100_000;
        let records = simulate_complete(&config).unwrap();
        let mean = records.iter().map(|r| r.accident_time).sum::<f64>() / records.len() as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean = {mean}");
    }

    #[test]
    fn observe_covers_all_report_patterns() {
        let x = vec![0.0];
        let make = |t1: f64, t2: f64, c: f64| CompleteRecord {
            covariates: x.clone(),
            accident_time: t1,
            delay_time: t2,
            censor_time: c,
        };

        // Reported before any censoring.
        let data = observe(&[make(0.3, 0.1, 5.0)], Some(0.75), "t").unwrap();
        let obs = &data.dataset.observations()[0];
        assert!(obs.reported);
        assert_eq!(obs.accident_time, Some(0.3));
        assert!((obs.time - 0.4).abs() < 1e-15);
        assert!(data.truth[0].accident_occurred);

        // Hidden accident behind the administrative atom.
        let data = observe(&[make(0.3, 1.0, 5.0)], Some(0.75), "t").unwrap();
        let obs = &data.dataset.observations()[0];
        assert!(!obs.reported);
        assert_eq!(obs.time, 0.75);
        assert_eq!(obs.accident_time, None);
        assert_eq!(obs.accident_occurred, None);
        assert!(data.truth[0].accident_occurred);
        assert_eq!(data.truth[0].accident_time, 0.3);

        // Censored before the accident, no administrative censoring.
        let data = observe(&[make(2.0, 1.0, 0.5)], None, "t").unwrap();
        let obs = &data.dataset.observations()[0];
        assert!(!obs.reported);
        assert_eq!(obs.time, 0.5);
        assert!(!data.truth[0].accident_occurred);
        assert_eq!(data.truth[0].accident_time, 0.5);
    }

    #[test]
    fn tie_between_accident_and_censoring_counts_as_event() {
        let rec = CompleteRecord {
            covariates: vec![],
            accident_time: 0.5,
            delay_time: 1.0,
            censor_time: 0.5,
        };
        let data = observe(&[rec], None, "t").unwrap();
        assert!(data.truth[0].accident_occurred);
    }

    #[test]
    fn masking_hides_exactly_the_unreported_rows() {
        let config = toy_config(6);
        let records = simulate_complete(&config).unwrap();
        let data = observe(&records, Some(0.75), "t").unwrap();
        for obs in data.dataset.observations() {
            if obs.reported {
                assert!(obs.accident_time.is_some());
                assert_eq!(obs.accident_occurred, Some(true));
                assert!(obs.accident_time.unwrap() <= obs.time);
            } else {
                assert!(obs.accident_time.is_none());
                assert!(obs.accident_occurred.is_none());
            }
            assert!(obs.time <= 0.75);
        }
    }

    #[test]
    fn administrative_atom_frequency_matches_probability() {
        let mut config = toy_config(7);
        config.accident = HazardModel::constant(1.0).unwrap();
        config.delay = HazardModel::constant(5.0).unwrap();
        config.n = 30_000;
        config.tau = Some(0.75);
        let records = simulate_complete(&config).unwrap();
        let data = observe(&records, Some(0.75), "t").unwrap();
        let hits = data
            .dataset
            .observations()
            .iter()
            .filter(|o| !o.reported && o.time == 0.75)
            .count();
        let pair = ModelPair::new(config.accident.clone(), config.delay.clone());
        let p = admin_atom_probability(&pair, &config.censor, 0.75, &[0.0]).unwrap();
        let se = (p * (1.0 - p) / config.n as f64).sqrt();
        let freq = hits as f64 / config.n as f64;
        assert!(
            (freq - p).abs() < 4.0 * se,
            "freq = {freq}, p = {p}, se = {se}"
        );
    }

    #[test]
    fn semi_synthetic_row_patterns() {
        // No accident: the report machinery never fires.
        let (z, y, w, v) = semi_synthetic_row(1.0, false, 2.0, 99.0, None);
        assert_eq!((z, y, w, v), (1.0, 1.0, false, false));

        // Accident reported within the censoring window.
        let (z, y, w, v) = semi_synthetic_row(0.5, true, 2.0, 0.1, None);
        assert_eq!((z, y, w, v), (0.5, 0.6, true, true));

        // Report censored away.
        let (z, y, w, v) = semi_synthetic_row(0.5, true, 2.0, 5.0, None);
        assert_eq!((z, y, w, v), (0.5, 2.0, true, false));

        // Administrative censoring tightens the window.
        let (z, y, w, v) = semi_synthetic_row(0.5, true, 2.0, 0.1, Some(0.55));
        assert_eq!((z, y, w, v), (0.5, 0.55, true, false));
    }

    #[test]
    fn semi_synthetic_masks_like_observe() {
        let records: Vec<AccidentRecord> = (0..500)
            .map(|i| AccidentRecord {
                covariates: vec![i as f64 / 500.0],
                time: 0.1 + (i % 17) as f64 * 0.1,
                event: i % 3 != 0,
            })
            .collect();
        let data =
            semi_synthetic(&records, 5.0, 1.0, Some(0.75), RngStream::new(8), "t").unwrap();
        assert_eq!(data.truth.len(), 500);
        for (obs, truth) in data.dataset.observations().iter().zip(&data.truth) {
            if obs.reported {
                assert_eq!(obs.accident_time, Some(truth.accident_time));
                assert!(truth.accident_occurred);
            } else {
                assert!(obs.accident_time.is_none());
            }
            assert!(truth.accident_time <= obs.time + 1e-12);
        }
    }

    #[test]
    fn standardization_divides_by_median() {
        let mut records: Vec<AccidentRecord> = [4.0, 2.0, 8.0]
            .iter()
            .map(|t| AccidentRecord {
                covariates: vec![],
                time: *t,
                event: true,
            })
            .collect();
        let med = standardize_by_median(&mut records).unwrap();
        assert_eq!(med, 4.0);
        assert_eq!(
            records.iter().map(|r| r.time).collect::<Vec<_>>(),
            vec![1.0, 0.5, 2.0]
        );
    }

    #[test]
    fn csv_round_trip() {
        let config = toy_config(9);
        let records = simulate_complete(&config).unwrap();
        let data = observe(&records, None, "roundtrip").unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&data.dataset, &mut buf).unwrap();
        let back = read_dataset_csv(buf.as_slice(), None, "roundtrip").unwrap();
        assert_eq!(back.len(), data.dataset.len());
        for (a, b) in back.observations().iter().zip(data.dataset.observations()) {
            assert_eq!(a.reported, b.reported);
            assert!((a.time - b.time).abs() < 1e-12);
            assert_eq!(a.accident_time.is_some(), b.accident_time.is_some());
        }
    }

    #[test]
    fn accident_csv_schema_errors() {
        let good = "x_1,time,event\n0.5,1.2,1\n-0.25,0.4,0\n";
        let records = read_accident_records_csv(good.as_bytes()).unwrap();
        assert_eq!(records.len(), 2);
        assert!(records[0].event);
        assert!(!records[1].event);

        let bad_header = "a,b\n1,2\n";
        assert!(matches!(
            read_accident_records_csv(bad_header.as_bytes()),
            Err(SimError::Schema(_))
        ));
        let bad_event = "x_1,time,event\n0.5,1.2,yes\n";
        assert!(matches!(
            read_accident_records_csv(bad_event.as_bytes()),
            Err(SimError::Schema(_))
        ));
        let bad_time = "x_1,time,event\n0.5,-3.0,1\n";
        assert!(matches!(
            read_accident_records_csv(bad_time.as_bytes()),
            Err(SimError::Schema(_))
        ));
    }

    #[test]
    fn truth_export_fills_hidden_cells() {
        let config = toy_config(10);
        let records = simulate_complete(&config).unwrap();
        let data = observe(&records, Some(0.75), "t").unwrap();
        let mut buf = Vec::new();
        write_truth_csv(&data, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        for line in text.lines().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            assert!(!fields[fields.len() - 2].is_empty());
            assert!(!fields[fields.len() - 1].is_empty());
        }
    }
}
