//! Command-line harness: dataset simulation, joint model fitting, two-stage
//! transfer estimation, the toy and risk benchmarks, and the validation
//! suite. Every subcommand takes a JSON config with flag overrides; the
//! default seed falls back to the `DELAYSURV_SEED` environment variable.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use delaysurv::em::{run_em, AccidentFamily, DelayFamily, EffectSpec, EmConfig, Families};
use delaysurv::harness::{
    render_toy_table, run_risk, run_toy, synthetic_accident_records, validate, write_risk_csv,
    write_toy_csv, RiskConfig, ToyConfig, ValidateLevel,
};
use delaysurv::hazard::HazardModel;
use delaysurv::numeric::RngStream;
use delaysurv::sim::{
    observe, read_accident_records_csv, read_dataset_csv, simulate_complete,
    standardize_by_median, write_dataset_csv, write_truth_csv, CovariateLaw, SimulationConfig,
};
use delaysurv::two_stage::{estimate_gamma, fit_source};
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "delaysurv",
    version,
    about = "Survival estimation under right-censored reporting delays"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a synthetic domain and write it as CSV.
    Simulate(SimulateArgs),
    /// Fit the joint accident/delay model to a dataset by Monte-Carlo EM.
    Fit(FitArgs),
    /// Run both stages: fit a source domain, transfer to a target domain.
    TwoStage(TwoStageArgs),
    /// Reproduce the toy benchmark table.
    ToyBench(ToyBenchArgs),
    /// Run the insurance risk-metric benchmark.
    RiskBench(RiskBenchArgs),
    /// Run the invariant validation suite and print a verdict per check.
    Validate(ValidateArgs),
}

fn default_seed_env() -> u64 {
    std::env::var("DELAYSURV_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(20260809)
}

fn load_config<T: for<'de> Deserialize<'de> + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))
        }
        None => Ok(T::default()),
    }
}

fn ensure_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output dir {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(file, value)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SimulateConfig {
    #[serde(default = "SimulateConfig::default_n")]
    n: usize,
    accident: HazardModel,
    delay: HazardModel,
    censor: HazardModel,
    #[serde(default)]
    tau: Option<f64>,
    #[serde(default = "SimulateConfig::default_dim")]
    covariate_dim: usize,
    #[serde(default = "default_seed_env")]
    seed: u64,
    #[serde(default = "SimulateConfig::default_label")]
    label: String,
}

impl SimulateConfig {
    fn default_n() -> usize {
        1000
    }
    fn default_dim() -> usize {
        1
    }
    fn default_label() -> String {
        "simulated".into()
    }
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let baseline = delaysurv::hazard::PiecewiseConstantHazard::new(
            vec![0.0, 0.5, 1.0],
            vec![0.1, 0.2, 0.3],
        )
        .expect("valid default baseline");
        Self {
            n: 1000,
            accident: HazardModel::piecewise_ph(
                baseline,
                delaysurv::hazard::CovariateEffect::log_linear(vec![1.0]).expect("finite beta"),
            ),
            delay: HazardModel::constant(5.0).expect("positive rate"),
            censor: HazardModel::constant(1.0).expect("positive rate"),
            tau: None,
            covariate_dim: 1,
            seed: default_seed_env(),
            label: "simulated".into(),
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON config; defaults to the toy source-domain setting.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    /// Administrative censoring time; overrides the config.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the hidden (z, w) truth channel next to the dataset.
    #[arg(long)]
    export_truth: bool,
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let mut config: SimulateConfig = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(n) = args.n {
        config.n = n;
    }
    if args.tau.is_some() {
        config.tau = args.tau;
    }
    ensure_out(&args.out)?;
    let sim = SimulationConfig {
        n: config.n,
        accident: config.accident.clone(),
        delay: config.delay.clone(),
        censor: config.censor.clone(),
        tau: config.tau,
        covariate_dim: config.covariate_dim,
        covariate_law: CovariateLaw::Uniform,
        seed: RngStream::new(config.seed),
    };
    let records = simulate_complete(&sim)?;
    let data = observe(&records, config.tau, &config.label)?;
    let csv_path = args.out.join("dataset.csv");
    write_dataset_csv(&data.dataset, File::create(&csv_path)?)?;
    println!(
        "wrote {} ({} rows, {} reported)",
        csv_path.display(),
        data.dataset.len(),
        data.dataset.reported_count()
    );
    if args.export_truth {
        let truth_path = args.out.join("truth.csv");
        write_truth_csv(&data, File::create(&truth_path)?)?;
        println!("wrote {} (hidden truth channel)", truth_path.display());
    }
    write_json(&args.out.join("simulate_config.json"), &config)?;
    Ok(())
}

fn default_families() -> Families {
    Families {
        accident: AccidentFamily::PiecewisePh {
            knots: vec![0.0, 0.5, 1.0],
            effect: EffectSpec::LogLinear { dim: 1 },
        },
        delay: DelayFamily::Constant,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FitConfig {
    #[serde(default = "default_families")]
    families: Families,
    #[serde(default)]
    em: delaysurv::harness::EmSettings,
    #[serde(default)]
    tau: Option<f64>,
    #[serde(default = "default_seed_env")]
    seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            families: default_families(),
            em: Default::default(),
            tau: None,
            seed: default_seed_env(),
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Dataset CSV with header `x_1,...,x_d,y,v,z,w`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let mut config: FitConfig = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(iterations) = args.iterations {
        config.em.iterations = iterations;
    }
    if let Some(replicates) = args.replicates {
        config.em.replicates = replicates;
    }
    ensure_out(&args.out)?;
    let data = read_dataset_csv(File::open(&args.data)?, config.tau, "cli-fit")?;
    let mut em_config = EmConfig::new(RngStream::new(config.seed));
    em_config.iterations = config.em.iterations;
    em_config.replicates = config.em.replicates;
    let result = run_em(&data, &config.families, &em_config)?;
    write_json(&args.out.join("fit.json"), &result)?;
    result.write_trace_csv(File::create(args.out.join("trace.csv"))?)?;
    let final_ll = result.trace.last().map(|p| p.loglik).unwrap_or(f64::NAN);
    println!(
        "fitted {} parameters over {} iterations; final marginal loglik {final_ll:.4}",
        result.fitted.parameters().len(),
        result.trace.len() - 1
    );
    for (name, value) in result
        .parameter_names()
        .iter()
        .zip(result.fitted.parameters())
    {
        println!("  {name} = {value:.6}");
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TwoStageConfig {
    #[serde(default = "default_families")]
    families: Families,
    #[serde(default)]
    em: delaysurv::harness::EmSettings,
    /// Administrative censoring time of the target domain.
    #[serde(default = "TwoStageConfig::default_tau")]
    target_tau: f64,
    #[serde(default = "default_seed_env")]
    seed: u64,
    /// Also compute the exact maximizer and its error diagnostic.
    #[serde(default)]
    exact: bool,
}

impl TwoStageConfig {
    fn default_tau() -> f64 {
        0.75
    }
}

impl Default for TwoStageConfig {
    fn default() -> Self {
        Self {
            families: default_families(),
            em: Default::default(),
            target_tau: 0.75,
            seed: default_seed_env(),
            exact: false,
        }
    }
}

#[derive(Args)]
struct TwoStageArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Compute the exact gamma maximizer in addition to the closed forms.
    #[arg(long)]
    exact: bool,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_two_stage(args: TwoStageArgs) -> Result<()> {
    let mut config: TwoStageConfig = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.exact {
        config.exact = true;
    }
    ensure_out(&args.out)?;
    let source = read_dataset_csv(File::open(&args.source)?, None, "source")?;
    let target = read_dataset_csv(
        File::open(&args.target)?,
        Some(config.target_tau),
        "target",
    )?;
    let mut em_config = EmConfig::new(RngStream::new(config.seed));
    em_config.iterations = config.em.iterations;
    em_config.replicates = config.em.replicates;
    let stage_one = fit_source(&source, &config.families, &em_config)?;
    let baseline = stage_one.baseline_hazard()?;
    let estimates = estimate_gamma(&target, &baseline, &stage_one.delay, config.exact)?;
    write_json(&args.out.join("stage_one.json"), &stage_one)?;
    write_json(&args.out.join("gamma.json"), &estimates)?;
    fs::write(
        args.out.join("gamma.csv"),
        format!(
            "gamma_check0,gamma_check,gamma_hat,diag\n{}\n",
            estimates.csv_row()
        ),
    )?;
    println!(
        "stage one: baseline {:?}, effect {:?}, delay {:?}",
        stage_one.baseline,
        stage_one.effect,
        stage_one.delay.parameters()
    );
    println!(
        "stage two: gamma_check0 = {:.6}, gamma_check = {:.6}{}",
        estimates.gamma_check0,
        estimates.gamma_check,
        match estimates.gamma_hat {
            Some(hat) => format!(", gamma_hat = {hat:.6}"),
            None => String::new(),
        }
    );
    Ok(())
}

#[derive(Args)]
struct ToyBenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    lambda_star: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    /// Worker threads for parallel trials.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_toy_bench(args: ToyBenchArgs) -> Result<()> {
    let mut config: ToyConfig = load_config(&args.config)?;
    if args.config.is_none() {
        config.seed = default_seed_env();
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(trials) = args.trials {
        config.trials = trials;
    }
    if let Some(lambda) = args.lambda_star {
        config.lambda_star = lambda;
    }
    if let Some(n) = args.n {
        config.n = n;
    }
    if let Some(jobs) = args.jobs {
        config.jobs = jobs;
    }
    ensure_out(&args.out)?;
    let summary = run_toy(&config)?;
    let table = render_toy_table(&summary, &config);
    print!("{table}");
    write_toy_csv(&summary, File::create(args.out.join("toy_summary.csv"))?)?;
    fs::write(args.out.join("toy_table.txt"), &table)?;
    write_json(&args.out.join("toy_config.json"), &config)?;
    if !summary.failures.is_empty() {
        println!("excluded {} failed trial(s)", summary.failures.len());
    }
    Ok(())
}

#[derive(Args)]
struct RiskBenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Accident records CSV `x_1,...,x_d,time,event`; generates a synthetic
    /// pool when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Skip dividing record times by their median before the run.
    #[arg(long)]
    no_standardize: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_risk_bench(args: RiskBenchArgs) -> Result<()> {
    let mut config: RiskConfig = load_config(&args.config)?;
    if args.config.is_none() {
        config.seed = default_seed_env();
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(trials) = args.trials {
        config.trials = trials;
    }
    if let Some(jobs) = args.jobs {
        config.jobs = jobs;
    }
    ensure_out(&args.out)?;
    let records = match &args.data {
        Some(path) => {
            let mut records = read_accident_records_csv(File::open(path)?)?;
            if !args.no_standardize {
                let median = standardize_by_median(&mut records)?;
                println!("standardized {} record times by median {median:.6}", records.len());
            }
            config.dataset_label = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "external".into());
            records
        }
        None => {
            let records =
                synthetic_accident_records(&config, RngStream::new(config.seed).substream(u64::MAX))?;
            println!(
                "generated {} synthetic accident records ({} events)",
                records.len(),
                records.iter().filter(|r| r.event).count()
            );
            records
        }
    };
    let report = run_risk(&config, &records)?;
    for row in &report.rows {
        println!(
            "{:<10} {:<8} {:<9} metric = {:+.4} ± {:.4} ({} trials)",
            row.dataset, row.target, row.method.to_string(), row.metric_mean, row.metric_std, row.trials
        );
    }
    write_risk_csv(&report, File::create(args.out.join("risk.csv"))?)?;
    write_json(&args.out.join("risk.json"), &report)?;
    if !report.failures.is_empty() {
        println!("excluded {} failed trial(s)", report.failures.len());
    }
    Ok(())
}

#[derive(Args)]
struct ValidateArgs {
    /// `quick` finishes in under a minute; `full` reproduces the benchmarks.
    #[arg(long, default_value = "quick")]
    level: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_validate(args: ValidateArgs) -> Result<()> {
    let level = match args.level.as_str() {
        "quick" => ValidateLevel::Quick,
        "full" => ValidateLevel::Full,
        other => bail!("unknown validation level `{other}` (expected quick or full)"),
    };
    let seed = args.seed.unwrap_or_else(default_seed_env);
    let report = validate(level, seed);
    for check in &report.checks {
        println!(
            "CHECK {:<40} {}  {}",
            check.name,
            if check.passed { "PASS" } else { "FAIL" },
            check.detail
        );
    }
    println!(
        "VERDICT {} ({} checks)",
        if report.passed { "PASS" } else { "FAIL" },
        report.checks.len()
    );
    if let Some(out) = args.out {
        ensure_out(&out)?;
        write_json(&out.join("validate.json"), &report)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::TwoStage(args) => cmd_two_stage(args),
        Command::ToyBench(args) => cmd_toy_bench(args),
        Command::RiskBench(args) => cmd_risk_bench(args),
        Command::Validate(args) => cmd_validate(args),
    }
}
