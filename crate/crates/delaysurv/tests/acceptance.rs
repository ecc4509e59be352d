//! Acceptance suite: every release gate runs here at its stated size and
//! tolerance and prints one PASS/FAIL line. Run with
//! `cargo test --test acceptance -- --nocapture` to see the lines as they
//! finish.

use delaysurv::harness::{
    check_consistency_trends, check_gradient, check_jensen_bound, check_gamma_estimator_ordering,
    check_rejection_sampler, check_risk_metric, check_s_circ_closed_form, check_simulator_laws,
    check_toy_reproduction, check_gamma_ratio_regime, CheckResult,
};
use std::time::Instant;

const SEED: u64 = 20260809;

fn report(number: u32, what: &str, started: Instant, check: CheckResult) {
    let verdict = if check.passed { "PASS" } else { "FAIL" };
    println!(
        "ACCEPTANCE {number:02} {what}: {verdict} [{:.1}s] -- {}",
        started.elapsed().as_secs_f64(),
        check.detail
    );
    assert!(check.passed, "criterion {number} failed: {}", check.detail);
}

#[test]
fn criterion_01_toy_benchmark_fast_reporting() {
    let started = Instant::now();
    let check = check_toy_reproduction(SEED, 50.0, 100);
    let elapsed = started.elapsed();
    report(1, "toy benchmark means at lambda* = 50", started, check);
    assert!(
        elapsed.as_secs() < 1800,
        "benchmark exceeded the 30-minute budget: {elapsed:?}"
    );
}

#[test]
fn criterion_02_toy_benchmark_moderate_reporting() {
    let started = Instant::now();
    report(
        2,
        "toy benchmark means at lambda* = 5",
        started,
        check_toy_reproduction(SEED, 5.0, 100),
    );
}

#[test]
fn criterion_03_closed_form_s_circ() {
    let started = Instant::now();
    report(
        3,
        "closed-form S_circ vs quadrature on 1000 draws",
        started,
        check_s_circ_closed_form(SEED, 1000, 0.0),
    );
}

#[test]
fn criterion_04_rejection_sampler() {
    let started = Instant::now();
    report(
        4,
        "rejection sampler distribution, 20 configs x 1e5 draws",
        started,
        check_rejection_sampler(SEED, 20, 100_000),
    );
}

#[test]
fn criterion_05_jensen_bound() {
    let started = Instant::now();
    report(
        5,
        "lower bound vs marginal log-likelihood on 50 instances",
        started,
        check_jensen_bound(SEED, 50),
    );
}

#[test]
fn criterion_06_gamma_ordering() {
    let started = Instant::now();
    report(
        6,
        "gamma_check0 < gamma_hat and gamma_check0 <= gamma_check on 50 targets",
        started,
        check_gamma_estimator_ordering(SEED, 50),
    );
}

#[test]
fn criterion_07_ratio_regime() {
    let started = Instant::now();
    report(
        7,
        "gamma_hat/gamma_check closeness and diagnostic coverage, 20 trials",
        started,
        check_gamma_ratio_regime(SEED, 20),
    );
}

#[test]
fn criterion_08_analytic_gradient() {
    let started = Instant::now();
    report(
        8,
        "analytic gradient vs finite differences on 20 fixtures",
        started,
        check_gradient(SEED, 20),
    );
}

#[test]
fn criterion_09_simulator_laws() {
    let started = Instant::now();
    report(
        9,
        "administrative atom and reported-pair law at 1e5 draws",
        started,
        check_simulator_laws(SEED, 100_000),
    );
}

#[test]
fn criterion_10_consistency_trends() {
    let started = Instant::now();
    report(
        10,
        "median error decreasing in n for both stages, 20 seeds each",
        started,
        check_consistency_trends(SEED, 20),
    );
}

#[test]
fn criterion_11_risk_metric() {
    let started = Instant::now();
    report(
        11,
        "risk-metric bands on synthetic records, 100 trials",
        started,
        check_risk_metric(SEED, 100),
    );
}
