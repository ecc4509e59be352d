//! Small statistical helpers for the validation suites and benchmark
//! summaries: moments, one-sample KS, binomial and chi-square tests.

use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation (divides by n); benchmark spreads are
/// reported as sample spread rather than standard error.
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One-sample Kolmogorov-Smirnov statistic for pre-sorted samples against a
/// continuous CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> f64 {
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    d
}

/// Asymptotic critical value for the one-sample KS statistic at level `alpha`.
pub fn ks_critical(alpha: f64, n: usize) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt() / (n as f64).sqrt()
}

/// Two-sided z critical value at level `alpha`.
pub fn normal_critical(alpha: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    normal.inverse_cdf(1.0 - alpha / 2.0)
}

/// Two-sided binomial z-test: does `successes / trials` match `p`?
/// Returns `(z, critical)`; the hypothesis stands when `|z| <= critical`.
pub fn binomial_z_test(successes: usize, trials: usize, p: f64, alpha: f64) -> (f64, f64) {
    let n = trials as f64;
    let se = (p * (1.0 - p) / n).sqrt();
    let z = (successes as f64 / n - p) / se;
    (z, normal_critical(alpha))
}

/// Upper chi-square quantile for `df` degrees of freedom at level `alpha`.
pub fn chi_square_critical(df: usize, alpha: f64) -> f64 {
    let dist = ChiSquared::new(df as f64).expect("valid degrees of freedom");
    dist.inverse_cdf(1.0 - alpha)
}

/// Pearson chi-square statistic for observed counts against expected counts.
pub fn chi_square_statistic(observed: &[f64], expected: &[f64]) -> f64 {
    observed
        .iter()
        .zip(expected)
        .map(|(o, e)| if *e > 0.0 { (o - e).powi(2) / e } else { 0.0 })
        .sum()
}

/// In-place Fisher-Yates shuffle driven by the supplied generator.
pub fn shuffle<T, R: Rng>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RngStream;

    #[test]
    fn moments() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&v), 2.5);
        assert!((population_std(&v) - (1.25f64).sqrt()).abs() < 1e-12);
        assert_eq!(median(&v), 2.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }

    #[test]
    fn ks_detects_wrong_distribution() {
        let mut rng = RngStream::new(3).rng();
        let mut draws: Vec<f64> = (0..20_000).map(|_| rng.gen::<f64>()).collect();
        draws.sort_by(f64::total_cmp);
        let good = ks_statistic(&draws, |x| x.clamp(0.0, 1.0));
        let bad = ks_statistic(&draws, |x| x.clamp(0.0, 1.0).powi(2));
        let crit = ks_critical(0.01, draws.len());
        assert!(good < crit);
        assert!(bad > crit);
    }

    #[test]
    fn chi_square_quantile_matches_table() {
        // chi^2_{0.95, 10} = 18.307 from standard tables.
        assert!((chi_square_critical(10, 0.05) - 18.307).abs() < 0.01);
    }

    #[test]
    fn shuffle_is_deterministic_per_stream() {
        let mut a: Vec<u32> = (0..50).collect();
        let mut b: Vec<u32> = (0..50).collect();
        shuffle(&mut a, &mut RngStream::new(9).rng());
        shuffle(&mut b, &mut RngStream::new(9).rng());
        assert_eq!(a, b);
        let mut c: Vec<u32> = (0..50).collect();
        shuffle(&mut c, &mut RngStream::new(10).rng());
        assert_ne!(a, c);
    }
}
