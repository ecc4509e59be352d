//! Deterministic numerical primitives shared by the rest of the crate:
//! adaptive quadrature, box-constrained concave maximization, bisection root
//! finding, finite-difference gradients, and seeded random-number streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors surfaced by the numerical primitives.
#[derive(Debug, Error)]
pub enum NumericError {
    #[error("function returned a non-finite value at t = {at}")]
    NonFinite { at: f64 },
    #[error(
        "quadrature budget of {max_subdivisions} subdivisions exhausted \
         (error {error:.3e} > tolerance {tolerance:.3e})"
    )]
    BudgetExceeded {
        max_subdivisions: usize,
        error: f64,
        tolerance: f64,
    },
    #[error("bracket does not satisfy g(lo) <= 0 <= g(hi)")]
    BadBracket,
    #[error("line search failed to improve the objective (gradient norm {gradient_norm:.3e})")]
    LineSearchFailure { gradient_norm: f64 },
    #[error("optimizer hit the iteration limit of {max_iterations}")]
    MaxIterations { max_iterations: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Tolerances and budget for adaptive quadrature.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub absolute_tolerance: f64,
    pub relative_tolerance: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            absolute_tolerance: 1e-10,
            relative_tolerance: 1e-9,
            max_subdivisions: 200,
        }
    }
}

impl QuadratureSpec {
    /// Tighter tolerances, used where a quadrature result serves as an oracle
    /// for a closed form.
    pub fn strict() -> Self {
        Self {
            absolute_tolerance: 1e-14,
            relative_tolerance: 1e-12,
            max_subdivisions: 400,
        }
    }

    fn validate(&self) -> Result<(), NumericError> {
        if !(self.absolute_tolerance > 0.0) || !(self.relative_tolerance > 0.0) {
            return Err(NumericError::InvalidArgument(
                "quadrature tolerances must be strictly positive".into(),
            ));
        }
        if self.max_subdivisions < 1 {
            return Err(NumericError::InvalidArgument(
                "max_subdivisions must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

// 15-point Kronrod / 7-point Gauss abscissae and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_56,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_82,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_94,
    0.417_959_183_673_469_4,
];

struct PanelEstimate {
    integral: f64,
    error: f64,
}

fn gauss_kronrod_15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<PanelEstimate, NumericError> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);

    let eval = |t: f64| -> Result<f64, NumericError> {
        let v = f(t);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(NumericError::NonFinite { at: t })
        }
    };

    let f_center = eval(center)?;
    let mut res_kronrod = WGK[7] * f_center;
    let mut res_gauss = WG[3] * f_center;
    let mut res_abs = res_kronrod.abs();
    let mut samples = [0.0f64; 15];
    samples[7] = f_center;

    for j in 0..7 {
        let x = half * XGK[j];
        let f1 = eval(center - x)?;
        let f2 = eval(center + x)?;
        samples[j] = f1;
        samples[14 - j] = f2;
        res_kronrod += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_gauss += WG[j / 2] * (f1 + f2);
        }
    }

    // Deviation of |f| around its panel mean, for the QUADPACK error rescale.
    let mean = res_kronrod * 0.5;
    let mut res_asc = WGK[7] * (f_center - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((samples[j] - mean).abs() + (samples[14 - j] - mean).abs());
    }

    let integral = res_kronrod * half;
    res_abs *= half.abs();
    res_asc *= half.abs();

    let mut err = ((res_kronrod - res_gauss) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * 1.0f64.min((200.0 * err / res_asc).powf(1.5));
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }

    Ok(PanelEstimate { integral, error: err })
}

/// Integrate `f` over `[a, b]` with adaptive Gauss-Kronrod quadrature.
///
/// The result `I` satisfies `|I - true| <= max(abs_tol, rel_tol * |I|)` on
/// success. Callers must split at known kinks themselves or use
/// [`integrate_with_breakpoints`].
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    spec: &QuadratureSpec,
) -> Result<f64, NumericError> {
    spec.validate()?;
    if !(a <= b) {
        return Err(NumericError::InvalidArgument(format!(
            "integration bounds out of order: a = {a}, b = {b}"
        )));
    }
    if a == b {
        return Ok(0.0);
    }

    let mut panels: Vec<(f64, f64, PanelEstimate)> = Vec::with_capacity(16);
    let first = gauss_kronrod_15(&f, a, b)?;
    panels.push((a, b, first));

    for _ in 0..spec.max_subdivisions {
        let total: f64 = panels.iter().map(|p| p.2.integral).sum();
        let total_err: f64 = panels.iter().map(|p| p.2.error).sum();
        let tol = spec
            .absolute_tolerance
            .max(spec.relative_tolerance * total.abs());
        if total_err <= tol {
            return Ok(total);
        }

        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2.error.total_cmp(&y.1 .2.error))
            .map(|(i, _)| i)
            .expect("panel list is never empty");
        let (lo, hi, _) = panels.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // Interval is at floating-point resolution; keep its estimate.
            panels.push((lo, hi, gauss_kronrod_15(&f, lo, hi)?));
            break;
        }
        panels.push((lo, mid, gauss_kronrod_15(&f, lo, mid)?));
        panels.push((mid, hi, gauss_kronrod_15(&f, mid, hi)?));
    }

    let total: f64 = panels.iter().map(|p| p.2.integral).sum();
    let total_err: f64 = panels.iter().map(|p| p.2.error).sum();
    let tol = spec
        .absolute_tolerance
        .max(spec.relative_tolerance * total.abs());
    if total_err <= tol {
        Ok(total)
    } else {
        Err(NumericError::BudgetExceeded {
            max_subdivisions: spec.max_subdivisions,
            error: total_err,
            tolerance: tol,
        })
    }
}

/// Integrate `f` over `[a, b]`, splitting at the supplied interior
/// breakpoints (knots of piecewise hazards and similar known kinks).
pub fn integrate_with_breakpoints<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    spec: &QuadratureSpec,
) -> Result<f64, NumericError> {
    if !(a <= b) {
        return Err(NumericError::InvalidArgument(format!(
            "integration bounds out of order: a = {a}, b = {b}"
        )));
    }
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|t| *t > a && *t < b)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut pieces = Vec::with_capacity(cuts.len() + 1);
    let mut lo = a;
    for cut in cuts {
        pieces.push((lo, cut));
        lo = cut;
    }
    pieces.push((lo, b));

    let piece_spec = QuadratureSpec {
        absolute_tolerance: spec.absolute_tolerance / pieces.len() as f64,
        ..*spec
    };
    let mut total = 0.0;
    for (lo, hi) in pieces {
        total += integrate(&f, lo, hi, &piece_spec)?;
    }
    Ok(total)
}

/// Result of a box-constrained maximization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub argmax: Vec<f64>,
    pub objective_at_argmax: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Projected gradient norm at the returned point.
    pub gradient_norm: f64,
}

/// Options for [`maximize_concave`].
#[derive(Debug, Clone, Copy)]
pub struct OptimOptions {
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    /// Base step for the finite-difference Hessian of the supplied gradient.
    pub hessian_step: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            gradient_tolerance: 1e-8,
            max_iterations: 200,
            hessian_step: 1e-6,
        }
    }
}

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (xi, (lo, hi)) in x.iter_mut().zip(bounds) {
        *xi = xi.clamp(*lo, *hi);
    }
}

fn projected_gradient(x: &[f64], g: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(bounds)
        .map(|((&xi, &gi), &(lo, hi))| {
            if (xi <= lo && gi < 0.0) || (xi >= hi && gi > 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve `A d = g` for symmetric positive definite `A` via Cholesky.
/// Returns `None` when the factorization breaks down.
fn cholesky_solve(a: &[Vec<f64>], g: &[f64]) -> Option<Vec<f64>> {
    let n = g.len();
    let mut l = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    // Forward then back substitution.
    let mut y = vec![0.0f64; n];
    for i in 0..n {
        let mut s = g[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut d = vec![0.0f64; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[k][i] * d[k];
        }
        d[i] = s / l[i][i];
    }
    Some(d)
}

/// Maximize a concave objective over a coordinate box.
///
/// Projected Newton with a backtracking line search; the Hessian is formed by
/// central differences of the supplied analytic gradient, and the search
/// falls back to projected gradient ascent when the Newton direction is not
/// an ascent direction.
pub fn maximize_concave<F, G>(
    objective: F,
    gradient: G,
    init: &[f64],
    bounds: &[(f64, f64)],
    opts: &OptimOptions,
) -> Result<OptimizerReport, NumericError>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let n = init.len();
    if bounds.len() != n {
        return Err(NumericError::InvalidArgument(
            "bounds length must match the dimension of init".into(),
        ));
    }
    let mut x = init.to_vec();
    project(&mut x, bounds);
    let mut fx = objective(&x);
    if !fx.is_finite() {
        return Err(NumericError::NonFinite { at: f64::NAN });
    }

    for iter in 0..opts.max_iterations {
        let g = gradient(&x);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(NumericError::NonFinite { at: f64::NAN });
        }
        let pg = projected_gradient(&x, &g, bounds);
        let pg_norm = norm(&pg);
        if pg_norm <= opts.gradient_tolerance {
            return Ok(OptimizerReport {
                argmax: x,
                objective_at_argmax: fx,
                iterations: iter,
                converged: true,
                gradient_norm: pg_norm,
            });
        }

        // Finite-difference Hessian of the gradient, symmetrized.
        let mut hess = vec![vec![0.0f64; n]; n];
        for j in 0..n {
            let (lo, hi) = bounds[j];
            let mut h = opts.hessian_step * (1.0 + x[j].abs());
            if x[j] + h > hi {
                h = (hi - x[j]).max(f64::MIN_POSITIVE);
            }
            if x[j] - h < lo {
                h = h.min((x[j] - lo).max(f64::MIN_POSITIVE));
            }
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let gp = gradient(&xp);
            let gm = gradient(&xm);
            for i in 0..n {
                hess[i][j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        for i in 0..n {
            for j in 0..i {
                let s = 0.5 * (hess[i][j] + hess[j][i]);
                hess[i][j] = s;
                hess[j][i] = s;
            }
        }

        // Newton direction solves (-H) d = g; -H is PSD for concave objectives.
        let mut neg_h = hess
            .iter()
            .map(|row| row.iter().map(|v| -v).collect::<Vec<_>>())
            .collect::<Vec<_>>();
        let scale = neg_h
            .iter()
            .enumerate()
            .map(|(i, row)| row[i].abs())
            .fold(0.0f64, f64::max)
            .max(1.0);
        let mut direction = None;
        let mut ridge = 0.0f64;
        for _ in 0..4 {
            if ridge > 0.0 {
                for i in 0..n {
                    neg_h[i][i] += ridge;
                }
            }
            if let Some(d) = cholesky_solve(&neg_h, &g) {
                direction = Some(d);
                break;
            }
            ridge = if ridge == 0.0 { 1e-8 * scale } else { ridge * 100.0 };
        }
        let mut d = direction.unwrap_or_else(|| g.clone());
        if dot(&d, &g) <= 0.0 {
            d = g.clone();
        }

        // Backtracking Armijo line search along the projected arc.
        let mut step = 1.0f64;
        let mut accepted = false;
        let mut tried_gradient = false;
        loop {
            let mut cand = x.clone();
            for i in 0..n {
                cand[i] += step * d[i];
            }
            project(&mut cand, bounds);
            let shift: Vec<f64> = cand.iter().zip(&x).map(|(a, b)| a - b).collect();
            let predicted = dot(&g, &shift);
            let f_cand = objective(&cand);
            if f_cand.is_finite() && predicted > 0.0 && f_cand >= fx + 1e-4 * predicted {
                x = cand;
                fx = f_cand;
                accepted = true;
                break;
            }
            step *= 0.5;
            if step < 1e-16 {
                if !tried_gradient {
                    tried_gradient = true;
                    d = pg.clone();
                    step = 1.0 / (1.0 + norm(&pg));
                } else {
                    break;
                }
            }
        }
        if !accepted {
            // No direction makes measurable progress: at this floating-point
            // resolution the point is stationary.
            if pg_norm <= 1e-5 * (1.0 + fx.abs()) {
                return Ok(OptimizerReport {
                    argmax: x,
                    objective_at_argmax: fx,
                    iterations: iter,
                    converged: false,
                    gradient_norm: pg_norm,
                });
            }
            return Err(NumericError::LineSearchFailure { gradient_norm: pg_norm });
        }
    }

    Err(NumericError::MaxIterations {
        max_iterations: opts.max_iterations,
    })
}

/// Find the root of a nondecreasing function on `[lo, hi]` by bisection.
///
/// Requires `g(lo) <= 0 <= g(hi)`; stops when `|g| <= tol` or the bracket
/// width falls below `tol`. The result always lies inside `[lo, hi]`.
pub fn find_root_increasing<G: Fn(f64) -> f64>(
    g: G,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<f64, NumericError> {
    if !(lo <= hi) {
        return Err(NumericError::InvalidArgument(format!(
            "bracket out of order: lo = {lo}, hi = {hi}"
        )));
    }
    let g_lo = g(lo);
    let g_hi = g(hi);
    if !g_lo.is_finite() {
        return Err(NumericError::NonFinite { at: lo });
    }
    if !g_hi.is_finite() {
        return Err(NumericError::NonFinite { at: hi });
    }
    if g_lo > 0.0 || g_hi < 0.0 {
        return Err(NumericError::BadBracket);
    }
    if g_lo == 0.0 {
        return Ok(lo);
    }
    if g_hi == 0.0 {
        return Ok(hi);
    }

    let mut a = lo;
    let mut b = hi;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if (b - a) <= tol || mid <= a || mid >= b {
            return Ok(mid);
        }
        let gm = g(mid);
        if !gm.is_finite() {
            return Err(NumericError::NonFinite { at: mid });
        }
        if gm.abs() <= tol {
            return Ok(mid);
        }
        if gm < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// Central-difference gradient, mainly used as an oracle for analytic ones.
pub fn finite_diff_gradient<F: Fn(&[f64]) -> f64>(
    f: F,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>, NumericError> {
    if !(h > 0.0) {
        return Err(NumericError::InvalidArgument(
            "finite-difference step must be positive".into(),
        ));
    }
    let mut grad = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let mut xp = x.to_vec();
        xp[k] += h;
        let mut xm = x.to_vec();
        xm[k] -= h;
        let fp = f(&xp);
        let fm = f(&xm);
        if !fp.is_finite() {
            return Err(NumericError::NonFinite { at: xp[k] });
        }
        if !fm.is_finite() {
            return Err(NumericError::NonFinite { at: xm[k] });
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A splittable, reproducible random stream.
///
/// Two streams with equal `(master_seed, stream_index)` produce identical
/// sequences; distinct indices select statistically independent ChaCha
/// streams. Values are cheap to copy and safe to hand to worker threads, but
/// a single materialized generator must not be shared mutably.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_index: u64,
}

impl RngStream {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            stream_index: 0,
        }
    }

    pub fn with_index(master_seed: u64, stream_index: u64) -> Self {
        Self {
            master_seed,
            stream_index,
        }
    }

    /// Derive an independent child stream for the given tag.
    pub fn substream(&self, tag: u64) -> Self {
        let mixed = splitmix64(self.stream_index ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        Self {
            master_seed: self.master_seed,
            stream_index: mixed,
        }
    }

    /// Materialize the generator for this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_index);
        rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn default_spec() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    /// Brute-force midpoint-rule oracle used to pin quadrature expectations.
    fn midpoint_oracle<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        (0..n).map(|i| f(a + (i as f64 + 0.5) * h) * h).sum()
    }

    #[test]
    fn integrates_constant() {
        let v = integrate(|_| 1.0, 0.0, 2.0, &default_spec()).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn integrates_exponential() {
        let v = integrate(|t| (-t).exp(), 0.0, 1.0, &default_spec()).unwrap();
        assert!((v - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn integrates_exponential_product_against_midpoint_oracle() {
        // f(t) = e^{-t} * 5 e^{-5(1-t)}; oracle value frozen from a 1e6-point
        // midpoint rule, which resolves the first 8 digits.
        let f = |t: f64| (-t).exp() * 5.0 * (-5.0 * (1.0 - t)).exp();
        let oracle = midpoint_oracle(f, 0.0, 1.0, 1_000_000);
        assert!((oracle - 0.451_426_867_8).abs() < 1e-9);
        let v = integrate(f, 0.0, 1.0, &default_spec()).unwrap();
        assert!((v - oracle).abs() < 1e-8, "v = {v}, oracle = {oracle}");
    }

    #[test]
    fn integrate_rejects_non_finite() {
        let err = integrate(
            |t| if t > 0.5 { f64::NAN } else { 1.0 },
            0.0,
            1.0,
            &default_spec(),
        )
        .unwrap_err();
        assert!(matches!(err, NumericError::NonFinite { .. }));
    }

    #[test]
    fn integrate_reports_exhausted_budget() {
        let spec = QuadratureSpec {
            absolute_tolerance: 1e-14,
            relative_tolerance: 1e-14,
            max_subdivisions: 2,
        };
        let err = integrate(|t| (1000.0 * t).sin().abs(), 0.0, 3.0, &spec).unwrap_err();
        assert!(matches!(err, NumericError::BudgetExceeded { .. }));
    }

    #[test]
    fn integrate_is_deterministic() {
        let f = |t: f64| (t * 3.7).sin().exp();
        let a = integrate(f, 0.0, 2.0, &default_spec()).unwrap();
        let b = integrate(f, 0.0, 2.0, &default_spec()).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn breakpoints_handle_kinked_integrands() {
        // Piecewise-constant integrand with a kink at 0.5.
        let f = |t: f64| if t < 0.5 { 1.0 } else { 3.0 };
        let v = integrate_with_breakpoints(f, 0.0, 1.0, &[0.5], &default_spec()).unwrap();
        assert!((v - 2.0).abs() < 1e-10);
    }

    #[test]
    fn maximizes_quadratic() {
        let report = maximize_concave(
            |x| -(x[0] - 3.0).powi(2),
            |x| vec![-2.0 * (x[0] - 3.0)],
            &[0.0],
            &[(-10.0, 10.0)],
            &OptimOptions::default(),
        )
        .unwrap();
        assert!(report.converged);
        assert!((report.argmax[0] - 3.0).abs() < 1e-7);
    }

    #[test]
    fn maximizes_exposure_form_likelihood() {
        // 2 log x - 5 x peaks at x = 2/5.
        let report = maximize_concave(
            |x| 2.0 * x[0].ln() - 5.0 * x[0],
            |x| vec![2.0 / x[0] - 5.0],
            &[1.0],
            &[(1e-12, f64::INFINITY)],
            &OptimOptions::default(),
        )
        .unwrap();
        assert!(report.converged);
        assert!((report.argmax[0] - 0.4).abs() < 1e-8);
    }

    #[test]
    fn never_returns_below_init() {
        let objective = |x: &[f64]| -(x[0].powi(2)) - (x[1] - 1.0).powi(2);
        let report = maximize_concave(
            objective,
            |x| vec![-2.0 * x[0], -2.0 * (x[1] - 1.0)],
            &[4.0, -3.0],
            &[(-5.0, 5.0), (-5.0, 5.0)],
            &OptimOptions::default(),
        )
        .unwrap();
        assert!(report.objective_at_argmax >= objective(&[4.0, -3.0]));
    }

    #[test]
    fn respects_bounds() {
        // Unconstrained max at 3 sits outside the box.
        let report = maximize_concave(
            |x| -(x[0] - 3.0).powi(2),
            |x| vec![-2.0 * (x[0] - 3.0)],
            &[0.0],
            &[(-1.0, 1.0)],
            &OptimOptions::default(),
        )
        .unwrap();
        assert!((report.argmax[0] - 1.0).abs() < 1e-12);
        assert!(report.converged);
    }

    #[test]
    fn root_of_linear() {
        let r = find_root_increasing(|x| x - 1.0, 0.0, 2.0, 1e-12).unwrap();
        assert!((r - 1.0).abs() < 1e-10);
    }

    #[test]
    fn root_of_x_minus_exp_neg_x() {
        // Bisection oracle at 1e-12 pins x = 0.5671432904.
        let r = find_root_increasing(|x| x - (-x).exp(), 0.0, 1.0, 1e-12).unwrap();
        assert!((r - 0.567_143_290_409_783_8).abs() < 1e-9);
    }

    #[test]
    fn root_at_boundary() {
        let r = find_root_increasing(|x| x, 0.0, 1.0, 1e-12).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn root_rejects_bad_bracket() {
        let err = find_root_increasing(|x| x + 1.0, 0.0, 1.0, 1e-12).unwrap_err();
        assert!(matches!(err, NumericError::BadBracket));
    }

    #[test]
    fn root_stays_in_bracket() {
        for k in 0..20 {
            let shift = k as f64 * 0.05;
            let r = find_root_increasing(|x| (x - shift).tanh(), 0.0, 1.0, 1e-9).unwrap();
            assert!((0.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn finite_diff_simple() {
        let g = finite_diff_gradient(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
        let g = finite_diff_gradient(|x| x[0] * x[1], &[2.0, 5.0], 1e-5).unwrap();
        assert!((g[0] - 5.0).abs() < 1e-6);
        assert!((g[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn rng_streams_reproduce() {
        let s = RngStream::with_index(42, 7);
        let a: Vec<f64> = {
            let mut r = s.rng();
            (0..8).map(|_| r.gen::<f64>()).collect()
        };
        let b: Vec<f64> = {
            let mut r = s.rng();
            (0..8).map(|_| r.gen::<f64>()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn rng_substreams_differ() {
        let s = RngStream::new(42);
        let mut r1 = s.substream(1).rng();
        let mut r2 = s.substream(2).rng();
        let x1: f64 = r1.gen();
        let x2: f64 = r2.gen();
        assert_ne!(x1, x2);
        assert_eq!(s.substream(1), s.substream(1));
    }
}
