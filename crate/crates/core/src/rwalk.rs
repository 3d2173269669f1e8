//! Error and data-usage analysis of the sequential test.
//!
//! Under the central limit theorem the stagewise z-statistics of the test form
//! a Gaussian random walk whose law depends only on the standardized mean
//! `mu_std = (mu - mu0) sqrt(N - 1) / sigma_l` and the stage structure. The
//! probability of a wrong decision and the expected data fraction follow from
//! a dynamic program over a discretized `z` grid.

use crate::error::{invalid, Error, Result};
use crate::quad::{integrate, Pchip};
use crate::seqtest::SequentialTestSpec;
use crate::special::{normal_cdf, normal_sf, normal_upper_quantile};
use rand::Rng;
use rand_distr::StandardNormal;

/// Grid size used when none is specified.
pub const DEFAULT_GRID: usize = 256;
/// Profiles differing by more than this when the grid doubles are flagged.
pub const CONVERGENCE_TOL: f64 = 1e-4;

/// Cumulative data fractions and stopping bounds of a sequential test.
///
/// The last stage always has `pi = 1`; its bound is ignored because the
/// decision there is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct TestShape {
    pi: Vec<f64>,
    bounds: Vec<f64>,
}

impl TestShape {
    pub fn new(pi: Vec<f64>, bounds: Vec<f64>) -> Result<Self> {
        if pi.is_empty() {
            return Err(Error::Empty("stage grid"));
        }
        if pi.len() != bounds.len() {
            return Err(Error::DimensionMismatch { expected: pi.len(), got: bounds.len() });
        }
        if pi[0] <= 0.0 || pi.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("stage fractions must be positive and strictly increasing"));
        }
        if (pi[pi.len() - 1] - 1.0).abs() > 1e-9 {
            return Err(invalid("last stage must consume all data"));
        }
        if bounds.iter().any(|g| g.is_nan() || *g < 0.0) {
            return Err(invalid("bounds must be nonnegative"));
        }
        let early = &bounds[..bounds.len() - 1];
        let n_inf = early.iter().filter(|g| g.is_infinite()).count();
        if n_inf != 0 && n_inf != early.len() {
            return Err(invalid("bounds must be all finite or all infinite"));
        }
        let mut pi = pi;
        *pi.last_mut().expect("nonempty") = 1.0;
        Ok(Self { pi, bounds })
    }

    /// Uniform stages `pi_j = j pi1` (last one possibly partial) with bounds
    /// `G0 pi_j^(0.5 - alpha)`, `G0 = Phi^-1(1 - epsilon)`.
    pub fn uniform(pi1: f64, epsilon: f64, alpha: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&epsilon) {
            return Err(invalid(format!("epsilon {epsilon} must lie in [0, 0.5]")));
        }
        if !(0.5..=1.0).contains(&alpha) {
            return Err(invalid(format!("bound exponent {alpha} must lie in [0.5, 1]")));
        }
        let pi = uniform_stages(pi1)?;
        let bounds = bound_sequence(normal_upper_quantile(epsilon), alpha, &pi);
        Self::new(pi, bounds)
    }

    /// The stage structure a [`SequentialTestSpec`] induces on `n` datapoints.
    pub fn from_spec(spec: &SequentialTestSpec, n: usize) -> Result<Self> {
        spec.validate(n)?;
        let m = spec.batch_size;
        let j = n.div_ceil(m);
        let pi: Vec<f64> = (1..=j).map(|k| (k * m).min(n) as f64 / n as f64).collect();
        let bounds = bound_sequence(spec.base_bound(), spec.bound_alpha, &pi);
        Self::new(pi, bounds)
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }

    pub fn stages(&self) -> usize {
        self.pi.len()
    }

    fn never_stops_early(&self) -> bool {
        self.bounds[..self.bounds.len() - 1].iter().all(|g| g.is_infinite())
    }
}

/// `pi_j = j pi1` for `j < J` and `pi_J = 1`, with `J = ceil(1 / pi1)`.
pub fn uniform_stages(pi1: f64) -> Result<Vec<f64>> {
    if !(pi1 > 0.0 && pi1 <= 1.0) {
        return Err(invalid(format!("first-stage fraction {pi1} must lie in (0, 1]")));
    }
    let j = (1.0 / pi1 - 1e-9).ceil().max(1.0) as usize;
    let mut pi: Vec<f64> = (1..=j).map(|k| (k as f64 * pi1).min(1.0)).collect();
    pi[j - 1] = 1.0;
    Ok(pi)
}

/// `G_j = G0 * pi_j^(0.5 - alpha)`.
pub fn bound_sequence(g0: f64, alpha: f64, pi: &[f64]) -> Vec<f64> {
    pi.iter()
        .map(|&p| if alpha == 0.5 { g0 } else { g0 * p.powf(0.5 - alpha) })
        .collect()
}

/// Standardized mean and test shape together.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomWalkParams {
    pub mu_std: f64,
    pub shape: TestShape,
}

/// Mean and variance of `z_j` given `z_{j-1}`.
///
/// `pi_prev = 0` is the first stage, where `z_prev` is ignored.
pub fn rw_conditional_params(mu_std: f64, pi_prev: f64, pi_cur: f64, z_prev: f64) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&pi_prev) || pi_cur < pi_prev || pi_cur > 1.0 {
        return Err(invalid(format!("invalid stage fractions {pi_prev} -> {pi_cur}")));
    }
    if pi_cur == 1.0 {
        return Err(Error::FullDataStage);
    }
    if pi_cur == pi_prev {
        return Ok((z_prev, 0.0));
    }
    let step = pi_cur - pi_prev;
    let mean = mu_std * step / ((1.0 - pi_prev) * (pi_cur * (1.0 - pi_cur)).sqrt())
        + z_prev * ((pi_prev / pi_cur) * ((1.0 - pi_cur) / (1.0 - pi_prev))).sqrt();
    let var = step / (pi_cur * (1.0 - pi_prev));
    Ok((mean, var))
}

/// Error probability and data usage of a sequential test at one standardized mean.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomWalkProfile {
    pub error: f64,
    pub expected_usage: f64,
    pub usage_sd: f64,
    /// Probability of stopping at each stage.
    pub stop_mass: Vec<f64>,
    /// Largest change in `error` or `expected_usage` when the grid is doubled,
    /// if that check was run.
    pub convergence_gap: Option<f64>,
}

impl RandomWalkProfile {
    fn from_stops(error: f64, stop_mass: Vec<f64>, pi: &[f64]) -> Self {
        let usage: f64 = pi.iter().zip(&stop_mass).map(|(p, s)| p * s).sum();
        let second: f64 = pi.iter().zip(&stop_mass).map(|(p, s)| p * p * s).sum();
        Self {
            error: error.clamp(0.0, 0.5),
            expected_usage: usage,
            usage_sd: (second - usage * usage).max(0.0).sqrt(),
            stop_mass,
            convergence_gap: None,
        }
    }

    /// False when the grid-doubling check found a change above tolerance.
    pub fn converged(&self) -> bool {
        self.convergence_gap.is_none_or(|g| g <= CONVERGENCE_TOL)
    }

    /// Probability that the full data is used.
    pub fn full_data_mass(&self) -> f64 {
        *self.stop_mass.last().expect("at least one stage")
    }
}

/// Runs the dynamic program with `grid_size` points per stage.
pub fn dp_error_and_usage(params: &RandomWalkParams, grid_size: usize) -> Result<RandomWalkProfile> {
    if grid_size < 32 {
        return Err(invalid(format!("grid size {grid_size} below minimum 32")));
    }
    if !params.mu_std.is_finite() {
        return Err(invalid("standardized mean must be finite"));
    }
    Ok(dp_core(params.mu_std.abs(), &params.shape, grid_size))
}

/// As [`dp_error_and_usage`], also rerunning at twice the grid size and
/// recording the difference.
pub fn dp_error_and_usage_checked(params: &RandomWalkParams, grid_size: usize) -> Result<RandomWalkProfile> {
    let mut p = dp_error_and_usage(params, grid_size)?;
    let fine = dp_error_and_usage(params, 2 * grid_size)?;
    let gap = (p.error - fine.error)
        .abs()
        .max((p.expected_usage - fine.expected_usage).abs());
    p.convergence_gap = Some(gap);
    Ok(p)
}

/// Walk error at `mu_std = 0`.
pub fn worst_case_error(shape: &TestShape, grid_size: usize) -> Result<f64> {
    let params = RandomWalkParams { mu_std: 0.0, shape: shape.clone() };
    Ok(dp_error_and_usage(&params, grid_size)?.error)
}

/// Kernel weights of a Gaussian centered at `mean` with variance `var` on the
/// grid `lo + (c + 0.5) h`, limited to nine standard deviations. Uses a
/// multiplicative recurrence instead of one `exp` per cell.
fn kernel_into(w: &mut [f64], lo: f64, h: f64, mean: f64, var: f64) -> (usize, usize, f64) {
    let l = w.len();
    let pos = ((mean - lo) / h - 0.5).round();
    let c0 = pos.clamp(0.0, (l - 1) as f64) as usize;
    let reach = (9.0 * var.sqrt() / h).ceil() as usize + 1;
    let first = c0.saturating_sub(reach);
    let last = (c0 + reach).min(l - 1);
    let inv2v = 0.5 / var;
    let d0 = lo + (c0 as f64 + 0.5) * h - mean;
    let f0 = (-d0 * d0 * inv2v).exp();
    let q = (-h * h / var).exp();
    let mut total = f0;
    w[c0] = f0;
    // upward
    let mut f = f0;
    let mut r = (-(2.0 * d0 * h + h * h) * inv2v).exp();
    for wc in &mut w[c0 + 1..=last] {
        f *= r;
        r *= q;
        *wc = f;
        total += f;
    }
    // downward
    let mut f = f0;
    let mut r = (-(-2.0 * d0 * h + h * h) * inv2v).exp();
    for c in (first..c0).rev() {
        f *= r;
        r *= q;
        w[c] = f;
        total += f;
    }
    if !(total > 0.0) || !total.is_finite() {
        for x in &mut w[first..=last] {
            *x = 0.0;
        }
        w[c0] = 1.0;
        return (c0, c0, 1.0);
    }
    (first, last, total)
}

fn dp_core(mu: f64, shape: &TestShape, l: usize) -> RandomWalkProfile {
    let pi = &shape.pi;
    let bounds = &shape.bounds;
    let j_max = pi.len();
    let mut stops = vec![0.0; j_max];
    if j_max == 1 || shape.never_stops_early() {
        stops[j_max - 1] = 1.0;
        return RandomWalkProfile::from_stops(0.0, stops, pi);
    }
    let mut error = 0.0;

    // first stage: z_1 ~ N(m1, 1), exact cell masses
    let (m1, _) = rw_conditional_params(mu, 0.0, pi[0], 0.0).expect("valid first stage");
    let g = bounds[0];
    let lower = normal_cdf(-g - m1);
    let upper = normal_sf(g - m1);
    error += lower;
    stops[0] = lower + upper;
    let mut mass = vec![0.0; l];
    let mut h = 2.0 * g / l as f64;
    let mut lo = -g;
    if g > 0.0 {
        let mut prev = normal_cdf(lo - m1);
        for (c, slot) in mass.iter_mut().enumerate() {
            let edge = lo + (c + 1) as f64 * h;
            let cur = normal_cdf(edge - m1);
            *slot = (cur - prev).max(0.0);
            prev = cur;
        }
        // make surviving mass consistent with the exit probabilities
        let surv = (1.0 - lower - upper).max(0.0);
        let tot: f64 = mass.iter().sum();
        if tot > 0.0 {
            let k = surv / tot;
            mass.iter_mut().for_each(|x| *x *= k);
        }
    }

    let mut next = vec![0.0; l];
    let mut w = vec![0.0; l];
    for j in 1..j_max {
        let alive: f64 = mass.iter().sum();
        if alive <= 0.0 {
            break;
        }
        if j == j_max - 1 {
            stops[j] = alive;
            break;
        }
        let g = bounds[j];
        let new_h = 2.0 * g / l as f64;
        let new_lo = -g;
        let (b, var) = rw_conditional_params(mu, pi[j - 1], pi[j], 0.0).expect("valid stage");
        let a = ((pi[j - 1] / pi[j]) * ((1.0 - pi[j]) / (1.0 - pi[j - 1]))).sqrt();
        let sd = var.sqrt();
        next.iter_mut().for_each(|x| *x = 0.0);
        let mut stop_j = 0.0;
        for (c, &p) in mass.iter().enumerate().take(l) {
            if p <= 1e-300 {
                continue;
            }
            let z = lo + (c as f64 + 0.5) * h;
            let mean = a * z + b;
            let pl = normal_cdf((-g - mean) / sd);
            let pu = normal_sf((g - mean) / sd);
            error += p * pl;
            stop_j += p * (pl + pu);
            let surv = (1.0 - pl - pu).max(0.0);
            if surv <= 0.0 || g <= 0.0 {
                continue;
            }
            let (first, last, total) = kernel_into(&mut w, new_lo, new_h, mean, var);
            let k = p * surv / total;
            for t in first..=last {
                next[t] += k * w[t];
            }
        }
        stops[j] = stop_j;
        std::mem::swap(&mut mass, &mut next);
        h = new_h;
        lo = new_lo;
    }
    RandomWalkProfile::from_stops(error, stops, pi)
}

/// Monte-Carlo estimate of a [`RandomWalkProfile`] with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalProfile {
    pub error: f64,
    pub error_se: f64,
    pub expected_usage: f64,
    pub usage_se: f64,
    pub stop_mass: Vec<f64>,
    pub trials: usize,
}

/// Simulates the random walk directly and applies the stage bounds.
///
/// Errors are counted as exits below the lower bound when `mu_std >= 0` and
/// above the upper bound otherwise, matching the dynamic program.
pub fn simulate_sequential_tests<R: Rng + ?Sized>(
    params: &RandomWalkParams,
    trials: usize,
    rng: &mut R,
) -> Result<EmpiricalProfile> {
    if trials == 0 {
        return Err(invalid("need at least one trial"));
    }
    let shape = &params.shape;
    let j_max = shape.stages();
    let mu = params.mu_std;
    let mut stops = vec![0usize; j_max];
    let mut errors = 0usize;
    let mut usage_sum = 0.0;
    let mut usage_sq = 0.0;
    for _ in 0..trials {
        let mut z = 0.0;
        let mut prev = 0.0;
        let mut stage = j_max - 1;
        for j in 0..j_max - 1 {
            let (m, v) = rw_conditional_params(mu, prev, shape.pi[j], z)?;
            let e: f64 = rng.sample(StandardNormal);
            z = m + v.sqrt() * e;
            prev = shape.pi[j];
            let g = shape.bounds[j];
            if z.abs() > g {
                if (mu >= 0.0 && z < -g) || (mu < 0.0 && z > g) {
                    errors += 1;
                }
                stage = j;
                break;
            }
        }
        stops[stage] += 1;
        let p = shape.pi[stage];
        usage_sum += p;
        usage_sq += p * p;
    }
    let n = trials as f64;
    let err = errors as f64 / n;
    let usage = usage_sum / n;
    let usage_var = (usage_sq / n - usage * usage).max(0.0);
    Ok(EmpiricalProfile {
        error: err,
        error_se: (err * (1.0 - err) / n).sqrt(),
        expected_usage: usage,
        usage_se: (usage_var / n).sqrt(),
        stop_mass: stops.iter().map(|&c| c as f64 / n).collect(),
        trials,
    })
}

/// Error and usage as a function of the standardized mean.
pub trait ErrorCurve {
    /// Returns `(error, expected_usage)` at `mu_std`.
    fn eval(&self, mu_std: f64) -> (f64, f64);
}

/// Runs the dynamic program at every evaluation.
#[derive(Debug, Clone)]
pub struct DirectDp {
    pub shape: TestShape,
    pub grid_size: usize,
}

impl ErrorCurve for DirectDp {
    fn eval(&self, mu_std: f64) -> (f64, f64) {
        let p = dp_core(mu_std.abs(), &self.shape, self.grid_size);
        (p.error, p.expected_usage)
    }
}

/// Error and usage tabulated on `|mu_std|` knots and interpolated by PCHIP.
///
/// The knot range is extended until the error falls below `1e-12`; past the
/// last knot the error is taken as zero.
#[derive(Debug, Clone)]
pub struct TabulatedCurve {
    error: Pchip,
    usage: Pchip,
    max_abs: f64,
    tail_usage: f64,
}

impl TabulatedCurve {
    pub const KNOTS: usize = 96;
    const TAIL_ERROR: f64 = 1e-12;

    pub fn build(shape: &TestShape, grid_size: usize) -> Self {
        let mut range = 16.0;
        while range < 1e4 && dp_core(range, shape, grid_size).error > Self::TAIL_ERROR {
            range *= 2.0;
        }
        let k = Self::KNOTS;
        let xs: Vec<f64> = (0..=k).map(|i| range * (i as f64 / k as f64).powi(2)).collect();
        let profiles: Vec<RandomWalkProfile> = xs.iter().map(|&x| dp_core(x, shape, grid_size)).collect();
        let err: Vec<f64> = profiles.iter().map(|p| p.error).collect();
        let use_: Vec<f64> = profiles.iter().map(|p| p.expected_usage).collect();
        let tail_usage = *use_.last().expect("knots");
        Self {
            error: Pchip::new(xs.clone(), err),
            usage: Pchip::new(xs, use_),
            max_abs: range,
            tail_usage,
        }
    }
}

impl ErrorCurve for TabulatedCurve {
    fn eval(&self, mu_std: f64) -> (f64, f64) {
        let a = mu_std.abs();
        if a > self.max_abs {
            return (0.0, self.tail_usage);
        }
        (self.error.eval(a).clamp(0.0, 0.5), self.usage.eval(a))
    }
}

/// Acceptance-probability error of the sequential test for one proposal pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaResult {
    /// `P_a,eps - P_a`.
    pub delta: f64,
    pub p_a_exact: f64,
    pub p_a_approx: f64,
    /// `E_u[E]`, the error before cancellation.
    pub abs_error_expectation: f64,
    /// `E_u[usage]`.
    pub expected_usage: f64,
    pub quadrature_error: f64,
}

impl DeltaResult {
    pub fn converged(&self) -> bool {
        self.quadrature_error <= CONVERGENCE_TOL
    }
}

const QUAD_TOL: f64 = 1e-8;
const QUAD_MAX_INTERVALS: usize = 400;

/// Integrates the per-`u` error over `u`, with the prior and proposal terms
/// absorbed into `mu` so that `mu0(u) = ln(u) / n`.
pub fn delta_acceptance<C: ErrorCurve + ?Sized>(curve: &C, mu: f64, sigma_l: f64, n: usize) -> Result<DeltaResult> {
    if !(sigma_l > 0.0) || !sigma_l.is_finite() {
        return Err(invalid(format!("sigma_l = {sigma_l} must be positive")));
    }
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, have: n });
    }
    if !mu.is_finite() {
        return Err(invalid("mu must be finite"));
    }
    let nf = n as f64;
    let scale = (nf - 1.0).sqrt() / sigma_l;
    let mu_std = |u: f64| (mu - u.ln() / nf) * scale;
    let p_a = (nf * mu).exp().min(1.0);

    let mut usage_acc = 0.0;
    let mut err_acc = 0.0;
    let mut e_lo = 0.0;
    let mut e_hi = 0.0;
    for (a, b, sign) in [(0.0, p_a, -1.0), (p_a, 1.0, 1.0)] {
        if b <= a {
            continue;
        }
        let q = integrate(
            |u| if u <= 0.0 { 0.0 } else { curve.eval(mu_std(u)).0 },
            a,
            b,
            QUAD_TOL,
            QUAD_MAX_INTERVALS,
        );
        let qu = integrate(
            |u| if u <= 0.0 { curve.eval(1e300).1 } else { curve.eval(mu_std(u)).1 },
            a,
            b,
            QUAD_TOL,
            QUAD_MAX_INTERVALS,
        );
        err_acc += q.abs_error + qu.abs_error;
        usage_acc += qu.value;
        if sign < 0.0 {
            e_lo = q.value;
        } else {
            e_hi = q.value;
        }
    }
    let delta = e_hi - e_lo;
    Ok(DeltaResult {
        delta,
        p_a_exact: p_a,
        p_a_approx: p_a + delta,
        abs_error_expectation: e_hi + e_lo,
        expected_usage: usage_acc,
        quadrature_error: err_acc,
    })
}

/// One row of an analysis table.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisRow {
    pub mu_std: f64,
    pub error_dp: f64,
    pub usage_dp: f64,
    pub error_mc: f64,
    pub error_se: f64,
    pub usage_mc: f64,
    pub usage_se: f64,
}

/// DP and Monte-Carlo profiles over a grid of standardized means.
pub fn analysis_table<R: Rng + ?Sized>(
    shape: &TestShape,
    mu_grid: &[f64],
    grid_size: usize,
    trials: usize,
    rng: &mut R,
) -> Result<Vec<AnalysisRow>> {
    mu_grid
        .iter()
        .map(|&mu_std| {
            let params = RandomWalkParams { mu_std, shape: shape.clone() };
            let dp = dp_error_and_usage(&params, grid_size)?;
            let mc = simulate_sequential_tests(&params, trials, rng)?;
            Ok(AnalysisRow {
                mu_std,
                error_dp: dp.error,
                usage_dp: dp.expected_usage,
                error_mc: mc.error,
                error_se: mc.error_se,
                usage_mc: mc.expected_usage,
                usage_se: mc.usage_se,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Moments of `(z_1, .., z_J)` built from the covariance of the sampled
    /// datapoints: `Cov(x_i, x_i) = s2`, `Cov(x_i, x_k) = -s2 / (N - 1)`.
    fn z_moments(n: usize, sizes: &[usize], mu_std: f64) -> (DVector<f64>, DMatrix<f64>) {
        let s2: f64 = 1.0;
        let nf = n as f64;
        let diff = mu_std * s2.sqrt() / (nf - 1.0).sqrt();
        let cov_x = DMatrix::from_fn(n, n, |i, k| if i == k { s2 } else { -s2 / (nf - 1.0) });
        let mut q = DMatrix::zeros(sizes.len(), n);
        for (r, &m) in sizes.iter().enumerate() {
            let mf = m as f64;
            let sd = (s2 / mf * (1.0 - (mf - 1.0) / (nf - 1.0))).sqrt();
            for c in 0..m {
                q[(r, c)] = 1.0 / (mf * sd);
            }
        }
        let mean = &q * DVector::from_element(n, diff);
        let cov = &q * cov_x * q.transpose();
        (mean, cov)
    }

    #[test]
    fn conditional_matches_covariance_construction() {
        let n = 50;
        let mu_std = 0.7;
        for sizes in [vec![10, 20], vec![5, 15, 35]] {
            let (mean, cov) = z_moments(n, &sizes, mu_std);
            let pis: Vec<f64> = sizes.iter().map(|&m| m as f64 / n as f64).collect();
            for j in 1..sizes.len() {
                // Gaussian conditioning of z_j on all earlier z
                let k = j;
                let c11 = cov.view((0, 0), (k, k)).into_owned();
                let c21 = cov.view((j, 0), (1, k)).into_owned();
                let inv = c11.try_inverse().unwrap();
                let coef = &c21 * &inv;
                let cvar = cov[(j, j)] - (&coef * c21.transpose())[(0, 0)];
                // Markov: only z_{j-1} matters
                for i in 0..k - 1 {
                    assert!(coef[(0, i)].abs() < 1e-10);
                }
                let z_prev = 0.37;
                let mut z = DVector::from_element(k, 0.0);
                z[k - 1] = z_prev;
                let cmean = mean[j] + (&coef * (z - mean.rows(0, k)))[(0, 0)];
                let (m, v) = rw_conditional_params(mu_std, pis[j - 1], pis[j], z_prev).unwrap();
                assert!((m - cmean).abs() < 1e-10, "{m} vs {cmean}");
                assert!((v - cvar).abs() < 1e-10, "{v} vs {cvar}");
            }
            let (m1, v1) = rw_conditional_params(mu_std, 0.0, pis[0], 9.0).unwrap();
            assert!((m1 - mean[0]).abs() < 1e-10 && (v1 - cov[(0, 0)]).abs() < 1e-10);
        }
    }

    #[test]
    fn conditional_examples() {
        let (m, v) = rw_conditional_params(0.0, 0.0, 0.3, 5.0).unwrap();
        assert_eq!((m, v), (0.0, 1.0));
        let (m, v) = rw_conditional_params(1.0, 0.4, 0.4, 1.3).unwrap();
        assert_eq!((m, v), (1.3, 0.0));
        assert_eq!(rw_conditional_params(1.0, 0.4, 1.0, 0.0), Err(Error::FullDataStage));
        // mu_std = 2, 0.1 -> 0.2, z = 1
        let (m, v) = rw_conditional_params(2.0, 0.1, 0.2, 1.0).unwrap();
        let em = 2.0 * 0.1 / (0.9 * (0.2f64 * 0.8).sqrt()) + (0.5f64 * 0.8 / 0.9).sqrt();
        assert!((m - em).abs() < 1e-14);
        assert!((v - 0.1 / (0.2 * 0.9)).abs() < 1e-14);
    }

    #[test]
    fn bound_examples() {
        let pi = uniform_stages(0.25).unwrap();
        assert_eq!(pi, vec![0.25, 0.5, 0.75, 1.0]);
        assert_eq!(bound_sequence(1.5, 0.5, &pi), vec![1.5; 4]);
        let of = bound_sequence(1.5, 1.0, &pi);
        assert!((of[0] - 3.0).abs() < 1e-15);
        assert_eq!(of[3], 1.5);
        assert_eq!(uniform_stages(0.3).unwrap(), vec![0.3, 0.6, 0.8999999999999999, 1.0]);
        assert_eq!(uniform_stages(0.1).unwrap().len(), 10);
    }

    #[test]
    fn single_stage_is_exact() {
        let shape = TestShape::uniform(1.0, 0.05, 0.5).unwrap();
        let p = dp_error_and_usage(&RandomWalkParams { mu_std: 0.3, shape }, 64).unwrap();
        assert_eq!(p.error, 0.0);
        assert_eq!(p.expected_usage, 1.0);
    }

    #[test]
    fn infinite_bounds_never_stop() {
        let shape = TestShape::uniform(0.1, 0.0, 0.5).unwrap();
        let p = dp_error_and_usage(&RandomWalkParams { mu_std: 0.0, shape: shape.clone() }, 64).unwrap();
        assert_eq!((p.error, p.expected_usage), (0.0, 1.0));
        assert_eq!(worst_case_error(&shape, 64).unwrap(), 0.0);
    }

    #[test]
    fn zero_bound_stops_at_first_stage() {
        let shape = TestShape::uniform(0.2, 0.5, 0.5).unwrap();
        let p = dp_error_and_usage(&RandomWalkParams { mu_std: 1.0, shape }, 64).unwrap();
        assert!((p.stop_mass[0] - 1.0).abs() < 1e-15);
        let m1 = (0.2f64 / 0.8).sqrt();
        assert!((p.error - normal_cdf(-m1)).abs() < 1e-15);
    }

    #[test]
    fn worst_case_identity() {
        for (pi1, eps, alpha) in [(0.1, 0.05, 0.5), (0.05, 0.01, 0.5), (0.07, 0.1, 0.8)] {
            let shape = TestShape::uniform(pi1, eps, alpha).unwrap();
            let p = dp_error_and_usage(&RandomWalkParams { mu_std: 0.0, shape }, 128).unwrap();
            assert!((p.error - (1.0 - p.full_data_mass()) / 2.0).abs() < 1e-12);
            assert!((p.stop_mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mirror_symmetry() {
        let shape = TestShape::uniform(0.1, 0.05, 0.65).unwrap();
        let a = dp_error_and_usage(&RandomWalkParams { mu_std: 1.3, shape: shape.clone() }, 64).unwrap();
        let b = dp_error_and_usage(&RandomWalkParams { mu_std: -1.3, shape }, 64).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dp_agrees_with_simulation() {
        let shape = TestShape::uniform(0.1, 0.05, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for mu_std in [0.0, 0.5, 2.0] {
            let params = RandomWalkParams { mu_std, shape: shape.clone() };
            let dp = dp_error_and_usage(&params, 256).unwrap();
            let mc = simulate_sequential_tests(&params, 40_000, &mut rng).unwrap();
            let se_e = mc.error_se.max((dp.error * (1.0 - dp.error) / 4e4).sqrt());
            let se_u = mc.usage_se.max(dp.usage_sd / 200.0);
            assert!((dp.error - mc.error).abs() < 4.0 * se_e, "{mu_std}: {} vs {}", dp.error, mc.error);
            assert!((dp.expected_usage - mc.expected_usage).abs() < 4.0 * se_u);
        }
    }

    #[test]
    fn grid_doubling_converges() {
        let shape = TestShape::uniform(0.05, 0.05, 0.5).unwrap();
        let p = dp_error_and_usage_checked(&RandomWalkParams { mu_std: 1.0, shape }, 256).unwrap();
        assert!(p.converged(), "{:?}", p.convergence_gap);
    }

    #[test]
    fn large_mean_decides_at_first_stage() {
        let shape = TestShape::uniform(0.05, 0.05, 0.5).unwrap();
        let params = RandomWalkParams { mu_std: 25.0, shape };
        let mc = simulate_sequential_tests(&params, 2000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(mc.error, 0.0);
        assert!((mc.expected_usage - 0.05).abs() < 1e-12);
    }

    #[test]
    fn exact_test_has_zero_delta() {
        let shape = TestShape::uniform(1.0, 0.05, 0.5).unwrap();
        let curve = DirectDp { shape, grid_size: 64 };
        let d = delta_acceptance(&curve, -1e-4, 0.5, 1000).unwrap();
        assert_eq!(d.delta, 0.0);
        assert!((d.p_a_exact - (-0.1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn delta_vanishes_for_large_mean() {
        let shape = TestShape::uniform(0.1, 0.05, 0.5).unwrap();
        let curve = TabulatedCurve::build(&shape, 128);
        let d = delta_acceptance(&curve, 0.5, 1.0, 1000).unwrap();
        assert_eq!(d.p_a_exact, 1.0);
        assert!(d.delta.abs() < 1e-6);
    }

    #[test]
    fn tabulated_matches_direct() {
        let shape = TestShape::uniform(0.1, 0.05, 0.8).unwrap();
        let tab = TabulatedCurve::build(&shape, 128);
        let direct = DirectDp { shape, grid_size: 128 };
        for x in [0.0, 0.13, 0.77, 1.9, 3.3, 7.0, -2.2] {
            let (a, ua) = tab.eval(x);
            let (b, ub) = direct.eval(x);
            assert!((a - b).abs() < 2e-5, "{x}: {a} vs {b}");
            assert!((ua - ub).abs() < 2e-5, "{x}: {ua} vs {ub}");
        }
    }

    #[test]
    fn tabulated_delta_matches_direct_delta() {
        let shape = TestShape::uniform(0.2, 0.1, 0.5).unwrap();
        let tab = TabulatedCurve::build(&shape, 64);
        let direct = DirectDp { shape, grid_size: 64 };
        let (mu, sigma, n) = (-0.5f64.ln() / -1000.0, 3.0, 1000);
        let a = delta_acceptance(&tab, mu, sigma, n).unwrap();
        let b = delta_acceptance(&direct, mu, sigma, n).unwrap();
        assert!((a.delta - b.delta).abs() < 1e-5, "{a:?} {b:?}");
        assert!(a.delta.abs() <= a.abs_error_expectation);
    }

    #[test]
    fn shape_from_spec() {
        let spec = SequentialTestSpec::new(30, 0.05);
        let s = TestShape::from_spec(&spec, 100).unwrap();
        assert_eq!(s.pi(), &[0.3, 0.6, 0.9, 1.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn worst_case_dominates(pi1 in 0.05f64..0.5, eps in 0.01f64..0.3, mu in 0.0f64..6.0) {
            let shape = TestShape::uniform(pi1, eps, 0.5).unwrap();
            let e0 = dp_error_and_usage(&RandomWalkParams { mu_std: 0.0, shape: shape.clone() }, 64).unwrap();
            let e = dp_error_and_usage(&RandomWalkParams { mu_std: mu, shape }, 64).unwrap();
            prop_assert!(e.error <= e0.error + 1e-9);
            prop_assert!(e.expected_usage <= e0.expected_usage + 1e-9);
            prop_assert!((e.stop_mass.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
