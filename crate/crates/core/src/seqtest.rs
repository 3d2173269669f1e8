//! Sequential approximate Metropolis-Hastings test.
//!
//! The accept/reject decision `mean(l) > mu0` is made from a growing random
//! subset of the per-datapoint log-likelihood differences `l_i`, stopping as
//! soon as a t-test is confident at level `epsilon`.

use crate::error::{invalid, Error, Result};
use crate::special::{normal_sf, normal_upper_quantile, student_t_sf, ExactSum};
use rand::Rng;

/// Lazy view of the `N` log-likelihood differences for one proposal pair.
pub trait LogLikDiffPopulation {
    fn size(&self) -> usize;

    fn eval(&self, index: usize) -> f64;

    /// Appends the values for `indices` to `out`. Override when batching is cheaper.
    fn eval_batch(&self, indices: &[usize], out: &mut Vec<f64>) {
        out.extend(indices.iter().map(|&i| self.eval(i)));
    }
}

impl<P: LogLikDiffPopulation + ?Sized> LogLikDiffPopulation for &P {
    fn size(&self) -> usize {
        (**self).size()
    }
    fn eval(&self, index: usize) -> f64 {
        (**self).eval(index)
    }
    fn eval_batch(&self, indices: &[usize], out: &mut Vec<f64>) {
        (**self).eval_batch(indices, out)
    }
}

/// A population backed by precomputed values.
#[derive(Debug, Clone, PartialEq)]
pub struct VecPopulation(pub Vec<f64>);

impl LogLikDiffPopulation for VecPopulation {
    fn size(&self) -> usize {
        self.0.len()
    }
    fn eval(&self, index: usize) -> f64 {
        self.0[index]
    }
    fn eval_batch(&self, indices: &[usize], out: &mut Vec<f64>) {
        out.extend(indices.iter().map(|&i| self.0[i]));
    }
}

/// Knobs of the sequential test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequentialTestSpec {
    pub batch_size: usize,
    /// Per-stage error level. Zero disables early stopping entirely.
    pub epsilon: f64,
    /// Exponent of the bound family `G_j = G0 * pi_j^(0.5 - alpha)`.
    pub bound_alpha: f64,
}

impl SequentialTestSpec {
    /// Constant-bound test (`alpha = 0.5`).
    pub fn new(batch_size: usize, epsilon: f64) -> Self {
        Self { batch_size, epsilon, bound_alpha: 0.5 }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.bound_alpha = alpha;
        self
    }

    /// Checks the spec against a population of size `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::Empty("population"));
        }
        if self.batch_size == 0 || self.batch_size > n {
            return Err(invalid(format!(
                "batch size {} must lie in [1, {n}]",
                self.batch_size
            )));
        }
        if !(0.0..=0.5).contains(&self.epsilon) {
            return Err(invalid(format!("epsilon {} must lie in [0, 0.5]", self.epsilon)));
        }
        if !(0.5..=1.0).contains(&self.bound_alpha) {
            return Err(invalid(format!(
                "bound exponent {} must lie in [0.5, 1]",
                self.bound_alpha
            )));
        }
        Ok(())
    }

    pub fn pi1(&self, n: usize) -> f64 {
        self.batch_size as f64 / n as f64
    }

    /// `G0 = Phi^-1(1 - epsilon)`; infinite when `epsilon = 0`.
    pub fn base_bound(&self) -> f64 {
        normal_upper_quantile(self.epsilon)
    }

    /// Threshold on `delta` after consuming a fraction `pi` of the data.
    pub fn stage_epsilon(&self, pi: f64) -> f64 {
        if self.bound_alpha == 0.5 || self.epsilon == 0.0 {
            self.epsilon
        } else {
            normal_sf(self.base_bound() * pi.powf(0.5 - self.bound_alpha))
        }
    }
}

/// Outcome of one sequential test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestDecision {
    pub accept: bool,
    pub n_used: usize,
    pub stages: usize,
    pub final_delta: f64,
    pub lbar: f64,
}

/// Running mean and variance of the consumed `l_i`.
///
/// Sums are taken of deviations from the first value, so constant input
/// gives exactly zero spread. The mean sum is compensated (Neumaier).
/// Order-independent means at exhaustion are taken separately from the
/// stored values.
#[derive(Debug, Clone, Default)]
pub struct RunningMoments {
    n: usize,
    shift: f64,
    sum: f64,
    comp: f64,
    sum_sq: f64,
}

impl RunningMoments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        if self.n == 0 {
            self.shift = x;
        }
        self.n += 1;
        let d = x - self.shift;
        let t = self.sum + d;
        if self.sum.abs() >= d.abs() {
            self.comp += (self.sum - t) + d;
        } else {
            self.comp += (d - t) + self.sum;
        }
        self.sum = t;
        self.sum_sq += d * d;
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lbar(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.shift + (self.sum + self.comp) / self.n as f64
        }
    }

    fn centered_sum_sq(&self) -> f64 {
        let s = self.sum + self.comp;
        (self.sum_sq - s * s / self.n as f64).max(0.0)
    }

    /// Mean of squares, reconstructed from the mean and centered sum of squares.
    pub fn lsqbar(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let m = self.lbar();
        self.centered_sum_sq() / self.n as f64 + m * m
    }

    /// Sample variance with the `n - 1` denominator.
    pub fn sample_variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        self.centered_sum_sq() / (self.n - 1) as f64
    }
}

/// Standard error of the mean of a without-replacement sample, including the
/// finite population correction.
pub fn estimate_std(moments: &RunningMoments, population: usize) -> Result<f64> {
    let n = moments.n();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, have: n });
    }
    if n > population {
        return Err(invalid(format!("consumed {n} of a population of {population}")));
    }
    if n == population {
        return Ok(0.0);
    }
    let s_l = moments.sample_variance().sqrt();
    let fpc = 1.0 - (n - 1) as f64 / (population - 1) as f64;
    Ok(s_l / (n as f64).sqrt() * fpc.sqrt())
}

pub fn t_statistic(lbar: f64, mu0: f64, s: f64) -> Result<f64> {
    if s == 0.0 {
        return Err(Error::DegenerateScale);
    }
    if !(s > 0.0) {
        return Err(invalid(format!("standard error {s} must be positive")));
    }
    Ok((lbar - mu0) / s)
}

/// Per-datapoint threshold `(ln u + log_prior_ratio - log_proposal_ratio) / N`.
///
/// `log_prior_ratio = ln p(theta) - ln p(theta')` and
/// `log_proposal_ratio = ln q(theta|theta') - ln q(theta'|theta)` (reverse over
/// forward), so the result is `ln[u p(theta) q(theta'|theta) / (p(theta') q(theta|theta'))] / N`.
pub fn compute_mu0(u: f64, log_prior_ratio: f64, log_proposal_ratio: f64, n: usize) -> Result<f64> {
    if !(u > 0.0 && u <= 1.0) {
        return Err(invalid(format!("u = {u} must lie in (0, 1]")));
    }
    if !log_prior_ratio.is_finite() || !log_proposal_ratio.is_finite() {
        return Err(invalid("prior and proposal log-ratios must be finite"));
    }
    if n == 0 {
        return Err(Error::Empty("population"));
    }
    Ok((u.ln() + log_prior_ratio - log_proposal_ratio) / n as f64)
}

/// Mean of all `l_i`, correctly rounded before the division.
pub fn population_mean<P: LogLikDiffPopulation + ?Sized>(pop: &P) -> Result<f64> {
    let n = pop.size();
    if n == 0 {
        return Err(Error::Empty("population"));
    }
    let mut sum = ExactSum::new();
    let idx: Vec<usize> = (0..n).collect();
    let mut vals = Vec::with_capacity(n);
    pop.eval_batch(&idx, &mut vals);
    for (i, &v) in vals.iter().enumerate() {
        check_finite(i, v)?;
        sum.add(v);
    }
    Ok(sum.value() / n as f64)
}

/// The exact MH decision: accept iff the full-data mean exceeds `mu0`.
pub fn exact_mh_test<P: LogLikDiffPopulation + ?Sized>(pop: &P, mu0: f64) -> Result<bool> {
    Ok(population_mean(pop)? > mu0)
}

fn check_finite(index: usize, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLogLik { index, value })
    }
}

/// Reusable buffers for repeated tests on populations of the same size.
///
/// The permutation is left as the identity between tests, so a test's index
/// order depends only on the random source.
#[derive(Debug, Default, Clone)]
pub struct TestWorkspace {
    perm: Vec<usize>,
    swaps: Vec<(usize, usize)>,
    values: Vec<f64>,
}

impl TestWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    fn prepare(&mut self, n: usize) {
        if self.perm.len() != n {
            self.perm = (0..n).collect();
        }
        self.swaps.clear();
    }

    fn restore(&mut self) {
        for &(a, b) in self.swaps.iter().rev() {
            self.perm.swap(a, b);
        }
        self.swaps.clear();
    }
}

/// Runs the sequential test with a fresh workspace.
pub fn sequential_mh_test<P, R>(
    pop: &P,
    mu0: f64,
    spec: &SequentialTestSpec,
    rng: &mut R,
) -> Result<TestDecision>
where
    P: LogLikDiffPopulation + ?Sized,
    R: Rng + ?Sized,
{
    sequential_mh_test_in(&mut TestWorkspace::new(), pop, mu0, spec, rng)
}

/// Runs the sequential test, drawing the without-replacement order by a lazy
/// Fisher-Yates shuffle.
pub fn sequential_mh_test_in<P, R>(
    ws: &mut TestWorkspace,
    pop: &P,
    mu0: f64,
    spec: &SequentialTestSpec,
    rng: &mut R,
) -> Result<TestDecision>
where
    P: LogLikDiffPopulation + ?Sized,
    R: Rng + ?Sized,
{
    let n = pop.size();
    spec.validate(n)?;
    ws.prepare(n);
    let mut values = std::mem::take(&mut ws.values);
    let result = run_stages(pop, mu0, spec, &mut values, |start, end, out: &mut Vec<usize>| {
        for k in start..end {
            let j = rng.random_range(k..n);
            if j != k {
                ws.perm.swap(k, j);
                ws.swaps.push((k, j));
            }
        }
        out.clear();
        out.extend_from_slice(&ws.perm[start..end]);
    });
    ws.restore();
    ws.values = values;
    result
}

/// Runs the sequential test consuming datapoints in the given order.
///
/// `order` must be a permutation of `0..N`; used for exhaustive analysis over
/// all orders.
pub fn sequential_mh_test_ordered<P>(
    pop: &P,
    mu0: f64,
    spec: &SequentialTestSpec,
    order: &[usize],
) -> Result<TestDecision>
where
    P: LogLikDiffPopulation + ?Sized,
{
    let n = pop.size();
    spec.validate(n)?;
    if order.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: order.len() });
    }
    let mut values = Vec::new();
    run_stages(pop, mu0, spec, &mut values, |start, end, out: &mut Vec<usize>| {
        out.clear();
        out.extend_from_slice(&order[start..end]);
    })
}

fn run_stages<P, F>(
    pop: &P,
    mu0: f64,
    spec: &SequentialTestSpec,
    values: &mut Vec<f64>,
    mut next_batch: F,
) -> Result<TestDecision>
where
    P: LogLikDiffPopulation + ?Sized,
    F: FnMut(usize, usize, &mut Vec<usize>),
{
    let n_total = pop.size();
    let mut moments = RunningMoments::new();
    let mut idx = Vec::with_capacity(spec.batch_size);
    let mut stages = 0;
    values.clear();
    loop {
        let start = moments.n();
        let end = (start + spec.batch_size).min(n_total);
        next_batch(start, end, &mut idx);
        pop.eval_batch(&idx, values);
        for (&i, &v) in idx.iter().zip(&values[start..]) {
            check_finite(i, v)?;
            moments.push(v);
        }
        stages += 1;
        let n = moments.n();
        let lbar = if n == n_total {
            values.iter().copied().collect::<ExactSum>().value() / n as f64
        } else {
            moments.lbar()
        };
        let decide = |delta: f64| TestDecision {
            accept: lbar > mu0,
            n_used: n,
            stages,
            final_delta: delta,
            lbar,
        };
        if n == n_total {
            return Ok(decide(0.0));
        }
        if n < 2 {
            continue;
        }
        let s = estimate_std(&moments, n_total)?;
        if s == 0.0 {
            if spec.epsilon > 0.0 {
                return Ok(decide(0.0));
            }
            continue;
        }
        let t = t_statistic(lbar, mu0, s)?;
        let stage_eps = spec.stage_epsilon(n as f64 / n_total as f64);
        // The t tail dominates the normal tail, so this rules out stopping cheaply.
        if normal_sf(t.abs()) >= stage_eps {
            continue;
        }
        let delta = student_t_sf(t.abs(), (n - 1) as f64);
        if delta < stage_eps {
            return Ok(decide(delta));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn moments_of(xs: &[f64]) -> RunningMoments {
        let mut m = RunningMoments::new();
        for &x in xs {
            m.push(x);
        }
        m
    }

    #[test]
    fn mu0_examples() {
        assert_eq!(compute_mu0(1.0, 0.0, 0.0, 10).unwrap(), 0.0);
        let v = compute_mu0((-1.0f64).exp(), 0.0, 0.0, 1).unwrap();
        assert!((v + 1.0).abs() < 1e-15);
        let v = compute_mu0(0.3, 0.7, -0.2, 100).unwrap();
        let expect = (0.3f64.ln() + 0.9) / 100.0;
        assert!((v - expect).abs() < 1e-16);
        assert!(compute_mu0(0.5, f64::NAN, 0.0, 3).is_err());
        assert!(compute_mu0(0.5, 0.0, f64::INFINITY, 3).is_err());
        assert!(compute_mu0(0.0, 0.0, 0.0, 3).is_err());
    }

    #[test]
    fn std_examples() {
        assert_eq!(estimate_std(&moments_of(&[1.0; 4]), 50).unwrap(), 0.0);
        assert_eq!(estimate_std(&moments_of(&[0.3, 1.0, 7.0]), 3).unwrap(), 0.0);
        let s = estimate_std(&moments_of(&[0.0, 2.0]), 5).unwrap();
        assert!((s - 3f64.sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(
            estimate_std(&moments_of(&[1.0]), 5),
            Err(Error::InsufficientData { needed: 2, have: 1 })
        );
    }

    #[test]
    fn t_examples() {
        assert_eq!(t_statistic(0.4, 0.4, 0.1).unwrap(), 0.0);
        assert!((t_statistic(0.5, 0.2, 0.1).unwrap() - 3.0).abs() < 1e-12);
        assert!((t_statistic(1.0 + 0.6, 1.0, 0.3).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(t_statistic(1.0, 0.0, 0.0), Err(Error::DegenerateScale));
    }

    #[test]
    fn exact_examples() {
        let p = VecPopulation(vec![1.0, 2.0, 3.0]);
        assert!(exact_mh_test(&p, 1.9).unwrap());
        assert!(!exact_mh_test(&p, 2.0).unwrap());
    }

    #[test]
    fn constant_population_decides_in_one_stage() {
        let p = VecPopulation(vec![1.0; 10]);
        let spec = SequentialTestSpec::new(2, 0.05);
        let d = sequential_mh_test(&p, 0.0, &spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(d.accept);
        assert_eq!(d.stages, 1);
        assert_eq!(d.n_used, 2);
    }

    #[test]
    fn tie_rejects() {
        let p = VecPopulation(vec![0.5; 6]);
        let spec = SequentialTestSpec::new(3, 0.05);
        let d = sequential_mh_test(&p, 0.5, &spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(!d.accept);
    }

    #[test]
    fn non_finite_values_are_reported() {
        let p = VecPopulation(vec![0.0, f64::NAN, 1.0]);
        let spec = SequentialTestSpec::new(3, 0.05);
        let r = sequential_mh_test(&p, 0.0, &spec, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(Error::NonFiniteLogLik { index: 1, .. })));
    }

    #[test]
    fn spec_validation() {
        assert!(SequentialTestSpec::new(0, 0.1).validate(10).is_err());
        assert!(SequentialTestSpec::new(11, 0.1).validate(10).is_err());
        assert!(SequentialTestSpec::new(5, 0.6).validate(10).is_err());
        assert!(SequentialTestSpec::new(5, 0.1).with_alpha(0.4).validate(10).is_err());
        assert!(SequentialTestSpec::new(10, 0.5).with_alpha(1.0).validate(10).is_ok());
    }

    #[test]
    fn workspace_is_restored() {
        let p = VecPopulation((0..50).map(|i| (i as f64 * 0.37).sin()).collect());
        let spec = SequentialTestSpec::new(7, 0.2);
        let mut ws = TestWorkspace::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            sequential_mh_test_in(&mut ws, &p, 0.01, &spec, &mut rng).unwrap();
            assert!(ws.perm.iter().enumerate().all(|(i, &v)| i == v));
        }
    }

    #[test]
    fn stage_epsilon_reduces_to_epsilon_at_half() {
        let spec = SequentialTestSpec::new(5, 0.05);
        assert_eq!(spec.stage_epsilon(0.1), 0.05);
        let of = spec.with_alpha(1.0);
        // bound doubles at pi = 1/4
        let g = normal_upper_quantile(of.stage_epsilon(0.25));
        assert!((g - 2.0 * spec.base_bound()).abs() < 1e-9);
    }

    fn population() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-3.0f64..3.0, 2..120)
    }

    proptest! {
        #[test]
        fn exhaustion_matches_exact(xs in population(), mu0 in -1.0f64..1.0, m in 1usize..40, seed: u64) {
            let p = VecPopulation(xs);
            let m = m.min(p.size());
            let spec = SequentialTestSpec::new(m, 0.0);
            let d = sequential_mh_test(&p, mu0, &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(d.n_used, p.size());
            prop_assert_eq!(d.accept, exact_mh_test(&p, mu0).unwrap());
            prop_assert_eq!(d.lbar, population_mean(&p).unwrap());
        }

        #[test]
        fn deterministic_per_seed(xs in population(), mu0 in -0.5f64..0.5, seed: u64) {
            let p = VecPopulation(xs);
            let spec = SequentialTestSpec::new(1.max(p.size() / 8), 0.1);
            let a = sequential_mh_test(&p, mu0, &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = sequential_mh_test(&p, mu0, &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn usage_monotone_in_epsilon(xs in population(), mu0 in -0.5f64..0.5, seed: u64, alpha in 0.5f64..1.0) {
            let p = VecPopulation(xs);
            let m = 1.max(p.size() / 10);
            let mut last = 0;
            for eps in [0.5, 0.3, 0.1, 0.05, 0.01, 0.001, 0.0] {
                let spec = SequentialTestSpec::new(m, eps).with_alpha(alpha);
                let d = sequential_mh_test(&p, mu0, &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                prop_assert!(d.n_used >= last);
                last = d.n_used;
            }
        }

        #[test]
        fn decision_bookkeeping(xs in population(), mu0 in -0.5f64..0.5, seed: u64, m in 1usize..30) {
            let p = VecPopulation(xs);
            let m = m.min(p.size());
            let spec = SequentialTestSpec::new(m, 0.05);
            let d = sequential_mh_test(&p, mu0, &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert!(d.stages >= 1);
            prop_assert_eq!(d.n_used, (d.stages * m).min(p.size()));
            prop_assert!((0.0..=0.5).contains(&d.final_delta));
            prop_assert_eq!(d.accept, d.lbar > mu0);
        }

        #[test]
        fn lsqbar_dominates_mean_square(xs in population()) {
            let m = moments_of(&xs);
            prop_assert!(m.lsqbar() >= m.lbar() * m.lbar() - 1e-12 * (1.0 + m.lsqbar()));
        }
    }
}
