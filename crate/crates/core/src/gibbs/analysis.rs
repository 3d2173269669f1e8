//! Exact transition-kernel analysis for small models.

use super::{gibbs_conditional_mu0, FactorizedBinaryModel, GibbsRatioPopulation};
use crate::error::{invalid, Error, Result};
use crate::seqtest::{estimate_std, sequential_mh_test_ordered, RunningMoments, SequentialTestSpec};
use crate::special::{sigmoid, student_t_sf};
use crate::LogLikDiffPopulation;
use nalgebra::DMatrix;

/// Largest model the kernel matrices are built for.
pub const MAX_KERNEL_VARIABLES: usize = 10;
/// Largest site population whose orderings are enumerated.
pub const MAX_ENUMERATED_FACTORS: usize = 8;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    let mut c = vec![0; n];
    out.push(cur.clone());
    let mut i = 0;
    while i < n {
        if c[i] < i {
            cur.swap(if i % 2 == 0 { 0 } else { c[i] }, i);
            out.push(cur.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

/// Smallest `t` with `student_t_sf(t, df) <= target`, to bisection precision.
fn t_threshold(target: f64, df: f64) -> f64 {
    if target >= 0.5 {
        return 0.0;
    }
    if target <= 0.0 {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while student_t_sf(hi, df) > target {
        hi *= 2.0;
        if hi > 1e12 {
            return f64::INFINITY;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if student_t_sf(mid, df) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Probability that the sequential test sets `X_site = 1`, integrated exactly
/// over `u` and averaged over every ordering of the site's factors.
pub fn approx_conditional_exact(
    model: &FactorizedBinaryModel,
    site: usize,
    state: u128,
    spec: &SequentialTestSpec,
) -> Result<f64> {
    let pop = GibbsRatioPopulation::new(model, site, state)?;
    let n = pop.size();
    if n > MAX_ENUMERATED_FACTORS {
        return Err(invalid(format!("{n} factors at site {site}; orderings enumerated only up to {MAX_ENUMERATED_FACTORS}")));
    }
    let mut spec = *spec;
    spec.batch_size = spec.batch_size.min(n);
    spec.validate(n)?;
    let values = pop.to_vec();
    let orders = permutations(n);
    // The decision changes only where mu0 crosses a stage mean or a stage stopping boundary.
    let mut cuts = vec![values.iter().sum::<f64>() / n as f64];
    for order in &orders {
        let mut m = RunningMoments::new();
        for (k, &i) in order.iter().enumerate() {
            m.push(values[i]);
            let used = k + 1;
            if used % spec.batch_size != 0 && used != n {
                continue;
            }
            cuts.push(m.lbar());
            if used >= 2 && used < n {
                let s = estimate_std(&m, n)?;
                let t = t_threshold(spec.stage_epsilon(used as f64 / n as f64), (used - 1) as f64);
                if t.is_finite() {
                    cuts.push(m.lbar() - t * s);
                    cuts.push(m.lbar() + t * s);
                }
            }
        }
    }
    let mut us: Vec<f64> = cuts.iter().map(|c| sigmoid(c * n as f64)).collect();
    us.extend([0.0, 1.0]);
    us.sort_by(f64::total_cmp);
    us.dedup();
    let mut p = 0.0;
    for w in us.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        if !(b > a) || !(mid > 0.0 && mid < 1.0) {
            continue;
        }
        let mu0 = gibbs_conditional_mu0(mid, n)?;
        let mut hits = 0usize;
        for order in &orders {
            hits += usize::from(sequential_mh_test_ordered(&pop, mu0, &spec, order)?.accept);
        }
        p += (b - a) * hits as f64 / orders.len() as f64;
    }
    Ok(p)
}

/// Row-stochastic matrix of one systematic sweep over sites `0..D`, where
/// site `i` is set to 1 with probability `p_one(i, state)`.
pub fn sweep_kernel<F>(d: usize, mut p_one: F) -> Result<DMatrix<f64>>
where
    F: FnMut(usize, u128) -> Result<f64>,
{
    if d == 0 || d > MAX_KERNEL_VARIABLES {
        return Err(invalid(format!("kernel matrices need 1..={MAX_KERNEL_VARIABLES} variables")));
    }
    let s = 1usize << d;
    let mut total = DMatrix::<f64>::identity(s, s);
    for site in 0..d {
        let mut k = DMatrix::<f64>::zeros(s, s);
        for x in 0..s {
            let p = p_one(site, x as u128)?;
            k[(x, x | (1 << site))] += p;
            k[(x, x & !(1 << site))] += 1.0 - p;
        }
        total *= k;
    }
    Ok(total)
}

/// Solves `pi K = pi`, `sum pi = 1`.
pub fn stationary_distribution(k: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = k.nrows();
    if n == 0 || k.ncols() != n {
        return Err(invalid("kernel must be square and nonempty"));
    }
    let mut a = k.transpose() - DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = nalgebra::DVector::<f64>::zeros(n);
    rhs[n - 1] = 1.0;
    let pi = a.lu().solve(&rhs).ok_or(Error::DegenerateScale)?;
    Ok(pi.iter().copied().collect())
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// `max_{x,y} TV(K(x,.), K(y,.))`.
pub fn dobrushin_coefficient(k: &DMatrix<f64>) -> f64 {
    let n = k.nrows();
    let mut eta: f64 = 0.0;
    for x in 0..n {
        for y in x + 1..n {
            let tv: f64 = 0.5 * (0..n).map(|z| (k[(x, z)] - k[(y, z)]).abs()).sum::<f64>();
            eta = eta.max(tv);
        }
    }
    eta
}

/// Exact and approximate systematic-scan samplers compared on a small model.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelAnalysis {
    /// Dobrushin coefficient of the exact sweep kernel.
    pub eta: f64,
    /// Largest single-site conditional error over all sites and states.
    pub delta_max: f64,
    /// Largest total-variation error of one approximate sweep from any start state.
    pub sweep_delta: f64,
    /// Total-variation distance between the two stationary distributions.
    pub stationary_tv: f64,
    /// `delta_max / (1 - eta)`.
    pub bound: f64,
    /// `sweep_delta / (1 - eta)`.
    pub sweep_bound: f64,
}

pub fn kernel_analysis(model: &FactorizedBinaryModel, spec: &SequentialTestSpec) -> Result<KernelAnalysis> {
    let d = model.num_variables();
    let mut delta_max: f64 = 0.0;
    let exact = sweep_kernel(d, |i, x| Ok(model.exact_conditional(i, x)))?;
    let approx = sweep_kernel(d, |i, x| {
        let p = approx_conditional_exact(model, i, x, spec)?;
        delta_max = delta_max.max((p - model.exact_conditional(i, x)).abs());
        Ok(p)
    })?;
    let eta = dobrushin_coefficient(&exact);
    let s0 = stationary_distribution(&exact)?;
    let se = stationary_distribution(&approx)?;
    let n = exact.nrows();
    let sweep_delta = (0..n)
        .map(|x| 0.5 * (0..n).map(|z| (exact[(x, z)] - approx[(x, z)]).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    Ok(KernelAnalysis {
        eta,
        delta_max,
        sweep_delta,
        stationary_tv: total_variation(&s0, &se),
        bound: delta_max / (1.0 - eta),
        sweep_bound: sweep_delta / (1.0 - eta),
    })
}
