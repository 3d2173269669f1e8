//! Reference computations that share no code with the library paths they check.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

/// Neumaier-compensated mean of the values compared against the threshold.
pub fn mean_exceeds(values: &[f64], threshold: f64) -> bool {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    (sum + comp) / values.len() as f64 > threshold
}

/// `ln(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Bernoulli-logit log likelihood of all rows, written from scratch.
pub fn logistic_log_lik(rows: &[Vec<f64>], labels: &[u8], theta: &[f64]) -> f64 {
    rows.iter()
        .zip(labels)
        .map(|(x, &y)| {
            let a: f64 = x.iter().zip(theta).map(|(p, q)| p * q).sum();
            if y == 1 {
                -softplus(-a)
            } else {
                -softplus(a)
            }
        })
        .sum()
}

pub fn logistic_predict(x: &[f64], theta: &[f64]) -> f64 {
    let a: f64 = x.iter().zip(theta).map(|(p, q)| p * q).sum();
    1.0 / (1.0 + (-a).exp())
}

/// Newton's method for the mode of `log_lik - precision |theta|^2 / 2`, with
/// the negative Hessian at the mode.
pub fn logistic_laplace(rows: &[Vec<f64>], labels: &[u8], precision: f64) -> (Vec<f64>, DMatrix<f64>) {
    let d = rows[0].len();
    let mut theta = DVector::<f64>::zeros(d);
    let mut h = DMatrix::<f64>::identity(d, d) * precision;
    for _ in 0..100 {
        let mut g = -&theta * precision;
        h = DMatrix::<f64>::identity(d, d) * precision;
        for (x, &y) in rows.iter().zip(labels) {
            let xv = DVector::from_column_slice(x);
            let p = 1.0 / (1.0 + (-xv.dot(&theta)).exp());
            g += &xv * (f64::from(y) - p);
            h += &xv * xv.transpose() * (p * (1.0 - p));
        }
        let step = h.clone().cholesky().expect("positive definite").solve(&g);
        theta += &step;
        if step.norm() < 1e-12 {
            break;
        }
    }
    (theta.iter().copied().collect(), h)
}

/// Self-normalized importance sampling with a multivariate Student-t proposal.
pub struct ImportanceEstimate {
    pub log_evidence: f64,
    pub ess: f64,
    /// Weighted means of the test functions.
    pub means: Vec<f64>,
}

/// Draws from `t_nu(mean, cov)` and weights by `log_target`; `f` returns the
/// test functions at each draw. Weights are rescaled on the fly so only running sums are kept.
pub fn importance_sample<R, T, F>(
    log_target: T,
    mut f: F,
    mean: &[f64],
    cov: &DMatrix<f64>,
    nu: f64,
    draws: usize,
    rng: &mut R,
) -> ImportanceEstimate
where
    R: Rng + ?Sized,
    T: Fn(&[f64]) -> f64,
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let d = mean.len();
    let chol = cov.clone().cholesky().expect("proposal covariance must be positive definite");
    let l = chol.l();
    let log_det_l: f64 = (0..d).map(|i| l[(i, i)].ln()).sum();
    let df = d as f64;
    let log_norm = ln_gamma((nu + df) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * df * (nu * std::f64::consts::PI).ln() - log_det_l;
    let chi = ChiSquared::new(nu).unwrap();
    let mut max_lw = f64::NEG_INFINITY;
    let (mut sw, mut sw2) = (0.0, 0.0);
    let mut sums: Vec<f64> = Vec::new();
    let mut log_terms = Vec::with_capacity(draws);
    for _ in 0..draws {
        let z = DVector::<f64>::from_fn(d, |_, _| StandardNormal.sample(rng));
        let w: f64 = chi.sample(rng);
        let scale = (nu / w).sqrt();
        let x: Vec<f64> = (DVector::from_column_slice(mean) + &l * &z * scale).iter().copied().collect();
        let q = z.norm_squared() * scale * scale;
        let log_q = log_norm - 0.5 * (nu + df) * (q / nu).ln_1p();
        let lw = log_target(&x) - log_q;
        log_terms.push(lw);
        let fx = f(&x);
        if sums.is_empty() {
            sums = vec![0.0; fx.len()];
        }
        if lw > max_lw {
            let r = (max_lw - lw).exp();
            sw *= r;
            sw2 *= r * r;
            sums.iter_mut().for_each(|s| *s *= r);
            max_lw = lw;
        }
        let wt = (lw - max_lw).exp();
        sw += wt;
        sw2 += wt * wt;
        for (s, v) in sums.iter_mut().zip(&fx) {
            *s += wt * v;
        }
    }
    ImportanceEstimate {
        log_evidence: max_lw + (sw / draws as f64).ln(),
        ess: sw * sw / sw2,
        means: sums.iter().map(|s| s / sw).collect(),
    }
}

/// Unnormalized log weight of a binary state from raw factor tables.
pub fn factor_log_weight(factors: &[(Vec<usize>, Vec<f64>)], state: u128) -> f64 {
    factors
        .iter()
        .map(|(scope, table)| {
            let mut idx = 0;
            for (k, &v) in scope.iter().enumerate() {
                if state >> v & 1 == 1 {
                    idx += 1 << k;
                }
            }
            table[idx]
        })
        .sum()
}

/// Brute-force normalized joint over `2^d` states.
pub fn enumerate(factors: &[(Vec<usize>, Vec<f64>)], d: usize) -> Vec<f64> {
    let lw: Vec<f64> = (0..1u128 << d).map(|s| factor_log_weight(factors, s)).collect();
    let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lw.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|x| x / z).collect()
}

/// `P(X_site = 1 | rest)` from two full log weights.
pub fn conditional_from_weights(factors: &[(Vec<usize>, Vec<f64>)], site: usize, state: u128) -> f64 {
    let one = factor_log_weight(factors, state | 1 << site);
    let zero = factor_log_weight(factors, state & !(1 << site));
    1.0 / (1.0 + (zero - one).exp())
}

/// Marginal table of `subset` under `joint`, bit `k` of the index for `subset[k]`.
pub fn subset_table(joint: &[f64], subset: &[usize]) -> Vec<f64> {
    let mut t = vec![0.0; 1 << subset.len()];
    for (s, &p) in joint.iter().enumerate() {
        let idx = subset.iter().enumerate().map(|(k, &v)| ((s >> v) & 1) << k).sum::<usize>();
        t[idx] += p;
    }
    t
}
