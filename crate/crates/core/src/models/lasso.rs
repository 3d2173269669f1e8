use super::{GradientModel, PosteriorModel};
use crate::error::{invalid, Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// One-dimensional linear regression with Gaussian noise and a Laplace prior:
/// `log p(y | x, theta) = -lambda/2 (y - theta x)^2`, `log p(theta) = -lambda0 |theta|`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lasso1D {
    xs: Vec<f64>,
    ys: Vec<f64>,
    lambda: f64,
    lambda0: f64,
    sxx: f64,
    sxy: f64,
    syy: f64,
}

impl Lasso1D {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, lambda: f64, lambda0: f64) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::DimensionMismatch { expected: xs.len(), got: ys.len() });
        }
        if xs.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if !(lambda > 0.0) || !(lambda0 >= 0.0) {
            return Err(invalid("lambda must be positive and lambda0 nonnegative"));
        }
        let sxx = xs.iter().map(|x| x * x).sum();
        let sxy = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        let syy = ys.iter().map(|y| y * y).sum();
        Ok(Self { xs, ys, lambda, lambda0, sxx, sxy, syy })
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    /// Unnormalized log posterior, from sufficient statistics.
    pub fn logpost(&self, theta: f64) -> f64 {
        -0.5 * self.lambda * (self.syy - 2.0 * theta * self.sxy + theta * theta * self.sxx)
            - self.lambda0 * theta.abs()
    }

    /// Derivative of [`Self::logpost`], with `sign(0) = 0` at the kink.
    pub fn grad(&self, theta: f64) -> f64 {
        self.lambda * (self.sxy - theta * self.sxx) - self.lambda0 * sign0(theta)
    }

    /// Maximizer of the log posterior.
    pub fn mode(&self) -> f64 {
        let ls = self.lambda * self.sxx;
        let lxy = self.lambda * self.sxy;
        if lxy > self.lambda0 {
            (lxy - self.lambda0) / ls
        } else if lxy < -self.lambda0 {
            (lxy + self.lambda0) / ls
        } else {
            0.0
        }
    }

    /// Posterior density tabulated by the trapezoid rule on the range where
    /// the log density is within `drop` of its maximum.
    pub fn posterior_grid(&self, points: usize, drop: f64) -> PosteriorGrid {
        let mode = self.mode();
        let peak = self.logpost(mode);
        let curvature = self.lambda * self.sxx;
        let step = 1.0 / curvature.sqrt();
        let edge = |dir: f64| {
            let mut t = mode;
            let mut h = step;
            while peak - self.logpost(t + dir * h) < drop {
                h *= 2.0;
            }
            // bisect to the crossing
            let (mut a, mut b) = (0.0, h);
            for _ in 0..100 {
                let mid = 0.5 * (a + b);
                if peak - self.logpost(t + dir * mid) < drop {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            t += dir * b;
            t
        };
        let lo = edge(-1.0);
        let hi = edge(1.0);
        let h = (hi - lo) / (points - 1) as f64;
        let xs: Vec<f64> = (0..points).map(|i| lo + i as f64 * h).collect();
        let mut dens: Vec<f64> = xs.iter().map(|&t| (self.logpost(t) - peak).exp()).collect();
        let z = h * (dens.iter().sum::<f64>() - 0.5 * (dens[0] + dens[points - 1]));
        dens.iter_mut().for_each(|d| *d /= z);
        PosteriorGrid { xs, density: dens, step: h }
    }
}

fn sign0(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// A 1-D density on an evenly spaced grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGrid {
    pub xs: Vec<f64>,
    pub density: Vec<f64>,
    pub step: f64,
}

impl PosteriorGrid {
    pub fn lo(&self) -> f64 {
        self.xs[0]
    }

    pub fn hi(&self) -> f64 {
        *self.xs.last().expect("nonempty grid")
    }

    /// Probability of each of `bins` equal bins on `[lo, hi)`, by the trapezoid rule.
    pub fn bin_probabilities(&self, lo: f64, hi: f64, bins: usize) -> Vec<f64> {
        let w = (hi - lo) / bins as f64;
        let mut out = vec![0.0; bins];
        for k in 0..self.xs.len() - 1 {
            let mid = 0.5 * (self.xs[k] + self.xs[k + 1]);
            if mid < lo || mid >= hi {
                continue;
            }
            let b = (((mid - lo) / w) as usize).min(bins - 1);
            out[b] += 0.5 * (self.density[k] + self.density[k + 1]) * self.step;
        }
        out
    }

    pub fn mean(&self) -> f64 {
        let n = self.xs.len();
        let s: f64 = (0..n - 1)
            .map(|k| 0.5 * (self.xs[k] * self.density[k] + self.xs[k + 1] * self.density[k + 1]))
            .sum();
        s * self.step
    }
}

impl PosteriorModel for Lasso1D {
    fn num_data(&self) -> usize {
        self.xs.len()
    }

    fn dim(&self) -> usize {
        1
    }

    #[inline]
    fn log_lik_point(&self, i: usize, theta: &[f64]) -> f64 {
        let r = self.ys[i] - theta[0] * self.xs[i];
        -0.5 * self.lambda * r * r
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        -self.lambda0 * theta[0].abs()
    }
}

impl GradientModel for Lasso1D {
    fn add_grad_log_lik_point(&self, i: usize, theta: &[f64], scale: f64, out: &mut [f64]) {
        let x = self.xs[i];
        out[0] += scale * self.lambda * x * (self.ys[i] - theta[0] * x);
    }

    fn add_grad_log_prior(&self, theta: &[f64], out: &mut [f64]) {
        out[0] -= self.lambda0 * sign0(theta[0]);
    }
}

/// The toy regression problem: `N = 10^4`, `x ~ U(-1, 1)`,
/// `y = 0.5 x + xi` with `xi ~ N(0, 1/3)`, `lambda = 3`, `lambda0 = 4950`.
pub fn synth_lasso_dataset(seed: u64) -> Result<Lasso1D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 10_000;
    let ux = Uniform::new(-1.0, 1.0).map_err(|e| invalid(e.to_string()))?;
    let noise = Normal::new(0.0, (1.0f64 / 3.0).sqrt()).map_err(|e| invalid(e.to_string()))?;
    let xs: Vec<f64> = (0..n).map(|_| ux.sample(&mut rng)).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| 0.5 * x + noise.sample(&mut rng)).collect();
    Lasso1D::new(xs, ys, 3.0, 4950.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn quadratic_case_peaks_at_one() {
        let m = Lasso1D::new(vec![1.0], vec![1.0], 1.0, 0.0).unwrap();
        assert_eq!(m.mode(), 1.0);
        assert_eq!(m.grad(1.0), 0.0);
        assert!(m.logpost(1.0) > m.logpost(0.99) && m.logpost(1.0) > m.logpost(1.01));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = synth_lasso_dataset(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let t: f64 = rng.random_range(-0.05..0.05);
            if t.abs() < 1e-4 {
                continue;
            }
            let h = 1e-6;
            let fd = (m.logpost(t + h) - m.logpost(t - h)) / (2.0 * h);
            let g = m.grad(t);
            assert!((fd - g).abs() <= 1e-4 * g.abs().max(1.0), "{t}: {fd} vs {g}");
        }
        assert_eq!(m.grad(0.0), m.lambda() * m.sxy);
    }

    #[test]
    fn pointwise_gradient_sums_to_full() {
        let m = synth_lasso_dataset(1).unwrap();
        let t = [0.01];
        let mut g = [0.0];
        for i in 0..m.num_data() {
            m.add_grad_log_lik_point(i, &t, 1.0, &mut g);
        }
        m.add_grad_log_prior(&t, &mut g);
        assert!((g[0] - m.grad(0.01)).abs() < 1e-6 * m.grad(0.01).abs().max(1.0));
    }

    #[test]
    fn toy_data_slope() {
        let m = synth_lasso_dataset(5).unwrap();
        let n = m.num_data() as f64;
        let mx = m.xs().iter().sum::<f64>() / n;
        let my = m.ys().iter().sum::<f64>() / n;
        let cov: f64 = m.xs().iter().zip(m.ys()).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
        let var: f64 = m.xs().iter().map(|x| (x - mx) * (x - mx)).sum::<f64>() / n;
        let slope = cov / var;
        let resid_sd = (1.0f64 / 3.0).sqrt();
        assert!((slope - 0.5).abs() < 3.0 * resid_sd / (n * var).sqrt(), "slope {slope}");
        assert_eq!(m.num_data(), 10_000);
        assert_eq!(synth_lasso_dataset(5).unwrap(), m);
    }

    #[test]
    fn toy_posterior_has_steep_left_side() {
        let m = synth_lasso_dataset(5).unwrap();
        let mode = m.mode();
        assert!(mode > 0.0);
        // gradient just left of the kink is much larger than anywhere right of the mode's scale
        assert!(m.grad(-1e-6) > 10.0 * m.grad(mode * 0.5).abs());
        let g = m.posterior_grid(100_001, 40.0);
        let total: f64 = g.bin_probabilities(g.lo(), g.hi() + 1e-12, 200).iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        assert!(g.lo() < 0.0);
    }
}
