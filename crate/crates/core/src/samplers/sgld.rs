use super::{AcceptTest, MhDecider, Sampler, StepRecord};
use crate::error::{invalid, Result};
use crate::models::{GradientModel, PairPopulation};
use crate::seqtest::compute_mu0;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

/// A Langevin proposal and both directions of its kernel density.
#[derive(Debug, Clone, PartialEq)]
pub struct SgldProposal {
    pub theta_prime: Vec<f64>,
    /// `ln q(theta'|theta, batch)`.
    pub log_q_forward: f64,
    /// `ln q(theta|theta', batch)`.
    pub log_q_reverse: f64,
}

/// `theta + (h/2) (grad ln prior + (N/n) sum_batch grad ln p(x_i|theta))`.
fn langevin_mean<M: GradientModel + ?Sized>(model: &M, theta: &[f64], batch: &[usize], step_size: f64) -> Vec<f64> {
    let mut g = vec![0.0; theta.len()];
    let scale = model.num_data() as f64 / batch.len() as f64;
    for &i in batch {
        model.add_grad_log_lik_point(i, theta, scale, &mut g);
    }
    model.add_grad_log_prior(theta, &mut g);
    theta.iter().zip(&g).map(|(t, gi)| t + 0.5 * step_size * gi).collect()
}

fn ln_isotropic_normal(x: &[f64], mean: &[f64], var: f64) -> f64 {
    let sq: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * sq / var - 0.5 * x.len() as f64 * (2.0 * std::f64::consts::PI * var).ln()
}

/// Draws `theta' ~ N(langevin_mean(theta), step_size I)` on the given minibatch.
pub fn sgld_propose<M, R>(model: &M, theta: &[f64], batch: &[usize], step_size: f64, rng: &mut R) -> Result<SgldProposal>
where
    M: GradientModel + ?Sized,
    R: Rng + ?Sized,
{
    if !(step_size > 0.0) || !step_size.is_finite() {
        return Err(invalid(format!("step size {step_size} must be positive")));
    }
    if batch.is_empty() {
        return Err(invalid("minibatch must be nonempty"));
    }
    let fwd_mean = langevin_mean(model, theta, batch, step_size);
    let sd = step_size.sqrt();
    let theta_prime: Vec<f64> = fwd_mean
        .iter()
        .map(|m| {
            let e: f64 = rng.sample(StandardNormal);
            m + sd * e
        })
        .collect();
    let rev_mean = langevin_mean(model, &theta_prime, batch, step_size);
    Ok(SgldProposal {
        log_q_forward: ln_isotropic_normal(&theta_prime, &fwd_mean, step_size),
        log_q_reverse: ln_isotropic_normal(theta, &rev_mean, step_size),
        theta_prime,
    })
}

/// Stochastic-gradient Langevin proposals, optionally corrected by an MH test.
pub struct SgldSampler<'a, M: ?Sized> {
    model: &'a M,
    step_size: f64,
    minibatch: usize,
    /// `None` accepts every proposal.
    decider: Option<MhDecider>,
}

impl<'a, M: GradientModel + ?Sized> SgldSampler<'a, M> {
    pub const DEFAULT_MINIBATCH: usize = 500;

    pub fn new(model: &'a M, step_size: f64, minibatch: usize, test: Option<AcceptTest>) -> Result<Self> {
        if minibatch == 0 || minibatch > model.num_data() {
            return Err(invalid(format!("minibatch {minibatch} must lie in 1..={}", model.num_data())));
        }
        if !(step_size > 0.0) || !step_size.is_finite() {
            return Err(invalid(format!("step size {step_size} must be positive")));
        }
        Ok(Self { model, step_size, minibatch, decider: test.map(MhDecider::new) })
    }
}

impl<M: GradientModel + ?Sized> Sampler for SgldSampler<'_, M> {
    type State = Vec<f64>;

    fn step<R: Rng + ?Sized>(&mut self, theta: &mut Vec<f64>, rng: &mut R) -> Result<StepRecord> {
        let batch = index::sample(rng, self.model.num_data(), self.minibatch).into_vec();
        let prop = sgld_propose(self.model, theta, &batch, self.step_size, rng)?;
        let grad_evals = 2 * self.minibatch;
        let Some(decider) = self.decider.as_mut() else {
            *theta = prop.theta_prime;
            return Ok(StepRecord { accept: true, n_used: 0, stages: 0, grad_evals: self.minibatch });
        };
        let u = MhDecider::draw_u(rng);
        let lpr = self.model.log_prior(theta) - self.model.log_prior(&prop.theta_prime);
        let mu0 = compute_mu0(u, lpr, prop.log_q_reverse - prop.log_q_forward, self.model.num_data())?;
        let pop = PairPopulation::new(self.model, theta, &prop.theta_prime)?;
        let d = decider.decide(&pop, mu0, rng)?;
        if d.accept {
            *theta = prop.theta_prime;
        }
        Ok(StepRecord { grad_evals, ..StepRecord::from_decision(&d) })
    }

    fn snapshot(&self, theta: &Vec<f64>) -> Vec<f64> {
        theta.clone()
    }

    fn num_data(&self) -> usize {
        self.model.num_data()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::GaussianMean;
    use crate::samplers::{run_chain, Budget, RunSettings};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_densities_match_direct_formula() {
        // Gaussian mean with unit noise: grad ln p(x|t) = x - t, prior grad = -t / v.
        let xs = vec![0.5, 1.5, -0.25, 2.0];
        let m = GaussianMean::new(xs.clone(), 4.0).unwrap();
        let batch = [0usize, 2];
        let h = 0.01;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = sgld_propose(&m, &[0.3], &batch, h, &mut rng).unwrap();
        let drift = |t: f64| t + 0.5 * h * (2.0 * ((xs[0] - t) + (xs[2] - t)) - t / 4.0);
        let lnq = |x: f64, mean: f64| -0.5 * (x - mean).powi(2) / h - 0.5 * (2.0 * std::f64::consts::PI * h).ln();
        let tp = p.theta_prime[0];
        assert!((p.log_q_forward - lnq(tp, drift(0.3))).abs() < 1e-12);
        assert!((p.log_q_reverse - lnq(0.3, drift(tp))).abs() < 1e-12);
    }

    #[test]
    fn uncorrected_always_moves() {
        let m = GaussianMean::new((0..50).map(|i| (i as f64).sin()).collect(), 1.0).unwrap();
        let mut s = SgldSampler::new(&m, 1e-3, 10, None).unwrap();
        let (trace, _) = run_chain(&mut s, vec![0.0], &RunSettings::new(Budget::Iterations(100), 2), |r| {
            assert!(r.accept);
            assert_eq!(r.n_used, 0);
        })
        .unwrap();
        assert_eq!(trace.stats.accepted, 100);
    }

    #[test]
    fn corrected_full_batch_targets_posterior() {
        let xs: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64 / 5.0 - 1.0).collect();
        let m = GaussianMean::new(xs, 2.0).unwrap();
        let (pm, pv) = m.posterior();
        // Oversized step: an uncorrected chain would be biased; the MH correction restores the target.
        let mut s = SgldSampler::new(&m, 0.08, 40, Some(AcceptTest::Exact)).unwrap();
        let mut settings = RunSettings::new(Budget::Iterations(60_000), 3);
        settings.trace_every = 1;
        let (trace, _) = run_chain(&mut s, vec![pm], &settings, |_| {}).unwrap();
        let xs: Vec<f64> = trace.records()[1000..].iter().map(|r| r.params[0]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!((mean - pm).abs() < 0.03, "{mean} vs {pm}");
        assert!((var / pv - 1.0).abs() < 0.1, "{var} vs {pv}");
    }
}
