use super::{AcceptTest, MhDecider, Sampler, StepRecord};
use crate::error::{invalid, Result};
use crate::models::{PairPopulation, PosteriorModel};
use crate::seqtest::compute_mu0;
use rand::Rng;
use nalgebra::DMatrix;
use rand_distr::StandardNormal;

/// Gaussian random-walk Metropolis-Hastings.
pub struct RandomWalkSampler<'a, M: ?Sized> {
    model: &'a M,
    sigma: f64,
    /// Lower-triangular factor of the proposal covariance, when not isotropic.
    factor: Option<DMatrix<f64>>,
    decider: MhDecider,
    proposal: Vec<f64>,
    noise: Vec<f64>,
}

impl<'a, M: PosteriorModel + ?Sized> RandomWalkSampler<'a, M> {
    pub fn new(model: &'a M, sigma: f64, test: AcceptTest) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(invalid(format!("proposal scale {sigma} must be nonnegative")));
        }
        let d = model.dim();
        Ok(Self { model, sigma, factor: None, decider: MhDecider::new(test), proposal: vec![0.0; d], noise: vec![0.0; d] })
    }

    /// Proposals `theta + sigma * L xi` with `L` lower triangular.
    pub fn preconditioned(model: &'a M, sigma: f64, factor: DMatrix<f64>, test: AcceptTest) -> Result<Self> {
        let d = model.dim();
        if factor.nrows() != d || factor.ncols() != d {
            return Err(crate::error::Error::DimensionMismatch { expected: d, got: factor.nrows() });
        }
        let mut s = Self::new(model, sigma, test)?;
        s.factor = Some(factor.lower_triangle());
        Ok(s)
    }
}

impl<M: PosteriorModel + ?Sized> Sampler for RandomWalkSampler<'_, M> {
    type State = Vec<f64>;

    fn step<R: Rng + ?Sized>(&mut self, theta: &mut Vec<f64>, rng: &mut R) -> Result<StepRecord> {
        for e in self.noise.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        match &self.factor {
            None => {
                for ((p, t), e) in self.proposal.iter_mut().zip(theta.iter()).zip(&self.noise) {
                    *p = t + self.sigma * e;
                }
            }
            Some(l) => {
                for (i, (p, t)) in self.proposal.iter_mut().zip(theta.iter()).enumerate() {
                    let le: f64 = (0..=i).map(|j| l[(i, j)] * self.noise[j]).sum();
                    *p = t + self.sigma * le;
                }
            }
        }
        let u = MhDecider::draw_u(rng);
        let mu0 = compute_mu0(
            u,
            self.model.log_prior(theta) - self.model.log_prior(&self.proposal),
            0.0,
            self.model.num_data(),
        )?;
        let pop = PairPopulation::new(self.model, theta, &self.proposal)?;
        let d = self.decider.decide(&pop, mu0, rng)?;
        if d.accept {
            theta.copy_from_slice(&self.proposal);
        }
        Ok(StepRecord::from_decision(&d))
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
    use crate::models::{synth_logistic_dataset, GaussianMean};
    use crate::samplers::{run_chain, Budget, RunSettings};
    use crate::seqtest::SequentialTestSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_scale_accepts_iff_u_threshold_negative() {
        let m = synth_logistic_dataset(40, 2, 1).unwrap();
        let mut s = RandomWalkSampler::new(&m, 0.0, AcceptTest::Exact).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut theta = vec![0.3, -0.1];
        for _ in 0..100 {
            // flat prior ratio, l_i = 0, mu0 = ln(u)/N < 0
            let r = s.step(&mut theta, &mut rng).unwrap();
            assert!(r.accept);
        }
    }

    #[test]
    fn exhausted_sequential_chain_matches_exact_chain() {
        let m = synth_logistic_dataset(300, 3, 7).unwrap();
        let settings = RunSettings { budget: Budget::Iterations(400), trace_every: 1, seed: 99 };
        let run = |test| {
            let mut s = RandomWalkSampler::new(&m, 0.1, test).unwrap();
            run_chain(&mut s, vec![0.0; 3], &settings, |_| {}).unwrap().0
        };
        let a = run(AcceptTest::Exact);
        let b = run(AcceptTest::Sequential(SequentialTestSpec::new(40, 0.0)));
        for (x, y) in a.records().iter().zip(b.records()) {
            assert_eq!(x.params, y.params);
            assert_eq!(x.accept, y.accept);
            assert_eq!(x.cumulative_evals, y.cumulative_evals);
        }
    }

    #[test]
    fn sequential_chain_uses_fraction_of_data() {
        let m = synth_logistic_dataset(5000, 5, 3).unwrap();
        let (map, _) = m.map_estimate(30).unwrap();
        let mut s = RandomWalkSampler::new(&m, 0.01, AcceptTest::Sequential(SequentialTestSpec::new(500, 0.01))).unwrap();
        let settings = RunSettings::new(Budget::Iterations(300), 5);
        let (trace, _) = run_chain(&mut s, map, &settings, |_| {}).unwrap();
        let frac = trace.stats.evaluations as f64 / (300.0 * 5000.0);
        assert!(frac < 0.7, "{frac}");
    }

    #[test]
    fn preconditioned_chain_targets_posterior() {
        let m = GaussianMean::new(vec![0.2, -0.4, 1.1, 0.5, 0.3], 2.0).unwrap();
        let (pm, pv) = m.posterior();
        let l = nalgebra::DMatrix::from_element(1, 1, pv.sqrt());
        let mut s = RandomWalkSampler::preconditioned(&m, 2.4, l, AcceptTest::Exact).unwrap();
        let mut settings = RunSettings::new(Budget::Iterations(100_000), 6);
        settings.trace_every = 1;
        let (trace, _) = run_chain(&mut s, vec![pm], &settings, |_| {}).unwrap();
        let xs: Vec<f64> = trace.records().iter().map(|r| r.params[0]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!((mean - pm).abs() < 0.02 * pv.sqrt() * 10.0, "{mean} vs {pm}");
        assert!((var / pv - 1.0).abs() < 0.05, "{var} vs {pv}");
    }

    #[test]
    fn deterministic_per_seed() {
        let m = GaussianMean::new(vec![0.1, 0.5, -0.2, 0.9], 1.0).unwrap();
        let settings = RunSettings::new(Budget::Iterations(50), 3);
        let run = || {
            let mut s = RandomWalkSampler::new(&m, 0.5, AcceptTest::Sequential(SequentialTestSpec::new(2, 0.2))).unwrap();
            run_chain(&mut s, vec![0.0], &settings, |_| {}).unwrap().0
        };
        let (a, b) = (run(), run());
        let strip = |t: &crate::samplers::ChainTrace| t.records().iter().map(|r| (r.params.clone(), r.n_used)).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
    }
}
