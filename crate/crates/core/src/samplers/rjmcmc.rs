use super::{AcceptTest, MhDecider, Sampler, StepRecord};
use crate::error::{invalid, Result};
use crate::models::{propose_move, varsel_mu0, MoveKind, PairPopulation, VarSelModel, VarSelState};
use rand::Rng;

/// Proposal and acceptance counts per move type, indexed by [`MoveKind`] order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MoveStats {
    pub proposed: [u64; 3],
    pub accepted: [u64; 3],
}

impl MoveStats {
    pub fn index(kind: MoveKind) -> usize {
        match kind {
            MoveKind::Update => 0,
            MoveKind::Birth => 1,
            MoveKind::Death => 2,
        }
    }

    pub fn acceptance_rate(&self, kind: MoveKind) -> Option<f64> {
        let i = Self::index(kind);
        (self.proposed[i] > 0).then(|| self.accepted[i] as f64 / self.proposed[i] as f64)
    }
}

/// Reversible-jump sampler over sparse logistic-regression weights.
pub struct RjmcmcSampler<'a> {
    model: &'a VarSelModel,
    sigma_update: f64,
    sigma_birth: f64,
    decider: MhDecider,
    pub stats: MoveStats,
}

impl<'a> RjmcmcSampler<'a> {
    pub fn new(model: &'a VarSelModel, sigma_update: f64, sigma_birth: f64, test: AcceptTest) -> Result<Self> {
        if !(sigma_update > 0.0 && sigma_birth > 0.0) || !(sigma_update.is_finite() && sigma_birth.is_finite()) {
            return Err(invalid("move scales must be positive"));
        }
        Ok(Self { model, sigma_update, sigma_birth, decider: MhDecider::new(test), stats: MoveStats::default() })
    }
}

impl Sampler for RjmcmcSampler<'_> {
    type State = VarSelState;

    fn step<R: Rng + ?Sized>(&mut self, state: &mut VarSelState, rng: &mut R) -> Result<StepRecord> {
        let (mv, next) = propose_move(state, self.sigma_update, self.sigma_birth, rng);
        let u = MhDecider::draw_u(rng);
        let mu0 = varsel_mu0(self.model, state, &next, &mv, u, self.sigma_birth)?;
        let pop = PairPopulation::new(self.model.likelihood(), state.beta(), next.beta())?;
        let d = self.decider.decide(&pop, mu0, rng)?;
        let i = MoveStats::index(mv.kind);
        self.stats.proposed[i] += 1;
        if d.accept {
            self.stats.accepted[i] += 1;
            *state = next;
        }
        Ok(StepRecord::from_decision(&d))
    }

    fn snapshot(&self, state: &VarSelState) -> Vec<f64> {
        state.flatten()
    }

    fn num_data(&self) -> usize {
        self.model.num_data()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::synth_logistic_dataset;
    use crate::samplers::{run_chain, Budget, RunSettings};
    use crate::seqtest::SequentialTestSpec;

    #[test]
    fn chain_keeps_at_least_one_feature() {
        let m = VarSelModel::new(synth_logistic_dataset(200, 6, 2).unwrap(), 1.0).unwrap();
        let mut s = RjmcmcSampler::new(&m, 0.05, 0.5, AcceptTest::Sequential(SequentialTestSpec::new(50, 0.05))).unwrap();
        let init = VarSelState::single(6, 0, 0.5).unwrap();
        let mut settings = RunSettings::new(Budget::Iterations(2000), 8);
        settings.trace_every = 1;
        let (trace, end) = run_chain(&mut s, init, &settings, |_| {}).unwrap();
        assert!(end.k() >= 1);
        for r in trace.records() {
            let gamma = &r.params[6..];
            assert!(gamma.contains(&1.0));
            for (b, g) in r.params[..6].iter().zip(gamma) {
                if *g == 0.0 {
                    assert_eq!(*b, 0.0);
                }
            }
        }
        assert!(s.stats.proposed.iter().all(|&p| p > 0));
        assert!(s.stats.accepted[1] > 0 && s.stats.accepted[2] > 0);
    }
}
