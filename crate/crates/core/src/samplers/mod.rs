//! Markov chains whose accept/reject step uses the sequential test.
//!
//! Every step draws `u` and then a 64-bit seed for the test's subsampling
//! order from the chain's random source, whether or not the test is exact.
//! An approximate chain whose tests all exhaust the data therefore follows
//! the exact chain's path draw for draw.

mod random_walk;
mod rjmcmc;
mod sgld;
mod trace;

pub use random_walk::RandomWalkSampler;
pub use rjmcmc::{MoveStats, RjmcmcSampler};
pub use sgld::{sgld_propose, SgldProposal, SgldSampler};
pub use trace::{read_trace, write_trace, ChainTrace, TraceRecord};

use crate::error::{invalid, Result};
use crate::seqtest::{
    population_mean, sequential_mh_test_in, LogLikDiffPopulation, SequentialTestSpec, TestDecision, TestWorkspace,
};
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};

/// How proposals are accepted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AcceptTest {
    /// Full-data MH test.
    Exact,
    Sequential(SequentialTestSpec),
}

/// Runs the configured accept test, reusing buffers across steps.
#[derive(Debug, Clone)]
pub struct MhDecider {
    test: AcceptTest,
    ws: TestWorkspace,
}

impl MhDecider {
    pub fn new(test: AcceptTest) -> Self {
        Self { test, ws: TestWorkspace::new() }
    }

    pub fn test(&self) -> AcceptTest {
        self.test
    }

    /// Draws `u` in `(0, 1)`.
    pub fn draw_u<R: Rng + ?Sized>(rng: &mut R) -> f64 {
        rng.sample(Open01)
    }

    /// Decides `mean(l) > mu0`, drawing the subsampling seed from `rng`.
    pub fn decide<P, R>(&mut self, pop: &P, mu0: f64, rng: &mut R) -> Result<TestDecision>
    where
        P: LogLikDiffPopulation + ?Sized,
        R: Rng + ?Sized,
    {
        let seed: u64 = rng.random();
        match self.test {
            AcceptTest::Exact => {
                let lbar = population_mean(pop)?;
                Ok(TestDecision { accept: lbar > mu0, n_used: pop.size(), stages: 1, final_delta: 0.0, lbar })
            }
            AcceptTest::Sequential(spec) => {
                let mut spec = spec;
                spec.batch_size = spec.batch_size.min(pop.size());
                let mut test_rng = ChaCha8Rng::seed_from_u64(seed);
                sequential_mh_test_in(&mut self.ws, pop, mu0, &spec, &mut test_rng)
            }
        }
    }
}

/// Bookkeeping for one chain step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepRecord {
    pub accept: bool,
    /// Likelihood terms evaluated by the accept test.
    pub n_used: usize,
    pub stages: usize,
    /// Per-datapoint gradient evaluations spent on the proposal.
    pub grad_evals: usize,
}

impl StepRecord {
    fn from_decision(d: &TestDecision) -> Self {
        Self { accept: d.accept, n_used: d.n_used, stages: d.stages, grad_evals: 0 }
    }
}

/// A Markov chain transition.
pub trait Sampler {
    type State: Clone;

    fn step<R: Rng + ?Sized>(&mut self, state: &mut Self::State, rng: &mut R) -> Result<StepRecord>;

    /// Flattened parameters for traces.
    fn snapshot(&self, state: &Self::State) -> Vec<f64>;

    fn num_data(&self) -> usize;
}

/// When a chain stops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Iterations(u64),
    /// Stops after the first step at which the accept-test evaluations reach the limit.
    Evaluations(u64),
    /// Stops after the first step that ends past the limit.
    WallClock(Duration),
}

/// Budget, trace cadence and seed of one chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub budget: Budget,
    pub trace_every: u64,
    pub seed: u64,
}

impl RunSettings {
    pub const DEFAULT_TRACE_EVERY: u64 = 10;

    pub fn new(budget: Budget, seed: u64) -> Self {
        Self { budget, trace_every: Self::DEFAULT_TRACE_EVERY, seed }
    }
}

/// Summary counts over all steps of a chain, recorded or not.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChainStats {
    pub steps: u64,
    pub accepted: u64,
    pub evaluations: u64,
    pub grad_evals: u64,
    pub max_stages: usize,
}

/// Runs `sampler` from `init` and records the initial state, every `trace_every`-th state and the final state.
///
/// `on_step` sees each step's record; use it for per-step statistics.
pub fn run_chain<S, F>(
    sampler: &mut S,
    init: S::State,
    settings: &RunSettings,
    mut on_step: F,
) -> Result<(ChainTrace, S::State)>
where
    S: Sampler,
    F: FnMut(&StepRecord),
{
    if settings.trace_every == 0 {
        return Err(invalid("trace_every must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut state = init;
    let dim = sampler.snapshot(&state).len();
    let mut trace = ChainTrace::new(dim, sampler.num_data());
    trace.push(TraceRecord {
        step: 0,
        params: sampler.snapshot(&state),
        accept: true,
        n_used: 0,
        cumulative_evals: 0,
        elapsed_ns: 0,
    });
    let start = Instant::now();
    let mut cumulative = 0u64;
    let mut step = 0u64;
    let mut last = StepRecord { accept: true, ..StepRecord::default() };
    loop {
        let done = match settings.budget {
            Budget::Iterations(n) => step >= n,
            Budget::Evaluations(n) => cumulative >= n,
            Budget::WallClock(d) => start.elapsed() >= d,
        };
        if done {
            break;
        }
        let rec = match sampler.step(&mut state, &mut rng) {
            Ok(r) => r,
            Err(e) => {
                trace.partial = true;
                trace.error = Some(e.to_string());
                return Ok((trace, state));
            }
        };
        step += 1;
        cumulative += rec.n_used as u64;
        trace.stats.steps = step;
        trace.stats.accepted += u64::from(rec.accept);
        trace.stats.evaluations = cumulative;
        trace.stats.grad_evals += rec.grad_evals as u64;
        trace.stats.max_stages = trace.stats.max_stages.max(rec.stages);
        on_step(&rec);
        last = rec;
        if step.is_multiple_of(settings.trace_every) {
            trace.push(TraceRecord {
                step,
                params: sampler.snapshot(&state),
                accept: rec.accept,
                n_used: rec.n_used,
                cumulative_evals: cumulative,
                elapsed_ns: start.elapsed().as_nanos() as u64,
            });
        }
    }
    // the final state is always recorded, so the trace reaches the budget
    if !step.is_multiple_of(settings.trace_every) {
        trace.push(TraceRecord {
            step,
            params: sampler.snapshot(&state),
            accept: last.accept,
            n_used: last.n_used,
            cumulative_evals: cumulative,
            elapsed_ns: start.elapsed().as_nanos() as u64,
        });
    }
    Ok((trace, state))
}
