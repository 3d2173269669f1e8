//! The `run` pipeline: data and model setup, ground truth, chains, reports.

use crate::config::{ExperimentKind, RunConfig};
use crate::functions::{Evaluator, TestFunctions};
use crate::runner::{run_ensembles, thread_pool, worker_count, ChainOutput, Counters, Ensemble};
use crate::table::Table;
use anyhow::{anyhow, bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use seqmh_core::design::{
    average_design, read_moment_samples, worst_case_design, write_moment_samples, DesignEvaluator, DesignGrid,
};
use seqmh_core::gibbs::{
    draw_subsets, enumerate_joint, read_model, subset_l1_error, write_model, GibbsSampler, SubsetMarginals, SubsetTally,
};
use seqmh_core::models::{
    moment_sample, read_dataset, synth_lasso_dataset, synth_logistic_dataset, synth_logistic_split, write_dataset,
    Dataset, FeatureMatrix, Lasso1D, LogisticRegression, MoveKind, VarSelModel, VarSelState,
};
use seqmh_core::risk::{estimate_risk, histogram, histogram_l1, integrated_autocorr_time, shared_cost_grid};
use seqmh_core::rwalk::{analysis_table, delta_acceptance, TabulatedCurve, TestShape};
use seqmh_core::samplers::{
    run_chain, AcceptTest, Budget, RandomWalkSampler, RjmcmcSampler, RunSettings, Sampler, SgldSampler, StepRecord,
};
use seqmh_core::{
    ChainSeries, ChainTrace, FactorizedBinaryModel, GroundTruth, MomentSample, PosteriorModel, SequentialTestSpec,
};
use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

/// Runs the configured experiment and returns its summary table.
pub fn run(cfg: &RunConfig) -> Result<Table> {
    match cfg.kind {
        ExperimentKind::RandomWalkLogistic => random_walk_logistic(cfg),
        ExperimentKind::SgldLasso => sgld_lasso(cfg),
        ExperimentKind::Rjmcmc => rjmcmc(cfg),
        ExperimentKind::GibbsMrf => gibbs_mrf(cfg),
        ExperimentKind::Analysis => analysis(cfg),
        ExperimentKind::Design => design(cfg),
    }
}

pub fn ensemble_label(epsilon: f64) -> String {
    if epsilon == 0.0 {
        "exact".to_string()
    } else {
        format!("eps{epsilon}")
    }
}

/// Rejects unknown keys and records the config in the output directory. A
/// directory holding a different config is refused, so reused chain traces
/// always match the settings.
fn start(cfg: &RunConfig) -> Result<rayon::ThreadPool> {
    cfg.check_unused()?;
    std::fs::create_dir_all(&cfg.output).with_context(|| format!("creating {}", cfg.output.display()))?;
    let stamp = cfg.output.join("run.txt");
    if stamp.exists() {
        let old = std::fs::read_to_string(&stamp).with_context(|| format!("reading {}", stamp.display()))?;
        if old != cfg.text {
            bail!("{} holds results of a different config; choose another output directory", cfg.output.display());
        }
    } else {
        std::fs::write(&stamp, &cfg.text).with_context(|| format!("writing {}", stamp.display()))?;
    }
    thread_pool(worker_count(cfg.workers)?)
}

fn create(path: &Path) -> Result<BufWriter<std::fs::File>> {
    Ok(BufWriter::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> Result<BufReader<std::fs::File>> {
    Ok(BufReader::new(std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn settings(cfg: &RunConfig, seed: u64) -> RunSettings {
    RunSettings { budget: cfg.budget, trace_every: cfg.trace_every, seed }
}

/// Runs one chain and tallies how many stages each step's test took.
fn traced_chain<S: Sampler>(sampler: &mut S, init: S::State, settings: &RunSettings) -> Result<(ChainOutput, S::State)> {
    let mut stages: BTreeMap<usize, u64> = BTreeMap::new();
    let (trace, state) = run_chain(sampler, init, settings, |r: &StepRecord| *stages.entry(r.stages).or_default() += 1)?;
    let counters = stages.into_iter().map(|(k, v)| (format!("stages_{k}"), v)).collect();
    Ok((ChainOutput { trace, counters }, state))
}

/// Mean of `f` over the states of an exact chain, after dropping `burn_in`.
fn long_run_mean<S: Sampler>(sampler: &mut S, init: S::State, steps: u64, seed: u64, burn_in: f64, f: &Evaluator) -> Result<Vec<f64>> {
    let settings = RunSettings { budget: Budget::Iterations(steps), trace_every: 1, seed };
    let (trace, _) = run_chain(sampler, init, &settings, |_| {})?;
    if let Some(e) = &trace.error {
        bail!("reference chain failed: {e}");
    }
    let recs = trace.records();
    let kept = &recs[((recs.len() as f64 * burn_in) as usize).min(recs.len() - 1)..];
    let mut mean: Vec<f64> = Vec::new();
    for r in kept {
        let v = f(&r.params);
        if mean.is_empty() {
            mean = vec![0.0; v.len()];
        }
        mean.iter_mut().zip(&v).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= kept.len() as f64);
    Ok(mean)
}

/// Loads the truth file (the `truth` key), or computes it and writes
/// `truth.tsv`. The file's provenance must name the expected test functions.
fn ground_truth(
    cfg: &RunConfig,
    file: Option<PathBuf>,
    functions: &TestFunctions,
    compute: impl FnOnce() -> Result<GroundTruth>,
) -> Result<GroundTruth> {
    let truth = match file {
        Some(p) => {
            let t = GroundTruth::read(open(&p)?).with_context(|| format!("reading {}", p.display()))?;
            let named = TestFunctions::from_provenance(&t.provenance)?;
            if &named != functions {
                bail!("truth file {} is for test functions '{named}', expected '{functions}'", p.display());
            }
            t
        }
        None => compute()?,
    };
    let path = cfg.output.join("truth.tsv");
    let mut w = create(&path)?;
    truth.write(&mut w)?;
    w.flush()?;
    Ok(truth)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum CostAxis {
    Evaluations,
    Steps,
}

fn cost_axis(cfg: &RunConfig, default: CostAxis) -> Result<CostAxis> {
    match cfg.kv.raw("risk_axis") {
        None => Ok(default),
        Some("evaluations") => Ok(CostAxis::Evaluations),
        Some("steps") => Ok(CostAxis::Steps),
        Some(other) => bail!("risk_axis '{other}' must be 'evaluations' or 'steps'"),
    }
}

fn series(trace: &ChainTrace, axis: CostAxis, f: &Evaluator) -> Result<ChainSeries> {
    match axis {
        CostAxis::Evaluations => Ok(ChainSeries::from_trace(trace, |p| f(p))?),
        CostAxis::Steps => {
            let (cost, values) = trace.records().iter().map(|r| (r.step, f(&r.params))).unzip();
            Ok(ChainSeries::new(cost, values)?)
        }
    }
}

/// Writes one risk table per ensemble, `stages.tsv`, and `summary.tsv`.
fn report(cfg: &RunConfig, ensembles: &[Ensemble], truth: &GroundTruth, f: &Evaluator, axis: CostAxis) -> Result<Table> {
    let mut summary = Table::new(&[
        "ensemble",
        "chains",
        "partial_chains",
        "steps",
        "accepted",
        "acceptance_rate",
        "evaluations",
        "grad_evals",
        "max_stages",
        "final_cost",
        "final_risk",
        "mean_iat",
    ]);
    let mut stages = Table::new(&["ensemble", "stages", "steps"]);
    for ens in ensembles {
        let all: Vec<ChainSeries> = ens.traces().map(|t| series(t, axis, f)).collect::<Result<_>>()?;
        let width = all[0].values[0].len();
        if width != truth.values.len() {
            bail!("{} test functions but {} truth values", width, truth.values.len());
        }
        let grid = shared_cost_grid(&all, cfg.risk_points)?;
        let risk = estimate_risk(&all, &truth.values, &grid, cfg.burn_in)?;
        let mut w = create(&cfg.output.join(format!("risk_{}.tsv", ens.label)))?;
        risk.write_tsv(&mut w)?;
        w.flush()?;

        let (mut steps, mut accepted, mut evals, mut grads, mut max_stages, mut partial) = (0, 0, 0, 0, 0, 0);
        let mut iat = Vec::new();
        for t in ens.traces() {
            steps += t.stats.steps;
            accepted += t.stats.accepted;
            evals += t.stats.evaluations;
            grads += t.stats.grad_evals;
            max_stages = max_stages.max(t.stats.max_stages);
            partial += usize::from(t.partial);
            let recs = t.records();
            let first: Vec<f64> = recs[(recs.len() as f64 * cfg.burn_in) as usize..].iter().map(|r| r.params[0]).collect();
            if let Ok(tau) = integrated_autocorr_time(&first) {
                iat.push(tau);
            }
        }
        let mean_iat = if iat.is_empty() { f64::NAN } else { iat.iter().sum::<f64>() / iat.len() as f64 };
        let last = risk.rows.last().ok_or_else(|| anyhow!("empty risk report"))?;
        summary.row(vec![
            ens.label.clone(),
            ens.chains.len().to_string(),
            partial.to_string(),
            steps.to_string(),
            accepted.to_string(),
            format!("{:.6}", accepted as f64 / steps.max(1) as f64),
            evals.to_string(),
            grads.to_string(),
            max_stages.to_string(),
            last.cost.to_string(),
            format!("{:.6e}", last.risk),
            format!("{mean_iat:.3}"),
        ]);
        let mut by_stage: Vec<(usize, u64)> = ens
            .counters()
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix("stages_").and_then(|s| s.parse().ok()).map(|s| (s, v)))
            .collect();
        by_stage.sort_unstable();
        for (s, v) in by_stage {
            stages.row(vec![ens.label.clone(), s.to_string(), v.to_string()]);
        }
    }
    stages.write(&cfg.output.join("stages.tsv"))?;
    summary.write(&cfg.output.join("summary.tsv"))?;
    Ok(summary)
}

struct LogisticSetup {
    model: LogisticRegression,
    test: FeatureMatrix,
}

/// Training and held-out data: the `data` / `test_data` files, or a synthetic split.
fn logistic_setup(cfg: &RunConfig, rows: usize, dim: usize, test_rows: usize) -> Result<LogisticSetup> {
    let precision: Option<f64> = cfg.kv.get("prior_precision")?;
    let (model, test) = match cfg.path("data")? {
        Some(p) => {
            let data = read_dataset(open(&p)?).with_context(|| format!("reading {}", p.display()))?;
            let model = logistic_from_dataset(&data, precision.unwrap_or(LogisticRegression::DEFAULT_PRIOR_PRECISION))
                .with_context(|| format!("in {}", p.display()))?;
            let test = match cfg.path("test_data")? {
                Some(t) => crate::functions::load_features(&t)?,
                None => {
                    let k = cfg.kv.get_or("test_rows", test_rows)?.min(data.targets.len());
                    let d = data.features.cols();
                    FeatureMatrix::new(data.features.as_slice()[..k * d].to_vec(), k, d)?
                }
            };
            (model, test)
        }
        None => {
            let rows = cfg.kv.get_or("rows", rows)?;
            let dim = cfg.kv.get_or("dim", dim)?;
            let test_rows = cfg.kv.get_or("test_rows", test_rows)?;
            let seed = cfg.kv.get_or("data_seed", cfg.seed)?;
            let (m, t) = synth_logistic_split(rows, test_rows, dim, seed)?;
            (precision.map_or(m.clone(), |p| m.with_prior_precision(p)), t)
        }
    };
    if test.cols() != model.features().cols() {
        bail!("held-out data has {} columns, training data {}", test.cols(), model.features().cols());
    }
    Ok(LogisticSetup { model, test })
}

fn logistic_from_dataset(data: &Dataset, precision: f64) -> Result<LogisticRegression> {
    let labels = data
        .targets
        .iter()
        .map(|&t| {
            if t == 0.0 {
                Ok(0u8)
            } else if t == 1.0 {
                Ok(1u8)
            } else {
                Err(anyhow!("logistic targets must be 0 or 1, found {t}"))
            }
        })
        .collect::<Result<Vec<u8>>>()?;
    Ok(LogisticRegression::new(data.features.clone(), &labels, precision)?)
}

fn write_features(path: &Path, features: &FeatureMatrix) -> Result<()> {
    let data = Dataset { features: features.clone(), targets: vec![0.0; features.rows()] };
    let mut w = create(path)?;
    write_dataset(&mut w, &data)?;
    w.flush()?;
    Ok(())
}

fn random_walk_logistic(cfg: &RunConfig) -> Result<Table> {
    let setup = logistic_setup(cfg, 2000, 10, 200)?;
    let step: f64 = cfg.kv.get_or("step", 0.01)?;
    let truth_steps: u64 = cfg.kv.get_or("truth_iterations", 100_000)?;
    let axis = cost_axis(cfg, CostAxis::Evaluations)?;
    let truth_file = cfg.path("truth")?;
    let pool = start(cfg)?;

    let model = &setup.model;
    let n = model.num_data();
    let (init, _) = model.map_estimate(100)?;
    let features_file = "test_features.tsv";
    write_features(&cfg.output.join(features_file), &setup.test)?;
    let functions = TestFunctions::Predictive { path: features_file.into() };
    let f = functions.evaluator(&cfg.output)?;

    let truth = ground_truth(cfg, truth_file, &functions, || {
        let seed = crate::runner::chain_seed(cfg.seed, "truth", 0);
        let mut s = RandomWalkSampler::new(model, step, AcceptTest::Exact)?;
        let values = long_run_mean(&mut s, init.clone(), truth_steps, seed, cfg.burn_in, &f)?;
        let provenance = format!(
            "long-run sampler=random-walk test=exact iterations={truth_steps} seed={seed} step={step} burn_in={} functions={functions}",
            cfg.burn_in
        );
        Ok(GroundTruth { provenance, values })
    })?;

    let labels: Vec<String> = cfg.epsilons.iter().map(|&e| ensemble_label(e)).collect();
    let ensembles = run_ensembles(&pool, &cfg.output.join("chains"), &labels, cfg.chains, cfg.seed, |e, _, seed| {
        let mut s = RandomWalkSampler::new(model, step, cfg.test_for(cfg.epsilons[e], n))?;
        Ok(traced_chain(&mut s, init.clone(), &settings(cfg, seed))?.0)
    })?;
    report(cfg, &ensembles, &truth, &f, axis)
}

fn lasso_model(cfg: &RunConfig) -> Result<Lasso1D> {
    match cfg.path("data")? {
        Some(p) => {
            let data = read_dataset(open(&p)?).with_context(|| format!("reading {}", p.display()))?;
            if data.features.cols() != 1 {
                bail!("lasso data needs exactly one feature column, found {}", data.features.cols());
            }
            Ok(Lasso1D::new(
                data.features.as_slice().to_vec(),
                data.targets,
                cfg.kv.get_or("lambda", 3.0)?,
                cfg.kv.get_or("lambda0", 4950.0)?,
            )?)
        }
        None => Ok(synth_lasso_dataset(cfg.kv.get_or("data_seed", cfg.seed)?)?),
    }
}

fn sgld_lasso(cfg: &RunConfig) -> Result<Table> {
    let model = lasso_model(cfg)?;
    let step_size: f64 = cfg.kv.get_or("step_size", 5e-6)?;
    let minibatch: usize = cfg.kv.get_or("minibatch", SgldSampler::<Lasso1D>::DEFAULT_MINIBATCH)?;
    let bins: usize = cfg.kv.get_or("bins", 200)?;
    let quad_points: usize = cfg.kv.get_or("quadrature_points", 100_000)?;
    let log_drop: f64 = cfg.kv.get_or("support_log_drop", 30.0)?;
    let uncorrected: bool = cfg.kv.get_or("uncorrected", true)?;
    let axis = cost_axis(cfg, CostAxis::Steps)?;
    let truth_file = cfg.path("truth")?;
    let pool = start(cfg)?;

    let grid = model.posterior_grid(quad_points, log_drop);
    let (lo, hi) = (grid.lo(), grid.hi());
    let functions = TestFunctions::Bins { lo, hi, bins };
    let f = functions.evaluator(&cfg.output)?;
    let truth = ground_truth(cfg, truth_file, &functions, || {
        Ok(GroundTruth {
            provenance: format!("quadrature points={quad_points} support_log_drop={log_drop} functions={functions}"),
            values: grid.bin_probabilities(lo, hi, bins),
        })
    })?;

    let mut tests: Vec<(String, Option<AcceptTest>)> =
        cfg.epsilons.iter().map(|&e| (ensemble_label(e), Some(cfg.test_for(e, model.num_data())))).collect();
    if uncorrected {
        tests.push(("uncorrected".to_string(), None));
    }
    let labels: Vec<String> = tests.iter().map(|t| t.0.clone()).collect();
    let init = vec![model.mode()];
    let ensembles = run_ensembles(&pool, &cfg.output.join("chains"), &labels, cfg.chains, cfg.seed, |e, _, seed| {
        let mut s = SgldSampler::new(&model, step_size, minibatch, tests[e].1)?;
        Ok(traced_chain(&mut s, init.clone(), &settings(cfg, seed))?.0)
    })?;

    let mut hist = Table::new(&["ensemble", "bin_center", "truth", "estimate"]);
    let mut l1 = Table::new(&["ensemble", "histogram_l1"]);
    let width = (hi - lo) / bins as f64;
    for ens in &ensembles {
        let mut xs = Vec::new();
        for t in ens.traces() {
            let recs = t.records();
            xs.extend(recs[(recs.len() as f64 * cfg.burn_in) as usize..].iter().map(|r| r.params[0]));
        }
        let h = histogram(&xs, lo, hi, bins)?;
        for (b, (est, tru)) in h.iter().zip(&truth.values).enumerate() {
            hist.row(vec![
                ens.label.clone(),
                format!("{:.10e}", lo + (b as f64 + 0.5) * width),
                format!("{tru:.10e}"),
                format!("{est:.10e}"),
            ]);
        }
        l1.row(vec![ens.label.clone(), format!("{:.6}", histogram_l1(&h, &truth.values)?)]);
    }
    hist.write(&cfg.output.join("histogram.tsv"))?;
    l1.write(&cfg.output.join("histogram_l1.tsv"))?;
    report(cfg, &ensembles, &truth, &f, axis)
}

fn rjmcmc(cfg: &RunConfig) -> Result<Table> {
    let lik = match cfg.path("data")? {
        Some(p) => {
            let data = read_dataset(open(&p)?).with_context(|| format!("reading {}", p.display()))?;
            logistic_from_dataset(&data, LogisticRegression::DEFAULT_PRIOR_PRECISION)?
        }
        None => synth_logistic_dataset(
            cfg.kv.get_or("rows", 200)?,
            cfg.kv.get_or("dim", 5)?,
            cfg.kv.get_or("data_seed", cfg.seed)?,
        )?,
    };
    let lambda: f64 = cfg.kv.get_or("lambda", 1.0)?;
    let model = match (cfg.kv.get::<f64>("hyper_shape")?, cfg.kv.get::<f64>("hyper_scale")?) {
        (Some(a), Some(b)) => VarSelModel::with_hyperprior(lik, lambda, a, b)?,
        (None, None) => VarSelModel::new(lik, lambda)?,
        _ => bail!("set both 'hyper_shape' and 'hyper_scale', or neither"),
    };
    let sigma_update: f64 = cfg.kv.get_or("sigma_update", 0.1)?;
    let sigma_birth: f64 = cfg.kv.get_or("sigma_birth", 0.5)?;
    let truth_steps: u64 = cfg.kv.get_or("truth_iterations", 200_000)?;
    let axis = cost_axis(cfg, CostAxis::Evaluations)?;
    let truth_file = cfg.path("truth")?;
    let pool = start(cfg)?;

    let d = model.dim();
    let n = model.num_data();
    let init = VarSelState::single(d, 0, 0.5)?;
    let functions = TestFunctions::Slice { start: d, end: 2 * d };
    let f = functions.evaluator(&cfg.output)?;
    let truth = ground_truth(cfg, truth_file, &functions, || {
        let seed = crate::runner::chain_seed(cfg.seed, "truth", 0);
        let mut s = RjmcmcSampler::new(&model, sigma_update, sigma_birth, AcceptTest::Exact)?;
        let values = long_run_mean(&mut s, init.clone(), truth_steps, seed, cfg.burn_in, &f)?;
        let provenance = format!(
            "long-run sampler=rjmcmc test=exact iterations={truth_steps} seed={seed} sigma_update={sigma_update} sigma_birth={sigma_birth} burn_in={} functions={functions}",
            cfg.burn_in
        );
        Ok(GroundTruth { provenance, values })
    })?;

    let labels: Vec<String> = cfg.epsilons.iter().map(|&e| ensemble_label(e)).collect();
    let kinds = [MoveKind::Update, MoveKind::Birth, MoveKind::Death];
    let ensembles = run_ensembles(&pool, &cfg.output.join("chains"), &labels, cfg.chains, cfg.seed, |e, _, seed| {
        let mut s = RjmcmcSampler::new(&model, sigma_update, sigma_birth, cfg.test_for(cfg.epsilons[e], n))?;
        let (mut out, _) = traced_chain(&mut s, init.clone(), &settings(cfg, seed))?;
        for k in kinds {
            let i = seqmh_core::samplers::MoveStats::index(k);
            out.counters.insert(format!("proposed_{}", k.name()), s.stats.proposed[i]);
            out.counters.insert(format!("accepted_{}", k.name()), s.stats.accepted[i]);
        }
        Ok(out)
    })?;

    let mut moves = Table::new(&["ensemble", "move", "proposed", "accepted", "acceptance_rate"]);
    for ens in &ensembles {
        let c: Counters = ens.counters();
        for k in kinds {
            let p = c.get(&format!("proposed_{}", k.name())).copied().unwrap_or(0);
            let a = c.get(&format!("accepted_{}", k.name())).copied().unwrap_or(0);
            let rate = if p == 0 { f64::NAN } else { a as f64 / p as f64 };
            moves.row(vec![ens.label.clone(), k.name().to_string(), p.to_string(), a.to_string(), format!("{rate:.6}")]);
        }
    }
    moves.write(&cfg.output.join("moves.tsv"))?;
    report(cfg, &ensembles, &truth, &f, axis)
}

/// Single-variable marginals `P(X_i = 1)` from a full joint table.
fn marginals_from_joint(joint: &[f64], d: usize) -> Vec<f64> {
    (0..d).map(|i| joint.iter().enumerate().filter(|(s, _)| (s >> i) & 1 == 1).map(|(_, p)| p).sum()).collect()
}

const ENUMERATION_LIMIT: usize = 20;

fn gibbs_mrf(cfg: &RunConfig) -> Result<Table> {
    let model = match cfg.path("model")? {
        Some(p) => read_model(open(&p)?).with_context(|| format!("reading {}", p.display()))?,
        None => FactorizedBinaryModel::dense_triples(
            cfg.kv.get_or("variables", 10)?,
            cfg.kv.get_or("log_potential_sd", 0.02)?,
            cfg.kv.get_or("model_seed", cfg.seed)?,
        )?,
    };
    let truth_sweeps: u64 = cfg.kv.get_or("truth_iterations", 20_000)?;
    let subset_size: usize = cfg.kv.get_or("subset_size", 5)?;
    let subset_count: usize = cfg.kv.get_or("subset_count", 100)?;
    let axis = cost_axis(cfg, CostAxis::Evaluations)?;
    let truth_file = cfg.path("truth")?;
    let pool = start(cfg)?;

    let d = model.num_variables();
    let mut w = create(&cfg.output.join("model.txt"))?;
    write_model(&mut w, &model)?;
    w.flush()?;
    let mask = if d == 128 { u128::MAX } else { (1u128 << d) - 1 };
    let functions = TestFunctions::Params;
    let f = functions.evaluator(&cfg.output)?;
    let joint = if d <= ENUMERATION_LIMIT { Some(enumerate_joint(&model)?) } else { None };
    let truth = ground_truth(cfg, truth_file, &functions, || match &joint {
        Some(j) => Ok(GroundTruth {
            provenance: format!("enumeration states={} functions={functions}", 1u64 << d),
            values: marginals_from_joint(j, d),
        }),
        None => {
            let seed = crate::runner::chain_seed(cfg.seed, "truth", 0);
            let mut s = GibbsSampler::new(&model, AcceptTest::Exact)?;
            let init = ChaCha8Rng::seed_from_u64(seed).random::<u128>() & mask;
            let values = long_run_mean(&mut s, init, truth_sweeps, seed, cfg.burn_in, &f)?;
            Ok(GroundTruth {
                provenance: format!(
                    "long-run sampler=gibbs test=exact sweeps={truth_sweeps} seed={seed} burn_in={} functions={functions}",
                    cfg.burn_in
                ),
                values,
            })
        }
    })?;

    let labels: Vec<String> = cfg.epsilons.iter().map(|&e| ensemble_label(e)).collect();
    let ensembles = run_ensembles(&pool, &cfg.output.join("chains"), &labels, cfg.chains, cfg.seed, |e, _, seed| {
        let mut s = GibbsSampler::new(&model, cfg.test_for(cfg.epsilons[e], usize::MAX))?;
        let init = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed).random::<u128>() & mask;
        Ok(traced_chain(&mut s, init, &settings(cfg, seed))?.0)
    })?;

    if let Some(joint) = &joint {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::runner::chain_seed(cfg.seed, "subsets", 0));
        let subsets = draw_subsets(d, subset_size.min(d), subset_count, &mut rng)?;
        let exact = SubsetMarginals::from_joint(joint, &subsets)?;
        let mut table = Table::new(&["ensemble", "subsets", "subset_size", "subset_l1"]);
        for ens in &ensembles {
            let mut tally = SubsetTally::new(subsets.clone())?;
            for t in ens.traces() {
                let recs = t.records();
                for r in &recs[(recs.len() as f64 * cfg.burn_in) as usize..] {
                    let state = r.params.iter().enumerate().fold(0u128, |s, (i, &b)| s | (u128::from(b != 0.0) << i));
                    tally.push(state);
                }
            }
            let l1 = subset_l1_error(&tally.marginals()?, &exact)?;
            table.row(vec![ens.label.clone(), subsets.len().to_string(), subset_size.min(d).to_string(), format!("{l1:.6}")]);
        }
        table.write(&cfg.output.join("subset_l1.tsv"))?;
    }
    report(cfg, &ensembles, &truth, &f, axis)
}

/// Settings for the random-walk analysis tables.
struct AnalysisSettings {
    pi1: f64,
    mu_grid: Vec<f64>,
    trials: usize,
    grid_size: usize,
}

fn analysis_settings(cfg: &RunConfig) -> Result<AnalysisSettings> {
    let pi1 = match cfg.kv.get::<f64>("pi1")? {
        Some(p) => p,
        None => {
            let n: usize = cfg.kv.get_or("population", 10_000)?;
            cfg.batch_size.min(n) as f64 / n as f64
        }
    };
    Ok(AnalysisSettings {
        pi1,
        mu_grid: cfg.kv.list("mu_std")?.unwrap_or_else(|| vec![0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 8.0]),
        trials: cfg.kv.get_or("trials", 100_000)?,
        grid_size: cfg.kv.get_or("grid_size", 256)?,
    })
}

/// DP and Monte-Carlo error and usage for every nonzero epsilon in the config.
pub fn analysis_rows(cfg: &RunConfig) -> Result<Table> {
    let s = analysis_settings(cfg)?;
    cfg.check_unused()?;
    dp_mc_table(cfg, &s)
}

fn dp_mc_table(cfg: &RunConfig, s: &AnalysisSettings) -> Result<Table> {
    let mut table = Table::new(&[
        "epsilon", "pi1", "alpha", "mu_std", "error_dp", "error_mc", "error_se", "usage_dp", "usage_mc", "usage_se",
    ]);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for &eps in cfg.epsilons.iter().filter(|&&e| e > 0.0) {
        let shape = TestShape::uniform(s.pi1, eps, cfg.bound_alpha)?;
        for r in analysis_table(&shape, &s.mu_grid, s.grid_size, s.trials, &mut rng)? {
            table.row(vec![
                eps.to_string(),
                s.pi1.to_string(),
                cfg.bound_alpha.to_string(),
                r.mu_std.to_string(),
                format!("{:.8e}", r.error_dp),
                format!("{:.8e}", r.error_mc),
                format!("{:.3e}", r.error_se),
                format!("{:.8e}", r.usage_dp),
                format!("{:.8e}", r.usage_mc),
                format!("{:.3e}", r.usage_se),
            ]);
        }
    }
    Ok(table)
}

fn analysis(cfg: &RunConfig) -> Result<Table> {
    let s = analysis_settings(cfg)?;
    let samples = cfg.path("samples")?;
    start(cfg)?;
    let table = dp_mc_table(cfg, &s)?;
    table.write(&cfg.output.join("analysis.tsv"))?;
    if let Some(p) = samples {
        let samples = read_moment_samples(open(&p)?).with_context(|| format!("reading {}", p.display()))?;
        let mut delta = Table::new(&["epsilon", "mu", "sigma_l", "n", "p_a", "p_a_approx", "delta", "abs_error_expectation"]);
        for &eps in cfg.epsilons.iter().filter(|&&e| e > 0.0) {
            let mut curves: BTreeMap<usize, TabulatedCurve> = BTreeMap::new();
            for m in &samples {
                if let Entry::Vacant(slot) = curves.entry(m.n) {
                    let spec = SequentialTestSpec::new(cfg.batch_size.min(m.n), eps).with_alpha(cfg.bound_alpha);
                    slot.insert(TabulatedCurve::build(&TestShape::from_spec(&spec, m.n)?, s.grid_size));
                }
                let r = delta_acceptance(&curves[&m.n], m.mu, m.sigma_l, m.n)?;
                delta.row(vec![
                    eps.to_string(),
                    format!("{:.10e}", m.mu),
                    format!("{:.10e}", m.sigma_l),
                    m.n.to_string(),
                    format!("{:.8e}", r.p_a_exact),
                    format!("{:.8e}", r.p_a_approx),
                    format!("{:.8e}", r.delta),
                    format!("{:.8e}", r.abs_error_expectation),
                ]);
            }
        }
        delta.write(&cfg.output.join("delta.tsv"))?;
    }
    Ok(table)
}

/// Moment samples for proposals `theta' = theta + sigma * xi` drawn at
/// `count` evenly spaced states of `trace` after the burn-in fraction.
/// Pairs whose `l_i` are all equal are skipped and counted.
pub fn collect_design_samples<M: PosteriorModel + ?Sized, R: Rng + ?Sized>(
    trace: &ChainTrace,
    model: &M,
    sigma: f64,
    count: usize,
    burn_in: f64,
    rng: &mut R,
) -> Result<(Vec<MomentSample>, usize)> {
    let recs = trace.records();
    let recs = &recs[((recs.len() as f64 * burn_in) as usize).min(recs.len().saturating_sub(1))..];
    if recs.is_empty() || count == 0 {
        bail!("no states to collect design samples from");
    }
    let mut out = Vec::with_capacity(count);
    let mut skipped = 0;
    for k in 0..count {
        let theta = &recs[k * recs.len() / count].params;
        let theta_p: Vec<f64> = theta
            .iter()
            .map(|t| {
                let xi: f64 = StandardNormal.sample(rng);
                t + sigma * xi
            })
            .collect();
        match moment_sample(model, theta, &theta_p, 0.0)? {
            Some(s) => out.push(s),
            None => skipped += 1,
        }
    }
    Ok((out, skipped))
}

/// Average-case and worst-case designs for each budget, as table rows.
pub fn design_table(samples: &[MomentSample], budgets: &[f64], grid: &DesignGrid, grid_size: usize) -> Result<Table> {
    let evaluator = DesignEvaluator::new(grid_size);
    let mut table = Table::new(&[
        "budget",
        "design",
        "status",
        "pi1",
        "epsilon",
        "alpha",
        "g0",
        "predicted_error",
        "predicted_usage",
        "grid_evaluations",
    ]);
    for &b in budgets {
        for (name, result) in [
            ("average", average_design(samples, b, grid, &evaluator)),
            ("worst-case", worst_case_design(b, grid, &evaluator)),
        ] {
            match result {
                Ok(r) => table.row(vec![
                    b.to_string(),
                    name.to_string(),
                    "ok".to_string(),
                    r.point.pi1.to_string(),
                    r.point.epsilon.to_string(),
                    r.point.alpha.to_string(),
                    format!("{:.6}", r.point.g0()),
                    format!("{:.6e}", r.predicted_error),
                    format!("{:.6e}", r.predicted_usage),
                    r.grid_evaluations.to_string(),
                ]),
                Err(seqmh_core::Error::InfeasibleDesign { .. }) => {
                    let mut row = vec![b.to_string(), name.to_string(), "infeasible".to_string()];
                    row.extend(std::iter::repeat_n("nan".to_string(), 7));
                    table.row(row);
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(table)
}

fn design_grid(cfg: &RunConfig) -> Result<DesignGrid> {
    let d = DesignGrid::default();
    Ok(DesignGrid {
        pi1: cfg.kv.list("grid_pi1")?.unwrap_or(d.pi1),
        epsilon: cfg.kv.list("grid_epsilon")?.unwrap_or(d.epsilon),
        alpha: cfg.kv.list("grid_alpha")?.unwrap_or(d.alpha),
    })
}

fn design(cfg: &RunConfig) -> Result<Table> {
    let budgets: Vec<f64> = cfg.kv.list("budgets")?.unwrap_or_else(|| vec![0.01, 0.05, 0.1]);
    let grid = design_grid(cfg)?;
    let grid_size: usize = cfg.kv.get_or("grid_size", 128)?;
    let samples_path = cfg.path("samples")?;
    let collect = if samples_path.is_none() {
        let setup = logistic_setup(cfg, 2000, 10, 0)?;
        Some((
            setup,
            cfg.kv.get_or("step", 0.01)?,
            cfg.kv.get_or("trial_iterations", 2000u64)?,
            cfg.kv.get_or("sample_count", 100usize)?,
        ))
    } else {
        None
    };
    start(cfg)?;

    let samples = match (samples_path, collect) {
        (Some(p), _) => read_moment_samples(open(&p)?).with_context(|| format!("reading {}", p.display()))?,
        (None, Some((setup, step, steps, count))) => {
            let model = &setup.model;
            let (init, _) = model.map_estimate(100)?;
            let seed = crate::runner::chain_seed(cfg.seed, "trial", 0);
            let mut s = RandomWalkSampler::new(model, step, AcceptTest::Exact)?;
            let run = RunSettings { budget: Budget::Iterations(steps), trace_every: 1, seed };
            let (trace, _) = run_chain(&mut s, init, &run, |_| {})?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let (samples, skipped) = collect_design_samples(&trace, model, step, count, cfg.burn_in, &mut rng)?;
            if skipped > 0 {
                eprintln!("note: skipped {skipped} proposal pairs with constant log-likelihood differences");
            }
            let mut w = create(&cfg.output.join("samples.tsv"))?;
            write_moment_samples(&mut w, &samples)?;
            w.flush()?;
            samples
        }
        (None, None) => unreachable!("samples are either read or collected"),
    };
    let table = design_table(&samples, &budgets, &grid, grid_size)?;
    table.write(&cfg.output.join("design.tsv"))?;
    Ok(table)
}
