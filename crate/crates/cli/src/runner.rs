//! Multi-chain execution with per-chain trace files, reused on rerun.

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use seqmh_core::samplers::{read_trace, write_trace, ChainTrace};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

/// Environment variable that overrides the configured worker count.
pub const WORKERS_ENV: &str = "SEQMH_WORKERS";

/// Named per-chain counts (stages histogram, move statistics, ...).
pub type Counters = BTreeMap<String, u64>;

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub trace: ChainTrace,
    pub counters: Counters,
}

/// One group of chains sharing a sampler configuration.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub label: String,
    pub chains: Vec<ChainOutput>,
}

impl Ensemble {
    pub fn traces(&self) -> impl Iterator<Item = &ChainTrace> {
        self.chains.iter().map(|c| &c.trace)
    }

    /// Counters summed over chains.
    pub fn counters(&self) -> Counters {
        let mut out = Counters::new();
        for c in &self.chains {
            for (k, v) in &c.counters {
                *out.entry(k.clone()).or_default() += v;
            }
        }
        out
    }
}

/// Worker count: the environment override, else the config value, else all cores.
pub fn worker_count(configured: Option<usize>) -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| format!("{WORKERS_ENV}='{v}' is not a count"))?;
            if n == 0 {
                bail!("{WORKERS_ENV} must be positive");
            }
            Ok(n)
        }
        Err(_) => Ok(configured.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))),
    }
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().context("building worker pool")
}

/// Seed for chain `chain` of ensemble `label`, stable under reordering of ensembles.
pub fn chain_seed(base: u64, label: &str, chain: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix(splitmix(base ^ h) ^ chain as u64)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn trace_path(dir: &Path, label: &str, chain: usize) -> PathBuf {
    dir.join(format!("{label}_c{chain}.tsv"))
}

fn counters_path(dir: &Path, label: &str, chain: usize) -> PathBuf {
    dir.join(format!("{label}_c{chain}.counts"))
}

fn load_complete(dir: &Path, label: &str, chain: usize) -> Result<Option<ChainOutput>> {
    let tp = trace_path(dir, label, chain);
    let cp = counters_path(dir, label, chain);
    if !tp.exists() || !cp.exists() {
        return Ok(None);
    }
    let trace = read_trace(BufReader::new(std::fs::File::open(&tp)?)).with_context(|| format!("reading {}", tp.display()))?;
    if trace.partial {
        return Ok(None);
    }
    let mut counters = Counters::new();
    for line in BufReader::new(std::fs::File::open(&cp)?).lines() {
        let line = line?;
        if let Some((k, v)) = line.split_once('\t') {
            counters.insert(k.to_string(), v.trim().parse().with_context(|| format!("in {}", cp.display()))?);
        }
    }
    Ok(Some(ChainOutput { trace, counters }))
}

fn store(dir: &Path, label: &str, chain: usize, out: &ChainOutput) -> Result<()> {
    let tp = trace_path(dir, label, chain);
    let mut w = BufWriter::new(std::fs::File::create(&tp).with_context(|| format!("creating {}", tp.display()))?);
    write_trace(&mut w, &out.trace)?;
    w.flush()?;
    // Counters go last: their presence marks the chain as complete.
    let cp = counters_path(dir, label, chain);
    let mut w = BufWriter::new(std::fs::File::create(&cp).with_context(|| format!("creating {}", cp.display()))?);
    for (k, v) in &out.counters {
        writeln!(w, "{k}\t{v}")?;
    }
    w.flush()?;
    Ok(())
}

/// Runs `chains` chains for every label, skipping chains whose complete trace
/// is already in `dir`. `job(label_index, chain, seed)` runs one chain.
pub fn run_ensembles<F>(
    pool: &rayon::ThreadPool,
    dir: &Path,
    labels: &[String],
    chains: usize,
    base_seed: u64,
    job: F,
) -> Result<Vec<Ensemble>>
where
    F: Fn(usize, usize, u64) -> Result<ChainOutput> + Sync,
{
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let tasks: Vec<(usize, usize)> = (0..labels.len()).flat_map(|e| (0..chains).map(move |c| (e, c))).collect();
    let write_lock = Mutex::new(());
    let results: Vec<Result<ChainOutput>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(e, c)| {
                let label = &labels[e];
                if let Some(done) = load_complete(dir, label, c)? {
                    return Ok(done);
                }
                let out = job(e, c, chain_seed(base_seed, label, c)).with_context(|| format!("chain {label}#{c}"))?;
                let _guard = write_lock.lock().unwrap_or_else(|p| p.into_inner());
                store(dir, label, c, &out)?;
                Ok(out)
            })
            .collect()
    });
    let mut ensembles: Vec<Ensemble> =
        labels.iter().map(|l| Ensemble { label: l.clone(), chains: Vec::with_capacity(chains) }).collect();
    for (&(e, _), r) in tasks.iter().zip(results) {
        ensembles[e].chains.push(r?);
    }
    Ok(ensembles)
}

/// Groups trace files named `<label>_c<k>.tsv` by label, in chain order.
pub fn load_trace_dir(dir: &Path) -> Result<Vec<(String, Vec<ChainTrace>)>> {
    let mut groups: BTreeMap<String, BTreeMap<usize, ChainTrace>> = BTreeMap::new();
    let entries = std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))?;
    for entry in entries {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(stem) = name.strip_suffix(".tsv") else { continue };
        let Some((label, chain)) = stem.rsplit_once("_c") else { continue };
        let Ok(chain) = chain.parse::<usize>() else { continue };
        let trace = read_trace(BufReader::new(std::fs::File::open(&path)?))
            .with_context(|| format!("reading {}", path.display()))?;
        groups.entry(label.to_string()).or_default().insert(chain, trace);
    }
    if groups.is_empty() {
        bail!("no chain traces ('<label>_c<k>.tsv') in {}", dir.display());
    }
    Ok(groups.into_iter().map(|(l, m)| (l, m.into_values().collect())).collect())
}
