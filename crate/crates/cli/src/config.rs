//! Flat `key = value` run configuration.

use anyhow::{anyhow, bail, Context, Result};
use seqmh_core::samplers::Budget;
use seqmh_core::SequentialTestSpec;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

/// Parsed key-value file. Lines are `key = value`; `#` starts a comment.
#[derive(Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
    used: std::sync::Mutex<std::collections::BTreeSet<String>>,
}

impl Clone for KeyValues {
    fn clone(&self) -> Self {
        let used = self.used.lock().unwrap_or_else(|p| p.into_inner()).clone();
        Self { entries: self.entries.clone(), used: std::sync::Mutex::new(used) }
    }
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected 'key = value'", n + 1))?;
            let key = k.trim().to_string();
            if key.is_empty() {
                bail!("line {}: empty key", n + 1);
            }
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                bail!("line {}: duplicate key '{key}'", n + 1);
            }
        }
        Ok(Self { entries, used: Default::default() })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.used.lock().unwrap_or_else(|p| p.into_inner()).insert(key.to_string());
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("key '{key}': cannot parse '{v}': {e}")))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| anyhow!("missing required key '{key}'"))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|p| p.trim().parse::<T>().map_err(|e| anyhow!("key '{key}': cannot parse '{p}': {e}")))
                    .collect()
            })
            .transpose()
    }

    /// Keys present in the file but never read.
    pub fn unused(&self) -> Vec<String> {
        let used = self.used.lock().unwrap_or_else(|p| p.into_inner());
        self.entries.keys().filter(|k| !used.contains(*k)).cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    RandomWalkLogistic,
    SgldLasso,
    Rjmcmc,
    GibbsMrf,
    Analysis,
    Design,
}

impl FromStr for ExperimentKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "random-walk-logistic" => Self::RandomWalkLogistic,
            "sgld-lasso" => Self::SgldLasso,
            "rjmcmc" => Self::Rjmcmc,
            "gibbs-mrf" => Self::GibbsMrf,
            "analysis" => Self::Analysis,
            "design" => Self::Design,
            other => bail!(
                "unknown experiment '{other}' (expected random-walk-logistic, sgld-lasso, rjmcmc, gibbs-mrf, analysis or design)"
            ),
        })
    }
}

/// Settings shared by every experiment.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub output: PathBuf,
    pub chains: usize,
    pub budget: Budget,
    pub trace_every: u64,
    pub workers: Option<usize>,
    /// One chain ensemble per entry; 0 means the exact test.
    pub epsilons: Vec<f64>,
    pub batch_size: usize,
    pub bound_alpha: f64,
    pub burn_in: f64,
    pub risk_points: usize,
    /// Directory that relative paths in the file resolve against.
    pub base: PathBuf,
    /// The file's text, stamped into the output directory.
    pub text: String,
    pub kv: KeyValues,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_text(&text, base).with_context(|| format!("in config {}", path.display()))
    }

    /// Relative output paths are resolved against `base`.
    pub fn from_text(text: &str, base: &Path) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        let kind: ExperimentKind = kv.require("experiment")?;
        let output: PathBuf = kv.get_or("output", PathBuf::from("out"))?;
        let output = if output.is_absolute() { output } else { base.join(output) };
        let budget = match (kv.get::<u64>("iterations")?, kv.get::<u64>("evaluations")?, kv.get::<f64>("seconds")?) {
            (Some(n), None, None) => Budget::Iterations(n),
            (None, Some(n), None) => Budget::Evaluations(n),
            (None, None, Some(s)) if s > 0.0 => Budget::WallClock(Duration::from_secs_f64(s)),
            (None, None, None) => Budget::Iterations(1000),
            _ => bail!("set exactly one of 'iterations', 'evaluations' or 'seconds' (positive)"),
        };
        let epsilons = kv.list::<f64>("epsilon")?.unwrap_or_else(|| vec![0.05]);
        let batch_size = kv.get_or("batch_size", 500usize)?;
        let bound_alpha = kv.get_or("bound_alpha", 0.5)?;
        for &e in &epsilons {
            SequentialTestSpec::new(batch_size.max(1), e).with_alpha(bound_alpha).validate(usize::MAX)?;
        }
        let cfg = Self {
            kind,
            seed: kv.get_or("seed", 1u64)?,
            output,
            chains: kv.get_or("chains", 1usize)?,
            budget,
            trace_every: kv.get_or("trace_every", 10u64)?,
            workers: kv.get("workers")?,
            epsilons,
            batch_size,
            bound_alpha,
            burn_in: kv.get_or("burn_in", seqmh_core::risk::DEFAULT_BURN_IN)?,
            risk_points: kv.get_or("risk_points", 20usize)?,
            base: base.to_path_buf(),
            text: text.to_string(),
            kv,
        };
        if cfg.risk_points == 0 {
            bail!("'risk_points' must be positive");
        }
        if cfg.chains == 0 {
            bail!("'chains' must be positive");
        }
        if cfg.trace_every == 0 {
            bail!("'trace_every' must be positive");
        }
        if batch_size == 0 {
            bail!("'batch_size' must be positive");
        }
        if !(0.0..1.0).contains(&cfg.burn_in) {
            bail!("'burn_in' must lie in [0, 1)");
        }
        Ok(cfg)
    }

    /// Optional path-valued key, resolved against the config's directory.
    pub fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.kv.get::<PathBuf>(key)?.map(|p| if p.is_absolute() { p } else { self.base.join(p) }))
    }

    /// Test for one epsilon entry, with the batch clamped to the population.
    pub fn test_for(&self, epsilon: f64, population: usize) -> seqmh_core::AcceptTest {
        if epsilon == 0.0 {
            seqmh_core::AcceptTest::Exact
        } else {
            let m = self.batch_size.min(population);
            seqmh_core::AcceptTest::Sequential(SequentialTestSpec::new(m, epsilon).with_alpha(self.bound_alpha))
        }
    }

    /// Fails on keys that no part of the experiment read.
    pub fn check_unused(&self) -> Result<()> {
        let unused = self.kv.unused();
        if unused.is_empty() {
            Ok(())
        } else {
            bail!("unknown config keys: {}", unused.join(", "))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_defaults() {
        let cfg = RunConfig::from_text(
            "experiment = analysis # comment\nseed=7\nepsilon = 0, 0.01\nevaluations = 100\n",
            Path::new("/tmp"),
        )
        .unwrap();
        assert_eq!(cfg.kind, ExperimentKind::Analysis);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.epsilons, vec![0.0, 0.01]);
        assert_eq!(cfg.budget, Budget::Evaluations(100));
        assert_eq!(cfg.output, PathBuf::from("/tmp/out"));
        assert!(matches!(cfg.test_for(0.0, 10), seqmh_core::AcceptTest::Exact));
    }

    #[test]
    fn rejects_bad_input() {
        let base = Path::new(".");
        assert!(RunConfig::from_text("seed = 1\n", base).is_err());
        assert!(RunConfig::from_text("experiment = nope\n", base).is_err());
        assert!(RunConfig::from_text("experiment = analysis\niterations = 1\nseconds = 2\n", base).is_err());
        assert!(RunConfig::from_text("experiment = analysis\nepsilon = 0.7\n", base).is_err());
        assert!(KeyValues::parse("a = 1\na = 2\n").is_err());
        assert!(KeyValues::parse("novalue\n").is_err());
    }

    #[test]
    fn reports_unused_keys() {
        let cfg = RunConfig::from_text("experiment = analysis\ntypo_key = 3\n", Path::new(".")).unwrap();
        assert!(cfg.check_unused().unwrap_err().to_string().contains("typo_key"));
    }
}
