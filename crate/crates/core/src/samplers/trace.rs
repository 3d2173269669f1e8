use super::ChainStats;
use crate::error::{Error, Result};
use std::io::{BufRead, Write};

/// One recorded chain state.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: u64,
    pub params: Vec<f64>,
    pub accept: bool,
    pub n_used: usize,
    pub cumulative_evals: u64,
    pub elapsed_ns: u64,
}

/// Recorded states of a chain plus whole-chain counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    pub dim: usize,
    pub num_data: usize,
    records: Vec<TraceRecord>,
    pub stats: ChainStats,
    /// Set when the chain stopped on an error; `error` has the message.
    pub partial: bool,
    pub error: Option<String>,
}

impl ChainTrace {
    pub fn new(dim: usize, num_data: usize) -> Self {
        Self { dim, num_data, records: Vec::new(), stats: ChainStats::default(), partial: false, error: None }
    }

    pub fn push(&mut self, r: TraceRecord) {
        debug_assert_eq!(r.params.len(), self.dim);
        self.records.push(r);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Writes a `#` metadata line, a header row and one tab-separated row per record.
/// Reals use 17 significant digits.
pub fn write_trace<W: Write>(mut w: W, t: &ChainTrace) -> std::io::Result<()> {
    writeln!(
        w,
        "# trace dim={} n={} steps={} accepted={} evaluations={} grad_evals={} max_stages={} partial={}",
        t.dim,
        t.num_data,
        t.stats.steps,
        t.stats.accepted,
        t.stats.evaluations,
        t.stats.grad_evals,
        t.stats.max_stages,
        u8::from(t.partial)
    )?;
    let mut header = vec!["step".to_string()];
    header.extend((0..t.dim).map(|j| format!("p{j}")));
    header.extend(["accept", "n_used", "cumulative_evals", "elapsed_ns"].map(String::from));
    writeln!(w, "{}", header.join("\t"))?;
    for r in &t.records {
        write!(w, "{}", r.step)?;
        for p in &r.params {
            write!(w, "\t{p:.16e}")?;
        }
        writeln!(w, "\t{}\t{}\t{}\t{}", u8::from(r.accept), r.n_used, r.cumulative_evals, r.elapsed_ns)?;
    }
    Ok(())
}

fn meta_value<T: std::str::FromStr>(line: &str, key: &str) -> Result<T> {
    line.split_whitespace()
        .find_map(|tok| tok.strip_prefix(key).and_then(|s| s.strip_prefix('=')))
        .ok_or_else(|| Error::Parse(format!("trace metadata lacks {key}")))?
        .parse()
        .map_err(|_| Error::Parse(format!("bad {key} in trace metadata")))
}

pub fn read_trace<R: BufRead>(r: R) -> Result<ChainTrace> {
    let mut lines = r.lines();
    let mut next = || -> Result<Option<String>> { lines.next().transpose().map_err(|e| Error::Parse(e.to_string())) };
    let meta = next()?.ok_or(Error::Empty("trace"))?;
    if !meta.starts_with("# trace") {
        return Err(Error::Parse("trace must start with '# trace'".into()));
    }
    let mut t = ChainTrace::new(meta_value(&meta, "dim")?, meta_value(&meta, "n")?);
    t.stats.steps = meta_value(&meta, "steps")?;
    t.stats.accepted = meta_value(&meta, "accepted")?;
    t.stats.evaluations = meta_value(&meta, "evaluations")?;
    t.stats.grad_evals = meta_value(&meta, "grad_evals")?;
    t.stats.max_stages = meta_value(&meta, "max_stages")?;
    t.partial = meta_value::<u8>(&meta, "partial")? != 0;
    let _header = next()?.ok_or_else(|| Error::Parse("missing header row".into()))?;
    let mut lineno = 2;
    while let Some(line) = next()? {
        lineno += 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != t.dim + 5 {
            return Err(Error::Parse(format!("line {lineno}: expected {} fields, found {}", t.dim + 5, f.len())));
        }
        let bad = |what: &str| Error::Parse(format!("line {lineno}: bad {what}"));
        let params = f[1..=t.dim]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| bad("parameter")))
            .collect::<Result<Vec<_>>>()?;
        let k = t.dim + 1;
        t.records.push(TraceRecord {
            step: f[0].parse().map_err(|_| bad("step"))?,
            params,
            accept: f[k] == "1",
            n_used: f[k + 1].parse().map_err(|_| bad("n_used"))?,
            cumulative_evals: f[k + 2].parse().map_err(|_| bad("cumulative_evals"))?,
            elapsed_ns: f[k + 3].parse().map_err(|_| bad("elapsed_ns"))?,
        });
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut t = ChainTrace::new(2, 10);
        t.push(TraceRecord { step: 0, params: vec![0.1, -1.0 / 3.0], accept: true, n_used: 0, cumulative_evals: 0, elapsed_ns: 0 });
        t.push(TraceRecord { step: 10, params: vec![1e-300, 2.5e17], accept: false, n_used: 7, cumulative_evals: 55, elapsed_ns: 1234 });
        t.stats.steps = 10;
        t.stats.evaluations = 55;
        let mut buf = Vec::new();
        write_trace(&mut buf, &t).unwrap();
        let back = read_trace(buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_malformed() {
        assert!(read_trace("step\tp0\n".as_bytes()).is_err());
        let bad = "# trace dim=1 n=3 steps=0 accepted=0 evaluations=0 grad_evals=0 max_stages=0 partial=0\nh\n0\t0.5\t1\n";
        assert!(read_trace(bad.as_bytes()).is_err());
    }
}
