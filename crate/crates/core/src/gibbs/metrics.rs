use super::FactorizedBinaryModel;
use crate::error::{invalid, Error, Result};
use rand::seq::index;
use rand::Rng;

/// Largest model [`enumerate_joint`] accepts.
pub const MAX_ENUMERATION_VARIABLES: usize = 24;

/// Normalized `P(state)` for every state, indexed by the state bitmask.
pub fn enumerate_joint(model: &FactorizedBinaryModel) -> Result<Vec<f64>> {
    let d = model.num_variables();
    if d > MAX_ENUMERATION_VARIABLES {
        return Err(invalid(format!("cannot enumerate {d} variables")));
    }
    let logw: Vec<f64> = (0..1u128 << d).map(|s| model.log_weight(s)).collect();
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn all_subsets(d: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..size).collect();
    loop {
        out.push(cur.clone());
        let Some(pos) = (0..size).rev().find(|&p| cur[p] < d - size + p) else {
            return out;
        };
        cur[pos] += 1;
        for q in pos + 1..size {
            cur[q] = cur[q - 1] + 1;
        }
    }
}

/// `count` variable subsets of `size`, each sorted. Draws are without
/// replacement inside a subset and independent across subsets; when there are
/// at most `count` distinct subsets, all of them are returned instead.
pub fn draw_subsets<R: Rng + ?Sized>(d: usize, size: usize, count: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if size == 0 || size > d || size > 16 {
        return Err(invalid(format!("subset size {size} must lie in 1..={}", d.min(16))));
    }
    if count == 0 {
        return Err(Error::Empty("subsets"));
    }
    if binomial(d, size) <= count as f64 {
        return Ok(all_subsets(d, size));
    }
    Ok((0..count)
        .map(|_| {
            let mut s = index::sample(rng, d, size).into_vec();
            s.sort_unstable();
            s
        })
        .collect())
}

fn config_index(subset: &[usize], state: u128) -> usize {
    subset.iter().enumerate().fold(0, |acc, (k, &v)| acc | ((((state >> v) & 1) as usize) << k))
}

/// Joint distributions over a list of equal-size variable subsets.
///
/// Entry `b` of a subset's table is the probability that its `k`-th variable
/// equals bit `k` of `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetMarginals {
    pub size: usize,
    pub probs: Vec<Vec<f64>>,
}

impl SubsetMarginals {
    pub fn from_joint(joint: &[f64], subsets: &[Vec<usize>]) -> Result<Self> {
        let size = subsets.first().ok_or(Error::Empty("subsets"))?.len();
        if !joint.len().is_power_of_two() {
            return Err(invalid("joint length must be a power of two"));
        }
        let mut probs = vec![vec![0.0; 1 << size]; subsets.len()];
        for (s, p) in subsets.iter().zip(probs.iter_mut()) {
            if s.len() != size {
                return Err(invalid("subsets must have equal size"));
            }
            for (state, &w) in joint.iter().enumerate() {
                p[config_index(s, state as u128)] += w;
            }
        }
        Ok(Self { size, probs })
    }
}

/// Counts subset configurations along a chain.
#[derive(Debug, Clone)]
pub struct SubsetTally {
    subsets: Vec<Vec<usize>>,
    counts: Vec<Vec<u64>>,
    total: u64,
}

impl SubsetTally {
    pub fn new(subsets: Vec<Vec<usize>>) -> Result<Self> {
        let size = subsets.first().ok_or(Error::Empty("subsets"))?.len();
        if subsets.iter().any(|s| s.len() != size) {
            return Err(invalid("subsets must have equal size"));
        }
        let counts = vec![vec![0; 1 << size]; subsets.len()];
        Ok(Self { subsets, counts, total: 0 })
    }

    pub fn push(&mut self, state: u128) {
        for (s, c) in self.subsets.iter().zip(self.counts.iter_mut()) {
            c[config_index(s, state)] += 1;
        }
        self.total += 1;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    pub fn marginals(&self) -> Result<SubsetMarginals> {
        if self.total == 0 {
            return Err(Error::Empty("trace"));
        }
        let t = self.total as f64;
        Ok(SubsetMarginals {
            size: self.subsets[0].len(),
            probs: self.counts.iter().map(|c| c.iter().map(|&x| x as f64 / t).collect()).collect(),
        })
    }
}

/// Mean over subsets of the L1 distance between the two subset joints.
pub fn subset_l1_error(estimate: &SubsetMarginals, truth: &SubsetMarginals) -> Result<f64> {
    if estimate.probs.is_empty() {
        return Err(Error::Empty("subsets"));
    }
    if estimate.size != truth.size || estimate.probs.len() != truth.probs.len() {
        return Err(Error::DimensionMismatch { expected: truth.probs.len(), got: estimate.probs.len() });
    }
    let total: f64 = estimate
        .probs
        .iter()
        .zip(&truth.probs)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .sum();
    Ok(total / estimate.probs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn subsets_enumerated_when_few() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = draw_subsets(7, 5, 1600, &mut rng).unwrap();
        assert_eq!(s.len(), 21);
        let big = draw_subsets(100, 5, 1600, &mut rng).unwrap();
        assert_eq!(big.len(), 1600);
        assert!(big.iter().all(|s| s.windows(2).all(|w| w[0] < w[1])));
    }

    #[test]
    fn weights_of_enumeration_give_zero_error() {
        let m = FactorizedBinaryModel::dense_triples(6, 0.3, 1).unwrap();
        let joint = enumerate_joint(&m).unwrap();
        assert!((joint.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let subsets = draw_subsets(6, 5, 100, &mut rng).unwrap();
        let a = SubsetMarginals::from_joint(&joint, &subsets).unwrap();
        assert_eq!(subset_l1_error(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_supports_give_two() {
        let subsets = vec![vec![0, 1, 2, 3, 4], vec![1, 2, 3, 4, 5]];
        let mut a = SubsetTally::new(subsets.clone()).unwrap();
        let mut b = SubsetTally::new(subsets).unwrap();
        a.push(0);
        b.push(u128::MAX);
        let e = subset_l1_error(&a.marginals().unwrap(), &b.marginals().unwrap()).unwrap();
        assert_eq!(e, 2.0);
        let empty = SubsetTally::new(vec![vec![0]]).unwrap();
        assert!(empty.marginals().is_err());
    }

    #[test]
    fn tally_matches_joint_on_weighted_states() {
        let subsets = vec![vec![0, 2], vec![1, 2]];
        let mut joint = vec![0.0; 8];
        let mut t = SubsetTally::new(subsets.clone()).unwrap();
        for (s, reps) in [(0b101u128, 3), (0b010, 1)] {
            joint[s as usize] += reps as f64 / 4.0;
            for _ in 0..reps {
                t.push(s);
            }
        }
        let a = SubsetMarginals::from_joint(&joint, &subsets).unwrap();
        assert_eq!(t.marginals().unwrap(), a);
    }
}
