//! Deterministic partitioning of record indices (fit/test splits, k folds).

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    fractions: Vec<f64>,
    seed: u64,
}

impl SplitSpec {
    pub fn new(fractions: Vec<f64>, seed: u64) -> Result<Self> {
        if fractions.len() < 2 {
            return Err(Error::Split(format!(
                "need at least 2 fractions, got {}",
                fractions.len()
            )));
        }
        if let Some(f) = fractions.iter().find(|f| !(f.is_finite() && **f > 0.0)) {
            return Err(Error::Split(format!("fraction {f} is not positive")));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Split(format!("fractions sum to {sum}, expected 1")));
        }
        Ok(SplitSpec { fractions, seed })
    }

    /// Two-way split: `fit_fraction` of the records, then the rest.
    pub fn holdout(fit_fraction: f64, seed: u64) -> Result<Self> {
        Self::new(vec![fit_fraction, 1.0 - fit_fraction], seed)
    }

    /// `k` equal folds.
    pub fn folds(k: usize, seed: u64) -> Result<Self> {
        Self::new(vec![1.0 / k as f64; k], seed)
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Partition sizes by largest-remainder rounding of `fraction * n`.
/// Ties in the remainder go to the earlier partition.
pub fn partition_sizes(n: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Shuffle `0..n` with the spec's seed and cut it into consecutive pieces of
/// the largest-remainder sizes. Each partition is returned in ascending order.
pub fn split_records(n: usize, spec: &SplitSpec) -> Result<Vec<Vec<usize>>> {
    let k = spec.fractions.len();
    if n < k {
        return Err(Error::EmptyInput(format!(
            "cannot split {n} records into {k} partitions"
        )));
    }
    let sizes = partition_sizes(n, &spec.fractions);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(spec.seed));
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for size in sizes {
        let mut part = idx[start..start + size].to_vec();
        part.sort_unstable();
        out.push(part);
        start += size;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sixty_forty_of_ten() {
        let spec = SplitSpec::new(vec![0.6, 0.4], 7).unwrap();
        let parts = split_records(10, &spec).unwrap();
        assert_eq!(parts[0].len(), 6);
        assert_eq!(parts[1].len(), 4);
        assert_eq!(parts, split_records(10, &spec).unwrap());
    }

    #[test]
    fn three_folds_of_943() {
        let sizes: Vec<usize> = split_records(943, &SplitSpec::folds(3, 1).unwrap())
            .unwrap()
            .iter()
            .map(Vec::len)
            .collect();
        let mut sorted = sizes.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![314, 314, 315]);
        assert_eq!(sizes.iter().sum::<usize>(), 943);
    }

    #[test]
    fn largest_remainder_by_hand() {
        // quotas 1.5, 2.7, 0.8 -> floors 1, 2, 0 (3 assigned), 2 left to 0.8 and 0.7
        assert_eq!(partition_sizes(5, &[0.3, 0.54, 0.16]), vec![1, 3, 1]);
    }

    #[test]
    fn invalid_specs() {
        assert!(SplitSpec::new(vec![1.0], 0).is_err());
        assert!(SplitSpec::new(vec![0.5, 0.6], 0).is_err());
        assert!(SplitSpec::new(vec![1.0, 0.0], 0).is_err());
        assert!(SplitSpec::new(vec![-0.5, 1.5], 0).is_err());
        let spec = SplitSpec::folds(3, 0).unwrap();
        assert!(matches!(split_records(2, &spec), Err(Error::EmptyInput(_))));
    }

    proptest! {
        #[test]
        fn partitions_cover_exactly(n in 3usize..400, seed in any::<u64>(), a in 0.05f64..0.9) {
            let spec = SplitSpec::new(vec![a * 0.5, a * 0.5, 1.0 - a], seed).unwrap();
            let parts = split_records(n, &spec).unwrap();
            let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            for (p, f) in parts.iter().zip(spec.fractions()) {
                prop_assert!((p.len() as f64 - f * n as f64).abs() < 1.0 + 1e-9);
            }
        }
    }
}
