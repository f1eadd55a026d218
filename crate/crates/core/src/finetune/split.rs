use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::FinetuneError;
use crate::rng::substream;

/// Repeated random train/test partitioning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitPlan {
    pub train_fraction: f64,
    pub repetitions: usize,
    /// Repetition `r` shuffles with seed `base_seed + r`.
    pub base_seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan {
            train_fraction: 0.9,
            repetitions: 10,
            base_seed: 0,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<(), FinetuneError> {
        if self.repetitions == 0 {
            return Err(FinetuneError::InvalidPlan("repetitions must be at least 1"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(FinetuneError::InvalidPlan("train_fraction must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn test_size(&self, n: usize) -> usize {
        libm::round((1.0 - self.train_fraction) * n as f64) as usize
    }
}

/// Example indices of one repetition, each side in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One independent uniform shuffle per repetition; the first
/// `round((1 - train_fraction) * n)` shuffled indices form the test side.
pub fn make_splits(n: usize, plan: &SplitPlan) -> Result<Vec<Split>, FinetuneError> {
    plan.validate()?;
    if n < 10 {
        return Err(FinetuneError::TooFewExamples(n));
    }
    let k = plan.test_size(n);
    Ok((0..plan.repetitions)
        .map(|r| {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut substream(plan.base_seed.wrapping_add(r as u64), 0));
            let mut test = perm[..k].to_vec();
            let mut train = perm[k..].to_vec();
            test.sort_unstable();
            train.sort_unstable();
            Split { train, test }
        })
        .collect())
}
