use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};

pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

/// `round(fraction * n_cases)` clamped to `[1, n_cases - 1]`.
pub fn test_case_count(n_cases: usize, test_fraction: f64) -> Result<usize> {
    if n_cases < 2 {
        return Err(Error::Data(format!("need at least 2 cases to split, got {n_cases}")));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test fraction {test_fraction} must lie in (0, 1)")));
    }
    Ok(((test_fraction * n_cases as f64).round() as usize).clamp(1, n_cases - 1))
}

/// Splits at case granularity into `(train, test)`. Record order within each
/// side follows the input.
pub fn split_by_case(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut cases = dataset.case_ids();
    let n_test = test_case_count(cases.len(), test_fraction)?;
    cases.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_ids: HashSet<u32> = cases[..n_test].iter().copied().collect();
    let (test, train): (Vec<_>, Vec<_>) = dataset.records.iter().cloned().partition(|r| test_ids.contains(&r.case_id));
    Ok((Dataset::new(dataset.task, train), Dataset::new(dataset.task, test)))
}
