use rand::seq::SliceRandom;
use vmc_core::{DemoDataset, RngPolicy};
use vmc_envdata::Environment;

use crate::config::BCConfig;
use crate::trainer::{train_bc, BCResult};
use crate::BcError;

/// Seed-shuffled episode order; the first `k` entries are the demonstrations
/// used when `k` are requested, so smaller counts are nested in larger ones.
pub fn demo_order(seed: u64, episodes: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..episodes).collect();
    order.shuffle(&mut RngPolicy::new(seed).rng("bc/demos", 0));
    order
}

/// One [`train_bc`] run per demonstration count, aligned with `counts`.
pub fn data_efficiency_sweep<E: Environment>(
    base: &BCConfig,
    dataset: &DemoDataset,
    make_env: &dyn Fn() -> E,
    counts: &[usize],
) -> Result<Vec<BCResult>, BcError> {
    if let Some(&max) = counts.iter().max() {
        if max > dataset.episodes.len() {
            return Err(BcError::InsufficientData { needed: max, got: dataset.episodes.len() });
        }
    }
    counts
        .iter()
        .map(|&k| train_bc(&BCConfig { demo_count: Some(k), ..base.clone() }, dataset, make_env))
        .collect()
}
