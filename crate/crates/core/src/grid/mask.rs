use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GridError;

/// Observability levels in curriculum order, percent of bus-phases metered.
pub const OBSERVABILITY_LEVELS: [u32; 17] = [80, 75, 70, 65, 60, 55, 50, 45, 40, 35, 30, 25, 20, 15, 10, 5, 1];

/// Which bus-phases carry a direct voltage measurement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservabilityMask {
    observed: Vec<bool>,
}

impl ObservabilityMask {
    pub fn new(observed: Vec<bool>) -> Self {
        ObservabilityMask { observed }
    }

    pub fn all_observed(n: usize) -> Self {
        ObservabilityMask {
            observed: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn is_observed(&self, node: usize) -> bool {
        self.observed[node]
    }

    pub fn count(&self) -> usize {
        self.observed.iter().filter(|o| **o).count()
    }

    /// Indices of unobserved nodes, the supervision targets.
    pub fn masked_nodes(&self) -> Vec<usize> {
        (0..self.observed.len()).filter(|&i| !self.observed[i]).collect()
    }
}

fn quota(p_obs: u32, n: usize) -> Result<usize, GridError> {
    if !OBSERVABILITY_LEVELS.contains(&p_obs) {
        return Err(GridError::Level(p_obs));
    }
    // round-half-up of p * n / 100 in exact integer arithmetic
    Ok((p_obs as usize * n + 50) / 100)
}

/// Marks exactly `round(p_obs / 100 * n_nodes)` nodes observed, uniformly at
/// random under `seed`.
///
/// Masks drawn with the same seed are nested: the observed set at a lower
/// level is a subset of the observed set at any higher level.
pub fn sample_mask(n_nodes: usize, p_obs: u32, seed: u64) -> Result<ObservabilityMask, GridError> {
    sample_mask_anchored(n_nodes, p_obs, seed, &[])
}

/// Like [`sample_mask`], but `anchors` are always observed and excluded from
/// the random draw; the quota applies to the remaining nodes.
pub fn sample_mask_anchored(
    n_nodes: usize,
    p_obs: u32,
    seed: u64,
    anchors: &[usize],
) -> Result<ObservabilityMask, GridError> {
    let mut observed = vec![false; n_nodes];
    for &a in anchors {
        observed[a] = true;
    }
    let mut candidates: Vec<usize> = (0..n_nodes).filter(|i| !observed[*i]).collect();
    let k = quota(p_obs, candidates.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    for &i in &candidates[..k] {
        observed[i] = true;
    }
    Ok(ObservabilityMask { observed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eighty_percent_of_hundred() {
        assert_eq!(sample_mask(100, 80, 11).unwrap().count(), 80);
    }

    #[test]
    fn one_percent_of_hundred() {
        for seed in 0..20 {
            assert_eq!(sample_mask(100, 1, seed).unwrap().count(), 1);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        assert_eq!(sample_mask(57, 35, 9).unwrap(), sample_mask(57, 35, 9).unwrap());
        assert_ne!(sample_mask(57, 35, 9).unwrap(), sample_mask(57, 35, 10).unwrap());
    }

    #[test]
    fn off_schedule_level_rejected() {
        assert_eq!(sample_mask(10, 3, 0).unwrap_err(), GridError::Level(3));
        assert_eq!(sample_mask(10, 90, 0).unwrap_err(), GridError::Level(90));
    }

    #[test]
    fn anchors_always_observed() {
        let m = sample_mask_anchored(103, 1, 4, &[0, 1, 2]).unwrap();
        assert!(m.is_observed(0) && m.is_observed(1) && m.is_observed(2));
        assert_eq!(m.count(), 3 + 1);
    }

    proptest! {
        #[test]
        fn nested_across_levels(n in 1usize..300, seed in any::<u64>()) {
            let mut prev: Option<ObservabilityMask> = None;
            for &p in OBSERVABILITY_LEVELS.iter().rev() {
                let m = sample_mask(n, p, seed).unwrap();
                prop_assert_eq!(m.count(), (p as usize * n + 50) / 100);
                if let Some(lower) = &prev {
                    for i in 0..n {
                        prop_assert!(!lower.is_observed(i) || m.is_observed(i));
                    }
                }
                prev = Some(m);
            }
        }
    }
}
