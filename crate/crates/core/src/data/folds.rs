use rand::seq::SliceRandom;

use super::manifest::DatasetManifest;
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Per-sample fold index in `[0, k)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub k: usize,
    pub assignments: Vec<usize>,
}

impl FoldSplit {
    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] != fold).collect()
    }
}

/// Domain-stratified k-fold partition of a manifest's samples.
///
/// Each domain's samples are shuffled and dealt round-robin; the dealing
/// position carries over between domains so fold sizes stay balanced overall.
pub fn make_folds(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<FoldSplit> {
    let domains: Vec<usize> = manifest.samples.iter().map(|s| s.domain).collect();
    stratified_folds(&domains, k, seed)
}

/// [`make_folds`] over bare domain labels.
pub fn stratified_folds(domains: &[usize], k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("k-fold split needs k >= 2, got {k}")));
    }
    let num_domains = domains.iter().copied().max().map_or(0, |m| m + 1);
    let mut assignments = vec![0; domains.len()];
    let mut next = 0;
    for d in 0..num_domains {
        let mut members: Vec<usize> = (0..domains.len()).filter(|&i| domains[i] == d).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            log::warn!("domain {d} has {} samples for {k} folds; stratification is best-effort", members.len());
        }
        members.shuffle(&mut seeded(seed, &[3, d as u64]));
        for &i in &members {
            assignments[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(FoldSplit { k, assignments })
}
