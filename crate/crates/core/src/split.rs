//! Seeded stratified k-fold splits with a stratified validation hold-out.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::graph::Dataset;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Fraction of each fold's training part held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.1;

pub fn stratified_kfold(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    stratified_kfold_labels(&dataset.labels(), k, seed)
}

/// Each class's indices are shuffled and the classes are laid end to end;
/// element `i` of that sequence goes to fold `i mod k`. Class counts per fold
/// and fold sizes therefore differ by at most one.
pub fn stratified_kfold_labels(labels: &[usize], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::Split(format!("need at least 2 folds, got {k}")));
    }
    let mut rng = crate::rng_from_seed(seed);
    let by_class = group_by_class(labels.iter().copied().enumerate());
    for (c, members) in &by_class {
        if members.len() < k {
            return Err(Error::Split(format!(
                "class {c} has {} members, fewer than {k} folds",
                members.len()
            )));
        }
    }
    let mut order = Vec::with_capacity(labels.len());
    for (_, mut members) in by_class {
        members.shuffle(&mut rng);
        order.extend(members);
    }
    let mut fold_of = alloc::vec![0usize; labels.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }

    let mut splits = Vec::with_capacity(k);
    for f in 0..k {
        let test: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] == f).collect();
        let rest = (0..labels.len()).filter(|&i| fold_of[i] != f).map(|i| (i, labels[i]));
        let mut val = Vec::new();
        for (_, mut members) in group_by_class(rest) {
            members.shuffle(&mut rng);
            let take = libm::round(members.len() as f64 * VALIDATION_FRACTION) as usize;
            val.extend_from_slice(&members[..take]);
        }
        val.sort_unstable();
        let train = (0..labels.len())
            .filter(|&i| fold_of[i] != f && val.binary_search(&i).is_err())
            .collect();
        splits.push(FoldSplit { train, val, test });
    }
    Ok(splits)
}

fn group_by_class(items: impl Iterator<Item = (usize, usize)>) -> BTreeMap<usize, Vec<usize>> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, y) in items {
        by_class.entry(y).or_default().push(i);
    }
    by_class
}
