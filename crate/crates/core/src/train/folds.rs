use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Stratified k-fold split. Returns the validation indices of each fold.
///
/// Subjects are grouped by class label (unlabeled subjects form their own
/// group), each group is shuffled with `seed`, and the groups are dealt
/// round-robin across folds in one continuous sequence.
pub fn stratified_folds(labels: &[Option<u8>], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config("folds must be at least 2".into()));
    }
    if labels.len() < k {
        return Err(Error::Invalid(format!("{} subjects cannot fill {k} folds", labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut slot = 0;
    for group in [Some(1u8), Some(0u8), None] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == group).collect();
        members.shuffle(&mut rng);
        for i in members {
            folds[slot % k].push(i);
            slot += 1;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

/// Training indices complementing fold `fold`.
pub fn train_indices(folds: &[Vec<usize>], fold: usize) -> Vec<usize> {
    let mut out: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != fold)
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn folds_partition_and_stratify(
            labels in proptest::collection::vec(prop_oneof![Just(Some(0u8)), Just(Some(1u8)), Just(None)], 8..400),
            k in 2usize..6,
            seed in any::<u64>()
        ) {
            let folds = stratified_folds(&labels, k, seed).unwrap();
            let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            let positives = labels.iter().filter(|l| **l == Some(1)).count();
            for f in &folds {
                let fp = f.iter().filter(|&&i| labels[i] == Some(1)).count();
                prop_assert!((fp as f64 - positives as f64 / k as f64).abs() <= 1.0);
                prop_assert!(f.len().abs_diff(labels.len() / k) <= 1);
            }
            for fold in 0..k {
                let train = train_indices(&folds, fold);
                prop_assert_eq!(train.len() + folds[fold].len(), labels.len());
                prop_assert!(train.iter().all(|i| !folds[fold].contains(i)));
            }
        }
    }

    #[test]
    fn deterministic_and_prevalence_within_tolerance() {
        let labels: Vec<Option<u8>> = (0..400).map(|i| Some((i % 10 < 3) as u8)).collect();
        let a = stratified_folds(&labels, 4, 42).unwrap();
        assert_eq!(a, stratified_folds(&labels, 4, 42).unwrap());
        assert_ne!(a, stratified_folds(&labels, 4, 43).unwrap());
        for f in &a {
            let frac = f.iter().filter(|&&i| labels[i] == Some(1)).count() as f64 / f.len() as f64;
            assert!((frac - 0.3).abs() <= 0.05);
        }
    }
}
