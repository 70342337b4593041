use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Stratified k-fold split over binary labels. Returns k disjoint test
/// folds of record indices (each sorted ascending) that together cover
/// 0..labels.len(). Per class, fold sizes differ by at most one.
pub fn split_stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("k={k} folds; need k >= 2")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for class in [0u8, 1u8] {
        let mut idx: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if idx.len() < k {
            return Err(Error::ClassSmallerThanK {
                class,
                count: idx.len(),
                k,
            });
        }
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            folds[j % k].push(i);
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// Complement of one test fold: the train indices, sorted.
pub fn train_indices(folds: &[Vec<usize>], test_fold: usize) -> Vec<usize> {
    let mut train: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != test_fold)
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    train.sort_unstable();
    train
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn folds_partition_and_stratify() {
        let labels: Vec<u8> = (0..103).map(|i| (i % 3 == 0) as u8).collect();
        let n_pos = labels.iter().filter(|&&l| l == 1).count();
        let folds = split_stratified_kfold(&labels, 5, 42).unwrap();
        let mut seen: Vec<usize> = folds.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..103).collect::<Vec<_>>());
        for fold in &folds {
            let pos = fold.iter().filter(|&&i| labels[i] == 1).count();
            let neg = fold.len() - pos;
            assert!((pos as i64 - (n_pos / 5) as i64).abs() <= 1);
            assert!((neg as i64 - ((103 - n_pos) / 5) as i64).abs() <= 1);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let labels: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        assert_eq!(
            split_stratified_kfold(&labels, 4, 7).unwrap(),
            split_stratified_kfold(&labels, 4, 7).unwrap()
        );
        assert_ne!(
            split_stratified_kfold(&labels, 4, 7).unwrap(),
            split_stratified_kfold(&labels, 4, 8).unwrap()
        );
    }

    #[test]
    fn rejects_class_smaller_than_k() {
        let labels = [1u8, 0, 0, 0, 0, 0, 1];
        let err = split_stratified_kfold(&labels, 3, 0).unwrap_err();
        match err {
            Error::ClassSmallerThanK { class, count, k } => {
                assert_eq!((class, count, k), (1, 2, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(split_stratified_kfold(&labels, 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn partition_property(
            n_pos in 5usize..60,
            n_neg in 5usize..60,
            k in 2usize..5,
            seed in 0u64..1000,
        ) {
            let mut labels = vec![1u8; n_pos];
            labels.extend(vec![0u8; n_neg]);
            let folds = split_stratified_kfold(&labels, k, seed).unwrap();
            prop_assert_eq!(folds.len(), k);
            let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            // per-class fold sizes differ by at most one
            for class in [0u8, 1] {
                let counts: Vec<usize> = folds
                    .iter()
                    .map(|f| f.iter().filter(|&&i| labels[i] == class).count())
                    .collect();
                let hi = counts.iter().max().unwrap();
                let lo = counts.iter().min().unwrap();
                prop_assert!(hi - lo <= 1);
            }
        }
    }
}
