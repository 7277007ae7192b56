use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Result, TrainError};

/// Seed of epoch `epoch` derived from a run seed.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (epoch as u64).wrapping_add(0x6a09_e667_f3bc_c909)
}

/// Index batches in which every member shares one key (the satellite).
///
/// Members are shuffled within their key, cut into batches of at most
/// `batch_size`, and the batch order is shuffled again. The same seed
/// always gives the same batches.
pub fn make_batches<K: Ord + Copy>(keys: &[K], batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(TrainError::Config("batch size must be at least 1".into()));
    }
    if keys.is_empty() {
        return Err(TrainError::EmptySplit("batch source".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: std::collections::BTreeMap<K, Vec<usize>> = Default::default();
    for (i, &k) in keys.iter().enumerate() {
        groups.entry(k).or_default().push(i);
    }
    let mut batches = Vec::new();
    for (_, mut idx) in groups {
        idx.shuffle(&mut rng);
        batches.extend(idx.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(&mut rng);
    Ok(batches)
}

/// Fixed-order batches for evaluation, still one key per batch.
pub fn ordered_batches<K: Ord + Copy>(keys: &[K], batch_size: usize) -> Vec<Vec<usize>> {
    let mut groups: std::collections::BTreeMap<K, Vec<usize>> = Default::default();
    for (i, &k) in keys.iter().enumerate() {
        groups.entry(k).or_default().push(i);
    }
    groups
        .into_values()
        .flat_map(|idx| idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect::<Vec<_>>())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_partition_and_are_single_key() {
        let keys = [0, 1, 2, 0, 0, 1, 2, 2, 2, 1, 0];
        let b = make_batches(&keys, 2, 5).unwrap();
        let mut all: Vec<usize> = b.iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, (0..keys.len()).collect::<Vec<_>>());
        for batch in &b {
            assert!(batch.len() <= 2);
            assert!(batch.iter().all(|&i| keys[i] == keys[batch[0]]));
        }
        assert_eq!(b, make_batches(&keys, 2, 5).unwrap());
        assert!(make_batches::<u8>(&[], 2, 0).is_err());
        assert!(make_batches(&keys, 0, 0).is_err());
    }

    #[test]
    fn batch_size_one() {
        let b = make_batches(&[3, 1, 3], 1, 0).unwrap();
        assert_eq!(b.len(), 3);
        assert!(b.iter().all(|x| x.len() == 1));
    }

    #[test]
    fn ordered_batches_keep_order_within_key() {
        assert_eq!(ordered_batches(&[1, 0, 1, 1], 2), vec![vec![1], vec![0, 2], vec![3]]);
    }
}
