use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};

/// Flattened `[batch, seq_len]` character indices with their labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Splits a seeded permutation of the sample ids into batches. The last
/// batch may be smaller.
pub fn make_batches(dataset: &Dataset, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::arg("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;

    #[test]
    fn sizes_and_determinism() {
        let d = synth_dataset(10, 2, 8, 0).unwrap();
        let b = make_batches(&d, 3, 7).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3, 1]);
        assert_eq!(b, make_batches(&d, 3, 7).unwrap());
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(make_batches(&d, 0, 7).is_err());
    }

    #[test]
    fn gathered_batch_layout() {
        let d = synth_dataset(4, 2, 8, 0).unwrap();
        let b = d.batch(&[2, 0]);
        assert_eq!(b.len(), 2);
        assert_eq!(b.labels, vec![0, 0]);
        assert_eq!(
            &b.indices[..8],
            &d.samples[2].indices.iter().map(|&c| c as usize).collect::<Vec<_>>()[..]
        );
    }
}
