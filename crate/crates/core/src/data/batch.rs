use crate::engine::SeededRng;

/// Index batches covering `0..len`, optionally in a seeded random order.
/// The final batch may be short.
#[derive(Clone, Debug)]
pub struct BatchIter {
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl BatchIter {
    pub fn new(len: usize, batch_size: usize, shuffle: bool, rng: &mut SeededRng) -> Self {
        assert!(batch_size >= 1, "batch size must be positive");
        let order = if shuffle {
            rng.permutation(len)
        } else {
            (0..len).collect()
        };
        BatchIter {
            order,
            batch_size,
            pos: 0,
        }
    }

    /// Number of batches in a full pass.
    pub fn batch_count(len: usize, batch_size: usize) -> usize {
        len.div_ceil(batch_size)
    }
}

impl Iterator for BatchIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(batch)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (n, Some(n))
    }
}

impl ExactSizeIterator for BatchIter {}

/// Batches over the videos of a dataset.
pub fn batch_iter<T: crate::engine::Real>(
    ds: &super::VideoDataset<T>,
    batch_size: usize,
    shuffle: bool,
    rng: &mut SeededRng,
) -> BatchIter {
    BatchIter::new(ds.len(), batch_size, shuffle, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sizes_with_short_tail() {
        let mut rng = SeededRng::new(0);
        let sizes: Vec<usize> = BatchIter::new(10, 3, false, &mut rng).map(|b| b.len()).collect();
        assert_eq!(sizes, vec![3, 3, 3, 1]);
        assert_eq!(BatchIter::batch_count(10, 3), 4);
    }

    #[test]
    fn same_seed_same_order() {
        let a: Vec<_> = BatchIter::new(20, 4, true, &mut SeededRng::new(5)).collect();
        let b: Vec<_> = BatchIter::new(20, 4, true, &mut SeededRng::new(5)).collect();
        let c: Vec<_> = BatchIter::new(20, 4, true, &mut SeededRng::new(6)).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    proptest! {
        #[test]
        fn batches_partition_the_indices(len in 0usize..60, bs in 1usize..9, shuffle: bool, seed: u64) {
            let it = BatchIter::new(len, bs, shuffle, &mut SeededRng::new(seed));
            prop_assert_eq!(it.len(), BatchIter::batch_count(len, bs));
            let mut all: Vec<usize> = it.flatten().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..len).collect::<Vec<_>>());
        }
    }
}
