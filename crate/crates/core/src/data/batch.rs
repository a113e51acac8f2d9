use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DataError, Dataset, Split};
use crate::tensor::Tensor;

/// Stacked volumes `x: [b, c, d, h, w]` with their labels and dataset
/// indices.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor<f32>,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

/// Seed for the permutation of one epoch.
fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ epoch.wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Visits every sample of a split exactly once; the last batch may be short.
pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl<'a> BatchIter<'a> {
    pub(crate) fn new(
        dataset: &'a Dataset,
        split: Split,
        batch_size: usize,
        shuffle: Option<(u64, u64)>,
    ) -> Result<Self, DataError> {
        if batch_size == 0 {
            return Err(DataError::Invalid("batch_size must be positive".into()));
        }
        let mut order = dataset.split_indices(split);
        if order.is_empty() {
            return Err(DataError::EmptySplit(split));
        }
        let first = dataset.volumes[order[0]].data.shape().to_vec();
        if let Some(&i) = order
            .iter()
            .find(|&&i| dataset.volumes[i].data.shape() != first)
        {
            return Err(DataError::Invalid(format!(
                "volume {} has shape {:?}, expected {first:?}",
                dataset.volumes[i].id,
                dataset.volumes[i].data.shape()
            )));
        }
        if let Some((seed, epoch)) = shuffle {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(seed, epoch)));
        }
        Ok(Self {
            dataset,
            order,
            batch_size,
            next: 0,
        })
    }

    pub fn n_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batch_size).min(self.order.len());
        let indices = self.order[self.next..end].to_vec();
        self.next = end;
        let vols: Vec<_> = indices.iter().map(|&i| &self.dataset.volumes[i]).collect();
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(vols[0].data.shape());
        let data = vols
            .iter()
            .flat_map(|v| v.data.data().iter().copied())
            .collect();
        Some(Batch {
            x: Tensor::new(shape, data).expect("volumes share a shape"),
            labels: vols.iter().map(|v| v.label).collect(),
            indices,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticParams};

    fn dataset() -> Dataset {
        let mut ds = generate_synthetic(&SyntheticParams::new(5, 8, 0)).unwrap();
        for e in ds.manifest.entries.iter_mut() {
            e.split = Split::Train;
        }
        ds
    }

    #[test]
    fn sizes_and_order() {
        let ds = dataset();
        let sizes: Vec<usize> = ds
            .batches(Split::Train, 4, None)
            .unwrap()
            .map(|b| b.labels.len())
            .collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let order: Vec<usize> = ds
            .batches(Split::Train, 4, None)
            .unwrap()
            .flat_map(|b| b.indices)
            .collect();
        assert_eq!(order, (0..10).collect::<Vec<_>>());
        assert!(matches!(
            ds.batches(Split::Val, 4, None),
            Err(DataError::EmptySplit(Split::Val))
        ));
    }

    #[test]
    fn epochs_reshuffle() {
        let ds = dataset();
        let perm = |epoch| -> Vec<usize> {
            ds.batches(Split::Train, 3, Some((7, epoch)))
                .unwrap()
                .flat_map(|b| b.indices)
                .collect()
        };
        let (a, b) = (perm(0), perm(1));
        assert_ne!(a, b);
        for p in [&a, &b] {
            let mut s = p.clone();
            s.sort();
            assert_eq!(s, (0..10).collect::<Vec<_>>());
        }
        assert_eq!(a, perm(0));
    }
}
