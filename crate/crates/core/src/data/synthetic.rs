use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::architecture::Axis;
use crate::data::{
    DataError, Dataset, DatasetManifest, ManifestEntry, SignalSlice, Split, Volume,
    MANIFEST_VERSION,
};
use crate::tensor::Tensor;

pub const MIN_EXTENT: usize = 8;

/// Geometry of the class-1 blob.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    /// A band of `blob_side` consecutive slices along one randomly chosen
    /// axis, spanning the full plane. Only that band is recorded as signal.
    Slab,
    /// A cube of side `blob_side`; every slice crossing it, on all three
    /// axes, is recorded as signal.
    Cube,
}

/// Planted-signal generator settings. Class 0 is background plus Gaussian
/// noise; class 1 adds a bright blob at a random position. Values are
/// clipped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticParams {
    pub n_per_class: usize,
    /// `[d, h, w]`
    pub shape: [usize; 3],
    pub signal_kind: SignalKind,
    pub blob_side: usize,
    pub blob_amplitude: f32,
    pub background: f32,
    pub noise_sigma: f32,
    pub seed: u64,
}

impl SyntheticParams {
    pub fn new(n_per_class: usize, side: usize, seed: u64) -> Self {
        Self {
            n_per_class,
            shape: [side; 3],
            signal_kind: SignalKind::Slab,
            blob_side: (side / 8).max(1),
            blob_amplitude: 0.8,
            background: 0.2,
            noise_sigma: 0.1,
            seed,
        }
    }

    fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Invalid(m));
        if self.n_per_class == 0 {
            return bad("n_per_class must be positive".into());
        }
        if self.shape.iter().any(|&e| e < MIN_EXTENT) {
            return bad(format!(
                "every extent must be at least {MIN_EXTENT}, got {:?}",
                self.shape
            ));
        }
        if self.blob_side == 0 || self.shape.iter().any(|&e| self.blob_side > e) {
            return bad(format!(
                "blob side {} does not fit shape {:?}",
                self.blob_side, self.shape
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise_sigma must be finite and non-negative, got {}",
                self.noise_sigma
            ));
        }
        Ok(())
    }
}

pub const TRAIN_FRACTION: f64 = 0.6;
pub const VAL_FRACTION: f64 = 0.2;

/// Builds the dataset in memory; samples alternate class 0 and class 1 and
/// each class is split 60/20/20 after a seeded shuffle.
pub fn generate_synthetic(params: &SyntheticParams) -> Result<Dataset, DataError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let noise = Normal::new(0.0f32, params.noise_sigma).expect("sigma validated");
    let [d, h, w] = params.shape;
    let k = params.blob_side;
    let n = 2 * params.n_per_class;

    let mut volumes = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let mut data: Vec<f32> = (0..d * h * w)
            .map(|_| params.background + noise.sample(&mut rng))
            .collect();
        let signal = if label == 1 {
            // Box as [start, end) per spatial axis.
            let mut bounds = [(0, d), (0, h), (0, w)];
            let marked: Vec<Axis> = match params.signal_kind {
                SignalKind::Slab => {
                    let axis = Axis::ALL[rng.random_range(0..3)];
                    let extent = params.shape[axis.spatial_index()];
                    let o = rng.random_range(0..=extent - k);
                    bounds[axis.spatial_index()] = (o, o + k);
                    vec![axis]
                }
                SignalKind::Cube => {
                    for (b, &extent) in bounds.iter_mut().zip(&params.shape) {
                        let o = rng.random_range(0..=extent - k);
                        *b = (o, o + k);
                    }
                    Axis::ALL.to_vec()
                }
            };
            for z in bounds[0].0..bounds[0].1 {
                for y in bounds[1].0..bounds[1].1 {
                    for x in bounds[2].0..bounds[2].1 {
                        data[(z * h + y) * w + x] += params.blob_amplitude;
                    }
                }
            }
            marked
                .into_iter()
                .flat_map(|axis| {
                    let (lo, hi) = bounds[axis.spatial_index()];
                    (lo..hi).map(move |position| SignalSlice { axis, position })
                })
                .collect()
        } else {
            Vec::new()
        };
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        volumes.push(Volume {
            id: format!("syn-{i:05}"),
            data: Tensor::new(vec![1, d, h, w], data).expect("shape matches"),
            label,
            signal_slices: Some(signal),
        });
    }

    let mut splits = vec![Split::Train; n];
    let n_train = (params.n_per_class as f64 * TRAIN_FRACTION).round() as usize;
    let n_val = (params.n_per_class as f64 * VAL_FRACTION).round() as usize;
    for label in 0..2 {
        let mut members: Vec<usize> = (label..n).step_by(2).collect();
        members.shuffle(&mut rng);
        for (rank, &i) in members.iter().enumerate() {
            splits[i] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }

    let entries = volumes
        .iter()
        .zip(splits)
        .map(|(v, split)| ManifestEntry {
            file: format!("{}.rvf", v.id),
            label: v.label,
            split,
            signal_slices: v.signal_slices.clone(),
        })
        .collect();
    Ok(Dataset {
        manifest: DatasetManifest {
            version: MANIFEST_VERSION,
            name: format!("synthetic-{}x{}x{}-seed{}", d, h, w, params.seed),
            n_classes: 2,
            entries,
            generator: Some(params.clone()),
        },
        volumes,
    })
}
