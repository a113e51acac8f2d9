//! Model composition: slice decomposition, backbones, reduction heads,
//! volumetric baselines and checkpoints.

mod backbone;
pub mod checkpoint;
mod heads;
mod slices;
mod spec;

pub use backbone::{global_average_pool, Activation, Backbone, ConvLayer};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use heads::{Head, Reduced, TransformerBlock, MLP_RATIO};
pub use slices::{decompose_slices, Axis, SliceBatch, SliceLayout, SliceSet};
pub use spec::{
    resnet18_shape_builder, BackboneSpec, ModelSpec, Reduction, Variant, DEFAULT_HEADS,
    RESNET18_WIDTHS, TINY_CNN_WIDTHS,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{concat, Tape, Var};
use crate::layers::{Builder, Linear, Mode};
use crate::params::{Group, ParamStore};
use crate::tensor::{Element, Result, TensorError};

/// Per-slice importance of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    /// Head average of `per_head_weight`; sums to 1.
    pub per_slice_weight: Vec<f64>,
    /// `n_heads × n_slices`; each row sums to 1.
    pub per_head_weight: Vec<Vec<f64>>,
    pub layout: SliceLayout,
}

impl AttentionMap {
    /// Builds one map per sample from weights `[b, heads, 1, n]`.
    pub fn from_weights<T: Element>(
        weights: &crate::Tensor<T>,
        layout: &SliceLayout,
    ) -> Vec<AttentionMap> {
        let s = weights.shape();
        let (b, h, n) = (s[0], s[1], s[3]);
        debug_assert_eq!(n, layout.len());
        let data = weights.data();
        (0..b)
            .map(|i| {
                let per_head_weight: Vec<Vec<f64>> = (0..h)
                    .map(|k| {
                        let start = (i * h + k) * n;
                        data[start..start + n].iter().map(|v| v.as_f64()).collect()
                    })
                    .collect();
                let per_slice_weight = (0..n)
                    .map(|j| per_head_weight.iter().map(|row| row[j]).sum::<f64>() / h as f64)
                    .collect();
                AttentionMap {
                    per_slice_weight,
                    per_head_weight,
                    layout: layout.clone(),
                }
            })
            .collect()
    }

    pub fn n_slices(&self) -> usize {
        self.per_slice_weight.len()
    }

    pub fn n_heads(&self) -> usize {
        self.per_head_weight.len()
    }

    /// `(position, weight)` pairs of one axis in ascending position.
    pub fn axis_weights(&self, axis: Axis) -> Vec<(usize, f64)> {
        self.layout
            .axis_index
            .iter()
            .zip(&self.layout.slice_position)
            .zip(&self.per_slice_weight)
            .filter(|((&a, _), _)| a == axis)
            .map(|((_, &p), &w)| (p, w))
            .collect()
    }
}

pub struct ForwardOutput<'t, T: Element> {
    /// `[b, n_classes]`
    pub logits: Var<'t, T>,
    /// `[b, feature_dim]`, the classifier input.
    pub pooled: Var<'t, T>,
    /// `[b, heads, 1, n_slices]` for attention pooling.
    pub attention: Option<Var<'t, T>>,
    pub layout: Option<SliceLayout>,
}

impl<T: Element> ForwardOutput<'_, T> {
    pub fn attention_maps(&self) -> Option<Vec<AttentionMap>> {
        let (w, layout) = (self.attention.as_ref()?, self.layout.as_ref()?);
        Some(AttentionMap::from_weights(&w.value(), layout))
    }
}

/// An instantiated [`ModelSpec`] with its parameters.
#[derive(Debug, Clone)]
pub struct Model<T: Element> {
    spec: ModelSpec,
    store: ParamStore<T>,
    backbone: Backbone,
    head: Option<Head>,
    classifier: Linear,
}

impl<T: Element> Model<T> {
    /// Initializes every parameter from `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut root = Builder::new(&mut store, &mut rng, Group::Backbone);
        let backbone = Backbone::new(&mut root.scope("backbone"), &spec)?;
        let mut head_root = root.with_group(Group::Head);
        let head = match spec.variant {
            Variant::Slice2p5d => Some(Head::new(&mut head_root.scope("head"), &spec)?),
            Variant::Conv3d | Variant::Acs => None,
        };
        let classifier = Linear::new(
            &mut head_root.scope("classifier"),
            spec.feature_dim,
            spec.n_classes,
        );
        Ok(Self {
            spec,
            store,
            backbone,
            head,
            classifier,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn head(&self) -> Option<&Head> {
        self.head.as_ref()
    }

    pub fn classifier(&self) -> &Linear {
        &self.classifier
    }

    /// Trainable scalars; batchnorm running statistics are excluded.
    pub fn count_parameters(&self) -> usize {
        self.store.trainable_count()
    }

    /// Same architecture and values at another precision.
    pub fn cast<U: Element>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            store: self.store.cast(),
            backbone: self.backbone.clone(),
            head: self.head.clone(),
            classifier: self.classifier.clone(),
        }
    }

    /// Writes batchnorm running-statistic updates queued on `tape`.
    pub fn apply_buffer_updates(&mut self, tape: &Tape<T>) {
        for (id, value) in tape.take_buffer_updates() {
            self.store.set(id, value);
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 5 || shape[1] != self.spec.in_channels {
            return Err(TensorError::ShapeMismatch {
                op: "model_forward",
                lhs: shape.to_vec(),
                rhs: vec![0, self.spec.in_channels, 0, 0, 0],
            });
        }
        Ok(())
    }

    /// Encodes every slice of `volume: [b, c, d, h, w]` with the shared 2D
    /// backbone. Only valid for the slice variant.
    pub fn slice_features<'t>(
        &self,
        tape: &'t Tape<T>,
        volume: Var<'t, T>,
        mode: Mode,
    ) -> Result<SliceSet<'t, T>> {
        if self.spec.variant != Variant::Slice2p5d {
            return Err(TensorError::Invalid {
                op: "slice_features",
                msg: format!(
                    "{} model has no slice decomposition",
                    self.spec.variant.name()
                ),
            });
        }
        let s = volume.shape();
        self.check_input(&s)?;
        let b = s[0];
        let (batches, layout) = decompose_slices(volume)?;
        let shared = batches
            .windows(2)
            .all(|w| w[0].slices.shape()[1..] == w[1].slices.shape()[1..]);
        // Slices of equal shape form one backbone batch so batchnorm sees
        // every slice of the volume at once.
        let per_axis: Vec<Var<'t, T>> = if shared {
            let all: Vec<Var<'t, T>> = batches.iter().map(|g| g.slices).collect();
            let feats = self
                .backbone
                .forward(tape, &self.store, concat(&all, 0)?, mode, None)?;
            let mut start = 0;
            let mut out = Vec::with_capacity(3);
            for g in &batches {
                out.push(feats.narrow(0, start, b * g.count)?);
                start += b * g.count;
            }
            out
        } else {
            batches
                .iter()
                .map(|g| {
                    self.backbone
                        .forward(tape, &self.store, g.slices, mode, None)
                })
                .collect::<Result<_>>()?
        };
        let f = self.spec.feature_dim;
        let grouped: Vec<Var<'t, T>> = per_axis
            .into_iter()
            .zip(&batches)
            .map(|(v, g)| v.reshape(&[b, g.count, f]))
            .collect::<Result<_>>()?;
        Ok(SliceSet {
            features: concat(&grouped, 1)?,
            layout,
        })
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape<T>,
        volume: Var<'t, T>,
        mode: Mode,
    ) -> Result<ForwardOutput<'t, T>> {
        Ok(self.forward_with_activations(tape, volume, mode)?.0)
    }

    /// Forward pass that also returns the named backbone activations of the
    /// volumetric variants.
    pub fn forward_with_activations<'t>(
        &self,
        tape: &'t Tape<T>,
        volume: Var<'t, T>,
        mode: Mode,
    ) -> Result<(ForwardOutput<'t, T>, Vec<Activation<'t, T>>)> {
        let mut taps = Vec::new();
        let (pooled, attention, layout) = match &self.head {
            Some(head) => {
                let set = self.slice_features(tape, volume, mode)?;
                let reduced = head.reduce(tape, &self.store, set.features)?;
                (reduced.pooled, reduced.weights, Some(set.layout))
            }
            None => {
                self.check_input(&volume.shape())?;
                let pooled =
                    self.backbone
                        .forward(tape, &self.store, volume, mode, Some(&mut taps))?;
                (pooled, None, None)
            }
        };
        let logits = self.classifier.forward(tape, &self.store, pooled)?;
        Ok((
            ForwardOutput {
                logits,
                pooled,
                attention,
                layout,
            },
            taps,
        ))
    }
}
