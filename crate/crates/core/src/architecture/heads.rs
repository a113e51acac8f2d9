use crate::architecture::spec::{ModelSpec, Reduction};
use crate::autograd::{Tape, Var};
use crate::layers::{Builder, LayerNorm, Linear, LstmCell, MultiheadAttention};
use crate::params::ParamStore;
use crate::tensor::{Element, Result, TensorError};

/// Pre-norm encoder block: attention and a ratio-2 ReLU MLP, each wrapped in
/// a residual connection.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub norm1: LayerNorm,
    pub attention: MultiheadAttention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

pub const MLP_RATIO: usize = 2;

impl TransformerBlock {
    pub fn new<T: Element>(b: &mut Builder<'_, T>, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(&mut b.scope("norm1"), dim),
            attention: MultiheadAttention::new(&mut b.scope("attn"), dim, heads)?,
            norm2: LayerNorm::new(&mut b.scope("norm2"), dim),
            fc1: Linear::new(&mut b.scope("fc1"), dim, MLP_RATIO * dim),
            fc2: Linear::new(&mut b.scope("fc2"), MLP_RATIO * dim, dim),
        })
    }

    /// `[b, n, d] → [b, n, d]`.
    pub fn forward<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let h = self.norm1.forward(tape, store, x)?;
        let x = x.add(self.attention.forward(tape, store, h, h, h)?.output)?;
        let h = self.norm2.forward(tape, store, x)?;
        let h = self
            .fc2
            .forward(tape, store, self.fc1.forward(tape, store, h)?.relu())?;
        x.add(h)
    }
}

/// Slice-feature reduction head.
#[derive(Debug, Clone)]
pub enum Head {
    AttentionPool(MultiheadAttention),
    Average,
    Max,
    Lstm(LstmCell),
    Transformer(TransformerBlock),
}

/// Pooled features `[b, f]` and, for attention pooling, the weights
/// `[b, heads, 1, n_slices]`.
pub struct Reduced<'t, T: Element> {
    pub pooled: Var<'t, T>,
    pub weights: Option<Var<'t, T>>,
}

impl Head {
    pub fn new<T: Element>(b: &mut Builder<'_, T>, spec: &ModelSpec) -> Result<Self> {
        let (d, h) = (spec.feature_dim, spec.n_heads);
        Ok(match spec.reduction {
            Reduction::AttentionPool => Head::AttentionPool(MultiheadAttention::new(
                &mut b.scope("attention_pool"),
                d,
                h,
            )?),
            Reduction::Average => Head::Average,
            Reduction::Max => Head::Max,
            Reduction::Lstm => Head::Lstm(LstmCell::new(&mut b.scope("lstm"), d, d)),
            Reduction::Transformer => {
                Head::Transformer(TransformerBlock::new(&mut b.scope("transformer"), d, h)?)
            }
        })
    }

    /// `features: [b, n, f] → [b, f]`.
    pub fn reduce<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        features: Var<'t, T>,
    ) -> Result<Reduced<'t, T>> {
        let s = features.shape();
        if s.len() != 3 || s[1] == 0 {
            return Err(TensorError::Invalid {
                op: "reduce_slices",
                msg: format!("expected non-empty [b, n_slices, f] features, got {s:?}"),
            });
        }
        let (b, n, f) = (s[0], s[1], s[2]);
        let plain = |pooled| {
            Ok(Reduced {
                pooled,
                weights: None,
            })
        };
        match self {
            Head::AttentionPool(mha) => {
                let query = features.mean(1)?.reshape(&[b, 1, f])?;
                let out = mha.forward(tape, store, query, features, features)?;
                Ok(Reduced {
                    pooled: out.output.reshape(&[b, f])?,
                    weights: Some(out.weights),
                })
            }
            Head::Average => plain(features.mean(1)?),
            Head::Max => plain(features.max(1)?),
            Head::Lstm(cell) => {
                let mut state = cell.zero_state(tape, b);
                for t in 0..n {
                    let x = features.narrow(1, t, 1)?.reshape(&[b, f])?;
                    state = cell.step(tape, store, x, state)?;
                }
                plain(state.0)
            }
            Head::Transformer(block) => plain(block.forward(tape, store, features)?.mean(1)?),
        }
    }
}
