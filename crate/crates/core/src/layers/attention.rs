use crate::autograd::{Tape, Var};
use crate::layers::{Builder, Linear};
use crate::params::ParamStore;
use crate::tensor::{Element, Result, TensorError};

/// Scaled dot-product attention over `heads` parallel subspaces with
/// separate query, key, value and output projections.
#[derive(Debug, Clone)]
pub struct MultiheadAttention {
    pub dim: usize,
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

pub struct MultiheadAttentionOutput<'t, T: Element> {
    /// `[b, n_q, dim]`
    pub output: Var<'t, T>,
    /// `[b, heads, n_q, n_k]`, rows sum to 1
    pub weights: Var<'t, T>,
}

impl MultiheadAttention {
    pub fn new<T: Element>(b: &mut Builder<'_, T>, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(TensorError::Invalid {
                op: "multihead_attention",
                msg: format!("dim {dim} is not divisible by {heads} heads"),
            });
        }
        Ok(Self {
            dim,
            heads,
            q: Linear::new(&mut b.scope("q_proj"), dim, dim),
            k: Linear::new(&mut b.scope("k_proj"), dim, dim),
            v: Linear::new(&mut b.scope("v_proj"), dim, dim),
            out: Linear::new(&mut b.scope("out_proj"), dim, dim),
        })
    }

    pub fn parameter_count(&self) -> usize {
        4 * (self.dim * self.dim + self.dim)
    }

    fn split_heads<'t, T: Element>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        x.reshape(&[s[0], s[1], self.heads, self.dim / self.heads])?
            .permute(&[0, 2, 1, 3])
    }

    /// `query: [b, n_q, dim]`, `key` and `value`: `[b, n_k, dim]`.
    pub fn forward<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        query: Var<'t, T>,
        key: Var<'t, T>,
        value: Var<'t, T>,
    ) -> Result<MultiheadAttentionOutput<'t, T>> {
        let (qs, ks, vs) = (query.shape(), key.shape(), value.shape());
        let ok = qs.len() == 3
            && ks.len() == 3
            && ks == vs
            && qs[0] == ks[0]
            && qs[2] == self.dim
            && ks[2] == self.dim;
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "multihead_attention",
                lhs: qs,
                rhs: ks,
            });
        }
        let (b, nq) = (qs[0], qs[1]);
        let q = self.split_heads(self.q.forward(tape, store, query)?)?;
        let k = self.split_heads(self.k.forward(tape, store, key)?)?;
        let v = self.split_heads(self.v.forward(tape, store, value)?)?;
        let dh = (self.dim / self.heads) as f64;
        let scores = q.matmul(k.transpose()?)?.scale(1.0 / dh.sqrt());
        let weights = scores.softmax(3)?;
        let context = weights
            .matmul(v)?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, nq, self.dim])?;
        Ok(MultiheadAttentionOutput {
            output: self.out.forward(tape, store, context)?,
            weights,
        })
    }
}
