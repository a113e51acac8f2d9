use crate::autograd::{Tape, Var};
use crate::layers::Builder;
use crate::params::{init, ParamId, ParamStore};
use crate::tensor::{Element, Result, Tensor, TensorError};

/// `y = x·W + b` over the last axis; `W` is stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Element>(
        b: &mut Builder<'_, T>,
        in_features: usize,
        out_features: usize,
    ) -> Self {
        let w = init::kaiming_uniform(b.rng, &[in_features, out_features], in_features);
        Self {
            in_features,
            out_features,
            weight: b.param("weight", w),
            bias: b.param("bias", Tensor::zeros(&[out_features])),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.in_features * self.out_features + self.out_features
    }

    pub fn forward<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let s = x.shape();
        if s.last() != Some(&self.in_features) {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: s,
                rhs: vec![self.in_features, self.out_features],
            });
        }
        // Fold leading axes into rows so the weight multiplies one matrix.
        let rows: usize = s[..s.len() - 1].iter().product();
        let flat = if s.len() == 2 {
            x
        } else {
            x.reshape(&[rows, self.in_features])?
        };
        let y = flat
            .matmul(tape.param(store, self.weight))?
            .add(tape.param(store, self.bias))?;
        if s.len() == 2 {
            Ok(y)
        } else {
            let mut out = s.clone();
            *out.last_mut().unwrap() = self.out_features;
            y.reshape(&out)
        }
    }
}
