use std::collections::HashMap;

use crate::params::{ParamId, ParamStore};
use crate::tensor::{Element, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NadamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Off turns `m̂`, `v̂` and the gradient term into their raw values.
    pub bias_correction: bool,
}

impl Default for NadamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            bias_correction: true,
        }
    }
}

/// First and second moments of one parameter and its update count.
#[derive(Debug, Clone)]
pub struct Moments<T: Element> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub t: u64,
}

impl<T: Element> Moments<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            t: 0,
        }
    }
}

/// One Nesterov-accelerated Adam step at count `state.t + 1`:
/// `θ ← θ − lr·(β₁·m̂ + (1−β₁)·g/(1−β₁ᵗ)) / (√v̂ + eps)` with
/// `m̂ = m/(1−β₁ᵗ⁺¹)` and `v̂ = v/(1−β₂ᵗ)`.
pub fn nadam_step<T: Element>(
    theta: &mut Tensor<T>,
    state: &mut Moments<T>,
    grad: &Tensor<T>,
    lr: f64,
    cfg: &NadamConfig,
) -> Result<()> {
    if theta.shape() != grad.shape()
        || theta.shape() != state.m.shape()
        || theta.shape() != state.v.shape()
    {
        return Err(TensorError::ShapeMismatch {
            op: "nadam_step",
            lhs: theta.shape().to_vec(),
            rhs: grad.shape().to_vec(),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let (m_scale, g_scale, v_scale) = if cfg.bias_correction {
        (
            b1 / (1.0 - b1.powi(t + 1)),
            (1.0 - b1) / (1.0 - b1.powi(t)),
            1.0 / (1.0 - b2.powi(t)),
        )
    } else {
        (b1, 1.0 - b1, 1.0)
    };
    let (b1, b2) = (T::of(b1), T::of(b2));
    let (m_scale, g_scale, v_scale) = (T::of(m_scale), T::of(g_scale), T::of(v_scale));
    let (lr, eps) = (T::of(lr), T::of(cfg.eps));
    let one = T::one();
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (((p, &g), m), v) in theta
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let num = m_scale * *m + g_scale * g;
        *p -= lr * num / ((v_scale * *v).sqrt() + eps);
    }
    Ok(())
}

/// NAdam over a [`ParamStore`], keeping per-parameter moments.
#[derive(Debug, Clone)]
pub struct Nadam<T: Element> {
    pub config: NadamConfig,
    state: HashMap<ParamId, Moments<T>>,
}

impl<T: Element> Nadam<T> {
    pub fn new(config: NadamConfig) -> Self {
        Self {
            config,
            state: HashMap::new(),
        }
    }

    /// Applies one step to every parameter in `grads`.
    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &[(ParamId, Tensor<T>)],
        lr: f64,
    ) -> Result<()> {
        for (id, g) in grads {
            let state = self
                .state
                .entry(*id)
                .or_insert_with(|| Moments::zeros(g.shape()));
            nadam_step(store.value_mut(*id), state, g, lr, &self.config)?;
        }
        Ok(())
    }

    pub fn moments(&self, id: ParamId) -> Option<&Moments<T>> {
        self.state.get(&id)
    }
}
