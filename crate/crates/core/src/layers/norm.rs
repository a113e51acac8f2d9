use crate::autograd::{batch_norm, layer_norm, NormStats, Tape, Var};
use crate::layers::{Builder, Mode};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Element, Result, Tensor};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Batch normalization over axis 1 with running statistics.
///
/// Running mean starts at 0 and variance at 1, so evaluation before any
/// training step is well defined.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Element>(b: &mut Builder<'_, T>, channels: usize) -> Self {
        Self {
            channels,
            gamma: b.param("weight", Tensor::ones(&[channels])),
            beta: b.param("bias", Tensor::zeros(&[channels])),
            running_mean: b.buffer("running_mean", Tensor::zeros(&[channels])),
            running_var: b.buffer("running_var", Tensor::ones(&[channels])),
        }
    }

    pub fn parameter_count(&self) -> usize {
        2 * self.channels
    }

    pub fn forward<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
        mode: Mode,
    ) -> Result<Var<'t, T>> {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        let stats = match mode {
            Mode::Train => NormStats::Batch,
            Mode::Eval => NormStats::Running {
                mean: store.value(self.running_mean).clone(),
                var: store.value(self.running_var).clone(),
            },
        };
        let (y, observed) = batch_norm(x, gamma, beta, stats, BN_EPS)?;
        if let Some(obs) = observed {
            let m = T::of(BN_MOMENTUM);
            let keep = T::one() - m;
            let mean = store
                .value(self.running_mean)
                .zip_map(&obs.mean, |old, new| keep * old + m * new);
            let var = store
                .value(self.running_var)
                .zip_map(&obs.var_unbiased, |old, new| keep * old + m * new);
            tape.record_buffer_update(self.running_mean, mean);
            tape.record_buffer_update(self.running_var, var);
        }
        Ok(y)
    }
}

/// Layer normalization over the last axis.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub dim: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Element>(b: &mut Builder<'_, T>, dim: usize) -> Self {
        Self {
            dim,
            gamma: b.param("weight", Tensor::ones(&[dim])),
            beta: b.param("bias", Tensor::zeros(&[dim])),
        }
    }

    pub fn parameter_count(&self) -> usize {
        2 * self.dim
    }

    pub fn forward<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        layer_norm(
            x,
            tape.param(store, self.gamma),
            tape.param(store, self.beta),
            Self::EPS,
        )
    }
}
