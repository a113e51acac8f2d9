//! Parameterized layers. Each layer owns [`ParamId`]s into a shared
//! [`ParamStore`] and binds them onto the tape at forward time.

mod attention;
mod conv;
mod linear;
mod lstm;
mod norm;

pub use attention::{MultiheadAttention, MultiheadAttentionOutput};
pub use conv::{acs_split, AcsConv3d, Conv2d, Conv3d, ConvSpec};
pub use linear::Linear;
pub use lstm::LstmCell;
pub use norm::{BatchNorm, LayerNorm, BN_EPS, BN_MOMENTUM};

use rand_chacha::ChaCha8Rng;

use crate::params::{Group, ParamId, ParamStore};
use crate::tensor::{Element, Tensor};

/// Training mode uses batch statistics and updates running buffers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Registers parameters under a dotted name prefix.
pub struct Builder<'a, T: Element> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut ChaCha8Rng,
    pub group: Group,
    prefix: String,
}

impl<'a, T: Element> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng, group: Group) -> Self {
        Self {
            store,
            rng,
            group,
            prefix: String::new(),
        }
    }

    /// Builder for a nested scope `prefix.name`.
    pub fn scope(&mut self, name: &str) -> Builder<'_, T> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Builder {
            store: self.store,
            rng: self.rng,
            group: self.group,
            prefix,
        }
    }

    pub fn with_group(&mut self, group: Group) -> Builder<'_, T> {
        Builder {
            store: self.store,
            rng: self.rng,
            group,
            prefix: self.prefix.clone(),
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn param(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        let full = self.full_name(name);
        self.store.add(full, value, self.group)
    }

    pub fn buffer(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        let full = self.full_name(name);
        self.store.add_buffer(full, value, self.group)
    }
}
