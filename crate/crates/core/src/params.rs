//! Named parameter storage shared by layers, optimizer and checkpoints.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which part of the model a parameter belongs to; the freeze schedule acts
/// on [`Group::Backbone`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    Backbone,
    Head,
}

#[derive(Debug, Clone)]
pub struct Parameter<T: Element> {
    name: String,
    value: Arc<Tensor<T>>,
    group: Group,
    trainable: bool,
    frozen: bool,
}

impl<T: Element> Parameter<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub(crate) fn value_arc(&self) -> &Arc<Tensor<T>> {
        &self.value
    }

    pub fn group(&self) -> Group {
        self.group
    }

    /// False for buffers such as batchnorm running statistics.
    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    pub fn receives_grad(&self) -> bool {
        self.trainable && !self.frozen
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Element> {
    params: Vec<Parameter<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    fn push(&mut self, name: String, value: Tensor<T>, group: Group, trainable: bool) -> ParamId {
        debug_assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        self.params.push(Parameter {
            name,
            value: Arc::new(value),
            group,
            trainable,
            frozen: false,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, group: Group) -> ParamId {
        self.push(name.into(), value, group, true)
    }

    pub fn add_buffer(
        &mut self,
        name: impl Into<String>,
        value: Tensor<T>,
        group: Group,
    ) -> ParamId {
        self.push(name.into(), value, group, false)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) {
        let p = &mut self.params[id.0];
        assert_eq!(
            p.value.shape(),
            value.shape(),
            "shape change for {}",
            p.name
        );
        p.value = Arc::new(value);
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn set_group_frozen(&mut self, group: Group, frozen: bool) {
        for p in self.params.iter_mut().filter(|p| p.group == group) {
            p.frozen = frozen;
        }
    }

    /// Number of trainable scalars; buffers are excluded.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: Arc::new(p.value.cast()),
                    group: p.group,
                    trainable: p.trainable,
                    frozen: p.frozen,
                })
                .collect(),
        }
    }
}

/// Seeded initializers.
pub mod init {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    /// Kaiming-uniform for ReLU networks: U(-b, b) with b = sqrt(6 / fan_in).
    pub fn kaiming_uniform<T: Element>(
        rng: &mut ChaCha8Rng,
        shape: &[usize],
        fan_in: usize,
    ) -> Tensor<T> {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)))
    }

    /// `rows × cols` matrix with orthonormal columns (rows ≥ cols) or rows.
    pub fn orthogonal<T: Element>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<T> {
        let (long, short) = (rows.max(cols), rows.min(cols));
        // Gram-Schmidt over `short` random vectors of length `long`.
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
        while basis.len() < short {
            let mut v: Vec<f64> = (0..long).map(|_| StandardNormal.sample(rng)).collect();
            for _ in 0..2 {
                for b in &basis {
                    let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                v.iter_mut().for_each(|x| *x /= norm);
                basis.push(v);
            }
        }
        Tensor::from_fn(&[rows, cols], |i| {
            let (r, c) = (i / cols, i % cols);
            if rows >= cols {
                T::of(basis[c][r])
            } else {
                T::of(basis[r][c])
            }
        })
    }
}
