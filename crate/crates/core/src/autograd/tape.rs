use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use crate::params::{ParamId, ParamStore};
use crate::tensor::{Element, Result, Tensor, TensorError};

/// Backward rule of a recorded op: receives the output gradient and a mask of
/// which inputs need a gradient, returns one optional gradient per input.
pub(crate) type BackwardFn<T> = Box<dyn FnOnce(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Element> {
    value: Arc<Tensor<T>>,
    requires_grad: bool,
    inputs: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

struct Inner<T: Element> {
    nodes: Vec<Node<T>>,
    bindings: Vec<(usize, ParamId)>,
    buffer_updates: Vec<(ParamId, Tensor<T>)>,
    consumed: bool,
}

/// Records a forward graph for one reverse pass.
///
/// Nodes are appended in execution order, so every node's inputs precede it.
/// A tape built with [`Tape::no_grad`] computes values only.
pub struct Tape<T: Element> {
    inner: RefCell<Inner<T>>,
    grad_enabled: bool,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self::with_grad(true)
    }

    pub fn no_grad() -> Self {
        Self::with_grad(false)
    }

    fn with_grad(grad_enabled: bool) -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                bindings: Vec::new(),
                buffer_updates: Vec::new(),
                consumed: false,
            }),
            grad_enabled,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(&self, node: Node<T>) -> Var<'_, T> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(node);
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.constant_arc(Arc::new(value))
    }

    pub(crate) fn constant_arc(&self, value: Arc<Tensor<T>>) -> Var<'_, T> {
        self.push_node(Node {
            value,
            requires_grad: false,
            inputs: Vec::new(),
            backward: None,
        })
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_node(Node {
            value: Arc::new(value),
            requires_grad: self.grad_enabled,
            inputs: Vec::new(),
            backward: None,
        })
    }

    /// Binds a stored parameter as a leaf. Frozen or non-trainable entries
    /// enter as constants.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        let p = store.get(id);
        let requires_grad = self.grad_enabled && p.receives_grad();
        let var = self.push_node(Node {
            value: Arc::clone(p.value_arc()),
            requires_grad,
            inputs: Vec::new(),
            backward: None,
        });
        if requires_grad {
            self.inner.borrow_mut().bindings.push((var.id, id));
        }
        var
    }

    /// Queues a non-trainable buffer update (batchnorm running statistics).
    pub fn record_buffer_update(&self, id: ParamId, value: Tensor<T>) {
        self.inner.borrow_mut().buffer_updates.push((id, value));
    }

    pub fn take_buffer_updates(&self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut self.inner.borrow_mut().buffer_updates)
    }

    /// Records the output of an op. The backward rule is dropped when no
    /// input requires a gradient.
    pub(crate) fn op<'t>(
        &'t self,
        value: Tensor<T>,
        inputs: &[Var<'t, T>],
        backward: impl FnOnce(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var<'t, T> {
        let requires_grad = self.grad_enabled && {
            let inner = self.inner.borrow();
            inputs.iter().any(|v| inner.nodes[v.id].requires_grad)
        };
        self.push_node(Node {
            value: Arc::new(value),
            requires_grad,
            inputs: inputs.iter().map(|v| v.id).collect(),
            backward: requires_grad.then(|| Box::new(backward) as BackwardFn<T>),
        })
    }

    pub(crate) fn value_of(&self, id: usize) -> Arc<Tensor<T>> {
        Arc::clone(&self.inner.borrow().nodes[id].value)
    }

    pub(crate) fn requires_grad_of(&self, id: usize) -> bool {
        self.inner.borrow().nodes[id].requires_grad
    }

    /// Reverse pass from a scalar loss. Consumes the tape's backward rules:
    /// a second call fails with [`TensorError::TapeConsumed`].
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        assert!(
            std::ptr::eq(loss.tape, self),
            "loss belongs to a different tape"
        );
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let root_shape = inner.nodes[loss.id].value.shape().to_vec();
        if root_shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(root_shape));
        }
        if !self.grad_enabled || !inner.nodes[loss.id].requires_grad {
            return Err(TensorError::NoActiveTape);
        }
        inner.consumed = true;

        let n = loss.id + 1;
        let mut grads: Vec<Option<Tensor<T>>> = (0..inner.nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(&root_shape));

        for id in (0..n).rev() {
            let Some(backward) = inner.nodes[id].backward.take() else {
                continue;
            };
            let Some(upstream) = grads[id].as_ref() else {
                continue;
            };
            let needs: Vec<bool> = inner.nodes[id]
                .inputs
                .iter()
                .map(|&i| inner.nodes[i].requires_grad)
                .collect();
            let input_grads = backward(upstream, &needs);
            debug_assert_eq!(input_grads.len(), needs.len());
            let inputs = inner.nodes[id].inputs.clone();
            for ((input, grad), need) in inputs.into_iter().zip(input_grads).zip(needs) {
                let (true, Some(grad)) = (need, grad) else {
                    continue;
                };
                debug_assert_eq!(grad.shape(), inner.nodes[input].value.shape());
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&grad),
                    slot @ None => *slot = Some(grad),
                }
            }
        }
        for node in inner.nodes.iter_mut() {
            node.backward = None;
        }
        Ok(Gradients {
            grads,
            bindings: std::mem::take(&mut inner.bindings),
        })
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Element> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Element> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<'t, T: Element> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id]
            .value
            .shape()
            .to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }
}

/// Result of a reverse pass.
pub struct Gradients<T: Element> {
    grads: Vec<Option<Tensor<T>>>,
    bindings: Vec<(usize, ParamId)>,
}

impl<T: Element> Gradients<T> {
    /// Gradient with respect to any node that required one.
    pub fn of(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Per-parameter gradients, summed over every binding of the same
    /// parameter, in first-binding order.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor<T>)> {
        let mut out: Vec<(ParamId, Tensor<T>)> = Vec::new();
        for &(node, pid) in &self.bindings {
            let Some(g) = self.grads[node].as_ref() else {
                continue;
            };
            match out.iter_mut().find(|(id, _)| *id == pid) {
                Some((_, acc)) => acc.add_assign(g),
                None => out.push((pid, g.clone())),
            }
        }
        out
    }
}
