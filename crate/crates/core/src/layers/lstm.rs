use crate::autograd::{Tape, Var};
use crate::layers::Builder;
use crate::params::{init, ParamId, ParamStore};
use crate::tensor::{Element, Result, Tensor, TensorError};

/// Single LSTM cell with gate order (input, forget, cell, output).
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub input_size: usize,
    pub hidden_size: usize,
    /// `[input, 4·hidden]`
    pub w_input: ParamId,
    /// `[hidden, 4·hidden]`, orthogonal at init
    pub w_hidden: ParamId,
    pub bias: ParamId,
}

impl LstmCell {
    pub fn new<T: Element>(b: &mut Builder<'_, T>, input_size: usize, hidden_size: usize) -> Self {
        let w_in = init::kaiming_uniform(b.rng, &[input_size, 4 * hidden_size], input_size);
        let w_hh = init::orthogonal(b.rng, hidden_size, 4 * hidden_size);
        Self {
            input_size,
            hidden_size,
            w_input: b.param("weight_ih", w_in),
            w_hidden: b.param("weight_hh", w_hh),
            bias: b.param("bias", Tensor::zeros(&[4 * hidden_size])),
        }
    }

    pub fn parameter_count(&self) -> usize {
        4 * self.hidden_size * (self.input_size + self.hidden_size + 1)
    }

    /// One step: `x: [b, input]`, state `(h, c)` each `[b, hidden]`.
    pub fn step<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
        state: (Var<'t, T>, Var<'t, T>),
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let s = x.shape();
        if s.len() != 2 || s[1] != self.input_size {
            return Err(TensorError::ShapeMismatch {
                op: "lstm_step",
                lhs: s,
                rhs: vec![self.input_size],
            });
        }
        let (h, c) = state;
        let gates = x
            .matmul(tape.param(store, self.w_input))?
            .add(h.matmul(tape.param(store, self.w_hidden))?)?
            .add(tape.param(store, self.bias))?;
        let n = self.hidden_size;
        let i = gates.narrow(1, 0, n)?.sigmoid();
        let f = gates.narrow(1, n, n)?.sigmoid();
        let g = gates.narrow(1, 2 * n, n)?.tanh();
        let o = gates.narrow(1, 3 * n, n)?.sigmoid();
        let c_next = f.mul(c)?.add(i.mul(g)?)?;
        let h_next = o.mul(c_next.tanh())?;
        Ok((h_next, c_next))
    }

    pub fn zero_state<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        batch: usize,
    ) -> (Var<'t, T>, Var<'t, T>) {
        (
            tape.constant(Tensor::zeros(&[batch, self.hidden_size])),
            tape.constant(Tensor::zeros(&[batch, self.hidden_size])),
        )
    }
}
