//! Elementwise, linear-algebra, reduction and shape ops on [`Var`].

use crate::autograd::tape::Var;
use crate::tensor::{
    axis_split, inverse_permutation, strides, Element, Result, Tensor, TensorError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Relu,
    Exp,
    Log,
    Neg,
    Sigmoid,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

/// How the two operands of a binary op line up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// rhs repeats with period `rhs.numel()` across lhs.
    Rhs,
    Lhs,
}

fn strip_leading_ones(shape: &[usize]) -> &[usize] {
    let first = shape.iter().position(|&d| d != 1).unwrap_or(shape.len());
    &shape[first..]
}

/// `small` broadcasts onto `big` when it is a scalar or, after dropping
/// leading unit dimensions, a trailing suffix of `big`.
fn broadcasts_onto(small: &[usize], big: &[usize]) -> bool {
    let s = strip_leading_ones(small);
    s.len() <= big.len() && big.ends_with(s)
}

fn broadcast_kind(op: &'static str, a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a == b {
        Ok(Broadcast::Same)
    } else if broadcasts_onto(b, a) && b.len() <= a.len() {
        Ok(Broadcast::Rhs)
    } else if broadcasts_onto(a, b) && a.len() <= b.len() {
        Ok(Broadcast::Lhs)
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        })
    }
}

/// Sums a full-size gradient back down to a repeating operand of `n` elements.
fn fold_repeats<T: Element>(full: &[T], n: usize, shape: &[usize]) -> Tensor<T> {
    let mut out = vec![T::zero(); n];
    for chunk in full.chunks(n) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Tensor::new(shape.to_vec(), out).expect("fold shape")
}

fn binary_name(op: BinaryOp) -> &'static str {
    match op {
        BinaryOp::Add => "add",
        BinaryOp::Sub => "sub",
        BinaryOp::Mul => "mul",
        BinaryOp::Div => "div",
    }
}

// Fallible arithmetic cannot implement the operator traits.
#[allow(clippy::should_implement_trait)]
impl<'t, T: Element> Var<'t, T> {
    pub fn binary(self, op: BinaryOp, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let a = self.value();
        let b = rhs.value();
        let kind = broadcast_kind(binary_name(op), a.shape(), b.shape())?;
        let (out_shape, na, nb) = match kind {
            Broadcast::Lhs => (b.shape().to_vec(), a.numel(), b.numel()),
            _ => (a.shape().to_vec(), a.numel(), b.numel()),
        };
        let n = out_shape.iter().product::<usize>();
        let f = |x: T, y: T| match op {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
            BinaryOp::Div => x / y,
        };
        let (ad, bd) = (a.data(), b.data());
        let data: Vec<T> = (0..n).map(|i| f(ad[i % na], bd[i % nb])).collect();
        let value = Tensor::new(out_shape, data)?;
        let (a_shape, b_shape) = (a.shape().to_vec(), b.shape().to_vec());
        Ok(self.tape.op(value, &[self, rhs], move |g, needs| {
            let (ad, bd, gd) = (a.data(), b.data(), g.data());
            let full_a: Option<Vec<T>> = needs[0].then(|| {
                (0..n)
                    .map(|i| match op {
                        BinaryOp::Add | BinaryOp::Sub => gd[i],
                        BinaryOp::Mul => gd[i] * bd[i % nb],
                        BinaryOp::Div => gd[i] / bd[i % nb],
                    })
                    .collect()
            });
            let full_b: Option<Vec<T>> = needs[1].then(|| {
                (0..n)
                    .map(|i| match op {
                        BinaryOp::Add => gd[i],
                        BinaryOp::Sub => -gd[i],
                        BinaryOp::Mul => gd[i] * ad[i % na],
                        BinaryOp::Div => {
                            let y = bd[i % nb];
                            -gd[i] * ad[i % na] / (y * y)
                        }
                    })
                    .collect()
            });
            vec![
                full_a.map(|v| fold_repeats(&v, na, &a_shape)),
                full_b.map(|v| fold_repeats(&v, nb, &b_shape)),
            ]
        }))
    }

    pub fn add(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(BinaryOp::Add, rhs)
    }

    pub fn sub(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(BinaryOp::Sub, rhs)
    }

    pub fn mul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(BinaryOp::Mul, rhs)
    }

    pub fn div(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(BinaryOp::Div, rhs)
    }

    pub fn unary(self, op: UnaryOp) -> Var<'t, T> {
        let x = self.value();
        let y = x.map(|v| match op {
            UnaryOp::Relu => {
                if v < T::zero() {
                    T::zero()
                } else {
                    v
                }
            }
            UnaryOp::Exp => v.exp(),
            UnaryOp::Log => v.ln(),
            UnaryOp::Neg => -v,
            UnaryOp::Sigmoid => T::one() / (T::one() + (-v).exp()),
            UnaryOp::Tanh => v.tanh(),
        });
        let saved_y = match op {
            UnaryOp::Exp | UnaryOp::Sigmoid | UnaryOp::Tanh => Some(y.clone()),
            _ => None,
        };
        self.tape.op(y, &[self], move |g, _| {
            let dx = match op {
                UnaryOp::Relu => g.zip_map(&x, |g, v| if v > T::zero() { g } else { T::zero() }),
                UnaryOp::Exp => g.zip_map(saved_y.as_ref().unwrap(), |g, y| g * y),
                UnaryOp::Log => g.zip_map(&x, |g, v| g / v),
                UnaryOp::Neg => g.map(|g| -g),
                UnaryOp::Sigmoid => {
                    g.zip_map(saved_y.as_ref().unwrap(), |g, y| g * y * (T::one() - y))
                }
                UnaryOp::Tanh => {
                    g.zip_map(saved_y.as_ref().unwrap(), |g, y| g * (T::one() - y * y))
                }
            };
            vec![Some(dx)]
        })
    }

    pub fn relu(self) -> Var<'t, T> {
        self.unary(UnaryOp::Relu)
    }

    pub fn exp(self) -> Var<'t, T> {
        self.unary(UnaryOp::Exp)
    }

    pub fn log(self) -> Var<'t, T> {
        self.unary(UnaryOp::Log)
    }

    pub fn neg(self) -> Var<'t, T> {
        self.unary(UnaryOp::Neg)
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.unary(UnaryOp::Sigmoid)
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.unary(UnaryOp::Tanh)
    }

    pub fn scale(self, c: f64) -> Var<'t, T> {
        let c = T::of(c);
        let y = self.value().map(|v| v * c);
        self.tape
            .op(y, &[self], move |g, _| vec![Some(g.map(|g| g * c))])
    }

    pub fn add_scalar(self, c: f64) -> Var<'t, T> {
        let c = T::of(c);
        let y = self.value().map(|v| v + c);
        self.tape.op(y, &[self], move |g, _| vec![Some(g.clone())])
    }

    /// Batched matrix product over the last two axes. Leading batch axes must
    /// be equal or 1 (a missing axis counts as 1).
    pub fn matmul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let a = self.value();
        let b = rhs.value();
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let rank = sa.len().max(sb.len());
        let pad = |s: &[usize]| {
            let mut p = vec![1; rank - s.len()];
            p.extend_from_slice(&s[..s.len() - 2]);
            p
        };
        let (ba, bb) = (pad(&sa), pad(&sb));
        let mut batch = Vec::with_capacity(rank - 2);
        for (&x, &y) in ba.iter().zip(&bb) {
            if x != y && x != 1 && y != 1 {
                return Err(mismatch());
            }
            batch.push(x.max(y));
        }
        let nbatch: usize = batch.iter().product();
        // Per output batch entry: (offset into a, offset into b).
        let offsets: Vec<(usize, usize)> = {
            let (sta, stb) = (strides(&ba), strides(&bb));
            let stc = strides(&batch);
            (0..nbatch)
                .map(|flat| {
                    let (mut oa, mut ob) = (0, 0);
                    for d in 0..batch.len() {
                        let i = (flat / stc[d]) % batch[d];
                        if ba[d] != 1 {
                            oa += i * sta[d];
                        }
                        if bb[d] != 1 {
                            ob += i * stb[d];
                        }
                    }
                    (oa * m * k, ob * k * n)
                })
                .collect()
        };
        let b_shared = bb.iter().all(|&d| d == 1);
        let a_full = ba == batch;

        let mut out_shape = batch.clone();
        out_shape.extend([m, n]);
        let mut out = vec![T::zero(); nbatch * m * n];
        if b_shared && a_full {
            let rows = nbatch * m;
            T::gemm(
                rows,
                k,
                n,
                T::one(),
                a.data(),
                k as isize,
                1,
                b.data(),
                n as isize,
                1,
                T::zero(),
                &mut out,
                n as isize,
                1,
            );
        } else {
            for (i, &(oa, ob)) in offsets.iter().enumerate() {
                T::gemm(
                    m,
                    k,
                    n,
                    T::one(),
                    &a.data()[oa..oa + m * k],
                    k as isize,
                    1,
                    &b.data()[ob..ob + k * n],
                    n as isize,
                    1,
                    T::zero(),
                    &mut out[i * m * n..(i + 1) * m * n],
                    n as isize,
                    1,
                );
            }
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.tape.op(value, &[self, rhs], move |g, needs| {
            let gd = g.data();
            let mut da = needs[0].then(|| vec![T::zero(); a.numel()]);
            let mut db = needs[1].then(|| vec![T::zero(); b.numel()]);
            if b_shared && a_full {
                let rows = nbatch * m;
                if let Some(da) = da.as_mut() {
                    // dA = dC · Bᵀ
                    T::gemm(
                        rows,
                        n,
                        k,
                        T::one(),
                        gd,
                        n as isize,
                        1,
                        b.data(),
                        1,
                        n as isize,
                        T::zero(),
                        da,
                        k as isize,
                        1,
                    );
                }
                if let Some(db) = db.as_mut() {
                    // dB = Aᵀ · dC
                    T::gemm(
                        k,
                        rows,
                        n,
                        T::one(),
                        a.data(),
                        1,
                        k as isize,
                        gd,
                        n as isize,
                        1,
                        T::zero(),
                        db,
                        n as isize,
                        1,
                    );
                }
            } else {
                for (i, &(oa, ob)) in offsets.iter().enumerate() {
                    let gi = &gd[i * m * n..(i + 1) * m * n];
                    if let Some(da) = da.as_mut() {
                        T::gemm(
                            m,
                            n,
                            k,
                            T::one(),
                            gi,
                            n as isize,
                            1,
                            &b.data()[ob..ob + k * n],
                            1,
                            n as isize,
                            T::one(),
                            &mut da[oa..oa + m * k],
                            k as isize,
                            1,
                        );
                    }
                    if let Some(db) = db.as_mut() {
                        T::gemm(
                            k,
                            m,
                            n,
                            T::one(),
                            &a.data()[oa..oa + m * k],
                            1,
                            k as isize,
                            gi,
                            n as isize,
                            1,
                            T::one(),
                            &mut db[ob..ob + k * n],
                            n as isize,
                            1,
                        );
                    }
                }
            }
            vec![
                da.map(|d| Tensor::new(sa.clone(), d).unwrap()),
                db.map(|d| Tensor::new(sb.clone(), d).unwrap()),
            ]
        }))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let old = x.shape().to_vec();
        let y = (*x).clone().reshape(shape)?;
        Ok(self.tape.op(y, &[self], move |g, _| {
            vec![Some(g.clone().reshape(&old).unwrap())]
        }))
    }

    pub fn permute(self, axes: &[usize]) -> Result<Var<'t, T>> {
        let y = self.value().permute(axes)?;
        let inv = inverse_permutation(axes);
        Ok(self
            .tape
            .op(y, &[self], move |g, _| vec![Some(g.permute(&inv).unwrap())]))
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'t, T>> {
        let r = self.shape().len();
        if r < 2 {
            return Err(TensorError::InvalidAxis {
                op: "transpose",
                axis: 1,
                rank: r,
            });
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    /// Contiguous sub-range `[start, start + len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                op: "narrow",
                axis,
                rank: shape.len(),
            });
        }
        if start + len > shape[axis] {
            return Err(TensorError::Invalid {
                op: "narrow",
                msg: format!(
                    "range {start}..{} exceeds extent {}",
                    start + len,
                    shape[axis]
                ),
            });
        }
        let (outer, full, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, data)?;
        Ok(self.tape.op(value, &[self], move |g, _| {
            let mut dx = vec![T::zero(); outer * full * inner];
            for o in 0..outer {
                let base = (o * full + start) * inner;
                dx[base..base + len * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(Tensor::new(shape, dx).unwrap())]
        }))
    }

    /// Reduction along `axis`, dropping it. Max routes its gradient to the
    /// first maximal index.
    pub fn reduce(self, op: ReduceOp, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                op: "reduce",
                axis,
                rank: shape.len(),
            });
        }
        if shape[axis] == 0 {
            return Err(TensorError::EmptyAxis { op: "reduce", axis });
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let xd = x.data();
        let mut out = vec![T::zero(); outer * inner];
        let mut argmax = if op == ReduceOp::Max {
            vec![0usize; outer * inner]
        } else {
            Vec::new()
        };
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| xd[(o * len + l) * inner + i];
                let slot = o * inner + i;
                out[slot] = match op {
                    ReduceOp::Sum => (0..len).map(at).sum(),
                    ReduceOp::Mean => (0..len).map(at).sum::<T>() / T::of(len as f64),
                    ReduceOp::Max => {
                        let mut best = 0;
                        for l in 1..len {
                            if at(l) > at(best) {
                                best = l;
                            }
                        }
                        argmax[slot] = best;
                        at(best)
                    }
                };
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, out)?;
        Ok(self.tape.op(value, &[self], move |g, _| {
            let gd = g.data();
            let mut dx = vec![T::zero(); outer * len * inner];
            let scale = match op {
                ReduceOp::Mean => T::one() / T::of(len as f64),
                _ => T::one(),
            };
            for o in 0..outer {
                for i in 0..inner {
                    let slot = o * inner + i;
                    match op {
                        ReduceOp::Max => dx[(o * len + argmax[slot]) * inner + i] = gd[slot],
                        _ => {
                            for l in 0..len {
                                dx[(o * len + l) * inner + i] = gd[slot] * scale;
                            }
                        }
                    }
                }
            }
            vec![Some(Tensor::new(shape, dx).unwrap())]
        }))
    }

    pub fn sum(self, axis: usize) -> Result<Var<'t, T>> {
        self.reduce(ReduceOp::Sum, axis)
    }

    pub fn mean(self, axis: usize) -> Result<Var<'t, T>> {
        self.reduce(ReduceOp::Mean, axis)
    }

    pub fn max(self, axis: usize) -> Result<Var<'t, T>> {
        self.reduce(ReduceOp::Max, axis)
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum_all(self) -> Var<'t, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let value = Tensor::scalar(x.sum());
        self.tape.op(value, &[self], move |g, _| {
            vec![Some(Tensor::full(&shape, g.data()[0]))]
        })
    }

    pub fn mean_all(self) -> Var<'t, T> {
        let n = self.value().numel();
        self.sum_all().scale(1.0 / n as f64)
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                op: "softmax",
                axis,
                rank: shape.len(),
            });
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let y = softmax_kernel(x.data(), outer, len, inner);
        let value = Tensor::new(shape.clone(), y.clone())?;
        Ok(self.tape.op(value, &[self], move |g, _| {
            let gd = g.data();
            let mut dx = vec![T::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |l: usize| (o * len + l) * inner + i;
                    let dot: T = (0..len).map(|l| gd[idx(l)] * y[idx(l)]).sum();
                    for l in 0..len {
                        dx[idx(l)] = y[idx(l)] * (gd[idx(l)] - dot);
                    }
                }
            }
            vec![Some(Tensor::new(shape, dx).unwrap())]
        }))
    }
}

pub(crate) fn softmax_kernel<T: Element>(
    x: &[T],
    outer: usize,
    len: usize,
    inner: usize,
) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |l: usize| (o * len + l) * inner + i;
            let m = (0..len).map(|l| x[idx(l)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for l in 0..len {
                let e = (x[idx(l)] - m).exp();
                y[idx(l)] = e;
                total += e;
            }
            for l in 0..len {
                y[idx(l)] /= total;
            }
        }
    }
    y
}

/// Concatenation along `axis`; all other extents must agree.
pub fn concat<'t, T: Element>(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
    let first = parts.first().ok_or(TensorError::Invalid {
        op: "concat",
        msg: "no inputs".into(),
    })?;
    let tape = first.tape;
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let base = values[0].shape().to_vec();
    if axis >= base.len() {
        return Err(TensorError::InvalidAxis {
            op: "concat",
            axis,
            rank: base.len(),
        });
    }
    for v in &values[1..] {
        let s = v.shape();
        let compatible = s.len() == base.len()
            && s.iter()
                .zip(&base)
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !compatible {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: base.clone(),
                rhs: s.to_vec(),
            });
        }
    }
    let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
    let total: usize = lens.iter().sum();
    let (outer, _, inner) = axis_split(&base, axis);
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &len) in values.iter().zip(&lens) {
            data.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
        }
    }
    let mut out_shape = base.clone();
    out_shape[axis] = total;
    let value = Tensor::new(out_shape, data)?;
    let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
    Ok(tape.op(value, parts, move |g, needs| {
        let gd = g.data();
        let mut grads: Vec<Option<Vec<T>>> = needs
            .iter()
            .zip(&lens)
            .map(|(&need, &len)| need.then(|| Vec::with_capacity(outer * len * inner)))
            .collect();
        for o in 0..outer {
            let mut at = o * total * inner;
            for (slot, &len) in grads.iter_mut().zip(&lens) {
                if let Some(buf) = slot {
                    buf.extend_from_slice(&gd[at..at + len * inner]);
                }
                at += len * inner;
            }
        }
        grads
            .into_iter()
            .zip(shapes)
            .map(|(g, s)| g.map(|d| Tensor::new(s, d).unwrap()))
            .collect()
    }))
}
