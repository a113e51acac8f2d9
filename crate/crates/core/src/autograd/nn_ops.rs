//! Fused ops with hand-written backward rules: convolution, max pooling,
//! batch/layer normalization and cross-entropy.

use crate::autograd::ops::softmax_kernel;
use crate::autograd::tape::Var;
use crate::tensor::{Element, Result, Tensor, TensorError};

/// Stride and zero padding per spatial axis (depth, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvGeometry {
    pub fn uniform(stride: usize, padding: usize) -> Self {
        Self {
            stride: [stride; 3],
            padding: [padding; 3],
        }
    }
}

/// `(input + 2·padding − kernel) / stride + 1`, or `None` when non-positive.
pub fn output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    (stride > 0 && kernel > 0 && padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

fn out_dims(
    op: &'static str,
    spatial: &[usize],
    kernel: &[usize],
    geom: ConvGeometry,
) -> Result<[usize; 3]> {
    let mut out = [0; 3];
    for d in 0..3 {
        out[d] = output_extent(spatial[d], kernel[d], geom.stride[d], geom.padding[d]).ok_or_else(|| {
            TensorError::Invalid {
                op,
                msg: format!(
                    "non-positive output extent on axis {d}: input {} kernel {} padding {} stride {}",
                    spatial[d], kernel[d], geom.padding[d], geom.stride[d]
                ),
            }
        })?;
    }
    Ok(out)
}

struct Im2Col {
    channels: usize,
    spatial: [usize; 3],
    kernel: [usize; 3],
    out: [usize; 3],
    geom: ConvGeometry,
}

impl Im2Col {
    fn rows(&self) -> usize {
        self.channels * self.kernel.iter().product::<usize>()
    }

    fn positions(&self) -> usize {
        self.out.iter().product()
    }

    /// Visits (column row, output position, input offset within one sample)
    /// for every in-bounds tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [d, h, w] = self.spatial;
        let [kd, kh, kw] = self.kernel;
        let [od, oh, ow] = self.out;
        let [sd, sh, sw] = self.geom.stride;
        let [pd, ph, pw] = self.geom.padding;
        for c in 0..self.channels {
            for a in 0..kd {
                for b in 0..kh {
                    for e in 0..kw {
                        let row = ((c * kd + a) * kh + b) * kw + e;
                        for z in 0..od {
                            let iz = (z * sd + a) as isize - pd as isize;
                            if iz < 0 || iz >= d as isize {
                                continue;
                            }
                            for y in 0..oh {
                                let iy = (y * sh + b) as isize - ph as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let in_base = ((c * d + iz as usize) * h + iy as usize) * w;
                                let out_base = (z * oh + y) * ow;
                                for x in 0..ow {
                                    let ix = (x * sw + e) as isize - pw as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    f(row, out_base + x, in_base + ix as usize);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 3D convolution of `x: [B, C, D, H, W]` with `weight: [O, C, kd, kh, kw]`.
///
/// Lowered to one matrix product over an im2col buffer of shape
/// `[C·kd·kh·kw, B·D'·H'·W']`.
pub fn conv3d<'t, T: Element>(
    x: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Option<Var<'t, T>>,
    geom: ConvGeometry,
) -> Result<Var<'t, T>> {
    let xv = x.value();
    let wv = weight.value();
    let (xs, ws) = (xv.shape().to_vec(), wv.shape().to_vec());
    if xs.len() != 5 || ws.len() != 5 || xs[1] != ws[1] {
        return Err(TensorError::ShapeMismatch {
            op: "conv3d",
            lhs: xs,
            rhs: ws,
        });
    }
    let (batch, channels, out_ch) = (xs[0], xs[1], ws[0]);
    let kernel = [ws[2], ws[3], ws[4]];
    let out = out_dims("conv3d", &xs[2..], &kernel, geom)?;
    let bv = match bias {
        Some(b) => {
            let b = b.value();
            if b.shape() != [out_ch] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv3d bias",
                    lhs: vec![out_ch],
                    rhs: b.shape().to_vec(),
                });
            }
            Some(b)
        }
        None => None,
    };
    let plan = Im2Col {
        channels,
        spatial: [xs[2], xs[3], xs[4]],
        kernel,
        out,
        geom,
    };
    let (k, p) = (plan.rows(), plan.positions());
    let bp = batch * p;
    let sample = channels * xs[2] * xs[3] * xs[4];

    let mut col = vec![T::zero(); k * bp];
    for s in 0..batch {
        let xd = &xv.data()[s * sample..(s + 1) * sample];
        plan.for_each_tap(|row, pos, off| col[row * bp + s * p + pos] = xd[off]);
    }
    // [O, B·P]
    let mut prod = vec![T::zero(); out_ch * bp];
    T::gemm(
        out_ch,
        k,
        bp,
        T::one(),
        wv.data(),
        k as isize,
        1,
        &col,
        bp as isize,
        1,
        T::zero(),
        &mut prod,
        bp as isize,
        1,
    );
    let mut y = vec![T::zero(); batch * out_ch * p];
    for o in 0..out_ch {
        let shift = bv.as_ref().map_or(T::zero(), |b| b.data()[o]);
        for s in 0..batch {
            let src = &prod[o * bp + s * p..o * bp + (s + 1) * p];
            let dst = &mut y[(s * out_ch + o) * p..(s * out_ch + o + 1) * p];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = v + shift;
            }
        }
    }
    let value = Tensor::new(vec![batch, out_ch, out[0], out[1], out[2]], y)?;

    let mut inputs = vec![x, weight];
    inputs.extend(bias);
    Ok(x.tape.op(value, &inputs, move |g, needs| {
        let gd = g.data();
        // dY rearranged to [O, B·P]
        let mut gt = vec![T::zero(); out_ch * bp];
        for s in 0..batch {
            for o in 0..out_ch {
                gt[o * bp + s * p..o * bp + (s + 1) * p]
                    .copy_from_slice(&gd[(s * out_ch + o) * p..(s * out_ch + o + 1) * p]);
            }
        }
        let dx = needs[0].then(|| {
            let mut dcol = vec![T::zero(); k * bp];
            T::gemm(
                k,
                out_ch,
                bp,
                T::one(),
                wv.data(),
                1,
                k as isize,
                &gt,
                bp as isize,
                1,
                T::zero(),
                &mut dcol,
                bp as isize,
                1,
            );
            let mut dx = vec![T::zero(); batch * sample];
            for s in 0..batch {
                let dxs = &mut dx[s * sample..(s + 1) * sample];
                plan.for_each_tap(|row, pos, off| dxs[off] += dcol[row * bp + s * p + pos]);
            }
            Tensor::new(xs.clone(), dx).unwrap()
        });
        let dw = needs[1].then(|| {
            let mut dw = vec![T::zero(); out_ch * k];
            T::gemm(
                out_ch,
                bp,
                k,
                T::one(),
                &gt,
                bp as isize,
                1,
                &col,
                1,
                bp as isize,
                T::zero(),
                &mut dw,
                k as isize,
                1,
            );
            Tensor::new(ws.clone(), dw).unwrap()
        });
        let mut grads = vec![dx, dw];
        if needs.len() == 3 {
            grads.push(needs[2].then(|| {
                let db: Vec<T> = (0..out_ch)
                    .map(|o| gt[o * bp..(o + 1) * bp].iter().copied().sum())
                    .collect();
                Tensor::new(vec![out_ch], db).unwrap()
            }));
        }
        grads
    }))
}

/// Max pooling over `[B, C, D, H, W]` with implicit −∞ padding. The gradient
/// goes to the first maximal tap of each window.
pub fn max_pool3d<'t, T: Element>(
    x: Var<'t, T>,
    kernel: [usize; 3],
    geom: ConvGeometry,
) -> Result<Var<'t, T>> {
    let xv = x.value();
    let xs = xv.shape().to_vec();
    if xs.len() != 5 {
        return Err(TensorError::Invalid {
            op: "max_pool3d",
            msg: format!("expected rank 5, got {xs:?}"),
        });
    }
    if (0..3).any(|i| geom.padding[i] >= kernel[i]) {
        return Err(TensorError::Invalid {
            op: "max_pool3d",
            msg: format!(
                "padding {:?} must be below kernel {kernel:?} so every window sees an input",
                geom.padding
            ),
        });
    }
    let out = out_dims("max_pool3d", &xs[2..], &kernel, geom)?;
    let planes = xs[0] * xs[1];
    let [d, h, w] = [xs[2], xs[3], xs[4]];
    let plane_in = d * h * w;
    let plane_out: usize = out.iter().product();
    let mut y = vec![T::zero(); planes * plane_out];
    let mut arg = vec![0usize; planes * plane_out];
    for pl in 0..planes {
        let xd = &xv.data()[pl * plane_in..(pl + 1) * plane_in];
        for z in 0..out[0] {
            for r in 0..out[1] {
                for c in 0..out[2] {
                    let mut best = T::neg_infinity();
                    let mut best_at = usize::MAX;
                    for a in 0..kernel[0] {
                        let iz = (z * geom.stride[0] + a) as isize - geom.padding[0] as isize;
                        if iz < 0 || iz >= d as isize {
                            continue;
                        }
                        for b in 0..kernel[1] {
                            let iy = (r * geom.stride[1] + b) as isize - geom.padding[1] as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for e in 0..kernel[2] {
                                let ix =
                                    (c * geom.stride[2] + e) as isize - geom.padding[2] as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let off = (iz as usize * h + iy as usize) * w + ix as usize;
                                if best_at == usize::MAX || xd[off] > best || xd[off].is_nan() {
                                    best = xd[off];
                                    best_at = off;
                                }
                            }
                        }
                    }
                    let o = pl * plane_out + (z * out[1] + r) * out[2] + c;
                    y[o] = best;
                    arg[o] = pl * plane_in + best_at;
                }
            }
        }
    }
    let value = Tensor::new(vec![xs[0], xs[1], out[0], out[1], out[2]], y)?;
    Ok(x.tape.op(value, &[x], move |g, _| {
        let mut dx = vec![T::zero(); planes * plane_in];
        for (&src, &gv) in arg.iter().zip(g.data()) {
            dx[src] += gv;
        }
        vec![Some(Tensor::new(xs, dx).unwrap())]
    }))
}

/// Normalization statistics source for [`batch_norm`].
#[derive(Debug, Clone)]
pub enum NormStats<T: Element> {
    /// Use the statistics of the current batch.
    Batch,
    /// Use fixed running statistics.
    Running { mean: Tensor<T>, var: Tensor<T> },
}

/// Per-channel batch statistics observed in training mode: the mean and the
/// unbiased variance, for running-average updates.
pub struct ObservedStats<T: Element> {
    pub mean: Tensor<T>,
    pub var_unbiased: Tensor<T>,
}

/// Batch normalization over axis 1 of `x: [B, C, ...]`.
pub fn batch_norm<'t, T: Element>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    stats: NormStats<T>,
    eps: f64,
) -> Result<(Var<'t, T>, Option<ObservedStats<T>>)> {
    let xv = x.value();
    let xs = xv.shape().to_vec();
    if xs.len() < 2 {
        return Err(TensorError::Invalid {
            op: "batch_norm",
            msg: format!("expected [B, C, ...], got {xs:?}"),
        });
    }
    if xs[0] == 0 {
        return Err(TensorError::Invalid {
            op: "batch_norm",
            msg: "batch size 0".into(),
        });
    }
    let channels = xs[1];
    let gv = gamma.value();
    let bv = beta.value();
    if gv.shape() != [channels] || bv.shape() != [channels] {
        return Err(TensorError::ShapeMismatch {
            op: "batch_norm",
            lhs: vec![channels],
            rhs: gv.shape().to_vec(),
        });
    }
    let batch = xs[0];
    let inner: usize = xs[2..].iter().product();
    let count = batch * inner;
    let xd = xv.data();
    let at = move |s: usize, c: usize, i: usize| (s * channels + c) * inner + i;

    let (mean, var, observed) = match &stats {
        NormStats::Batch => {
            let mut mean = vec![T::zero(); channels];
            let mut var = vec![T::zero(); channels];
            for c in 0..channels {
                let mut acc = T::zero();
                for s in 0..batch {
                    acc += xd[at(s, c, 0)..at(s, c, 0) + inner].iter().copied().sum();
                }
                let m = acc / T::of(count as f64);
                let mut sq = T::zero();
                for s in 0..batch {
                    for &v in &xd[at(s, c, 0)..at(s, c, 0) + inner] {
                        sq += (v - m) * (v - m);
                    }
                }
                mean[c] = m;
                var[c] = sq / T::of(count as f64);
            }
            let unbiased = if count > 1 {
                var.iter()
                    .map(|&v| v * T::of(count as f64 / (count - 1) as f64))
                    .collect()
            } else {
                var.clone()
            };
            let observed = ObservedStats {
                mean: Tensor::new(vec![channels], mean.clone())?,
                var_unbiased: Tensor::new(vec![channels], unbiased)?,
            };
            (mean, var, Some(observed))
        }
        NormStats::Running { mean, var } => (mean.data().to_vec(), var.data().to_vec(), None),
    };
    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::one() / (v + T::of(eps)).sqrt())
        .collect();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut y = vec![T::zero(); xd.len()];
    for s in 0..batch {
        for c in 0..channels {
            let (g, b) = (gv.data()[c], bv.data()[c]);
            for i in 0..inner {
                let j = at(s, c, i);
                xhat[j] = (xd[j] - mean[c]) * inv_std[c];
                y[j] = xhat[j] * g + b;
            }
        }
    }
    let value = Tensor::new(xs.clone(), y)?;
    let batch_stats = matches!(stats, NormStats::Batch);
    let out = x.tape.op(value, &[x, gamma, beta], move |g, needs| {
        let gd = g.data();
        let mut sum_g = vec![T::zero(); channels];
        let mut sum_gx = vec![T::zero(); channels];
        for s in 0..batch {
            for c in 0..channels {
                for i in 0..inner {
                    let j = at(s, c, i);
                    sum_g[c] += gd[j];
                    sum_gx[c] += gd[j] * xhat[j];
                }
            }
        }
        let dx = needs[0].then(|| {
            let n = T::of(count as f64);
            let mut dx = vec![T::zero(); gd.len()];
            for s in 0..batch {
                for c in 0..channels {
                    let gam = gv.data()[c];
                    for i in 0..inner {
                        let j = at(s, c, i);
                        dx[j] = if batch_stats {
                            gam * inv_std[c] * (gd[j] - sum_g[c] / n - xhat[j] * sum_gx[c] / n)
                        } else {
                            gam * inv_std[c] * gd[j]
                        };
                    }
                }
            }
            Tensor::new(xs, dx).unwrap()
        });
        vec![
            dx,
            needs[1].then(|| Tensor::new(vec![channels], sum_gx).unwrap()),
            needs[2].then(|| Tensor::new(vec![channels], sum_g).unwrap()),
        ]
    });
    Ok((out, observed))
}

/// Layer normalization over the last axis.
pub fn layer_norm<'t, T: Element>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    eps: f64,
) -> Result<Var<'t, T>> {
    let xv = x.value();
    let xs = xv.shape().to_vec();
    let dim = *xs.last().ok_or(TensorError::Invalid {
        op: "layer_norm",
        msg: "rank 0 input".into(),
    })?;
    let (gv, bv) = (gamma.value(), beta.value());
    if gv.shape() != [dim] || bv.shape() != [dim] {
        return Err(TensorError::ShapeMismatch {
            op: "layer_norm",
            lhs: vec![dim],
            rhs: gv.shape().to_vec(),
        });
    }
    let rows = xv.numel() / dim.max(1);
    let mut xhat = vec![T::zero(); xv.numel()];
    let mut inv_std = vec![T::zero(); rows];
    let mut y = vec![T::zero(); xv.numel()];
    for r in 0..rows {
        let row = &xv.data()[r * dim..(r + 1) * dim];
        let m = row.iter().copied().sum::<T>() / T::of(dim as f64);
        let v = row.iter().map(|&a| (a - m) * (a - m)).sum::<T>() / T::of(dim as f64);
        let is = T::one() / (v + T::of(eps)).sqrt();
        inv_std[r] = is;
        for i in 0..dim {
            let h = (row[i] - m) * is;
            xhat[r * dim + i] = h;
            y[r * dim + i] = h * gv.data()[i] + bv.data()[i];
        }
    }
    let value = Tensor::new(xs.clone(), y)?;
    Ok(x.tape.op(value, &[x, gamma, beta], move |g, needs| {
        let gd = g.data();
        let mut dgamma = vec![T::zero(); dim];
        let mut dbeta = vec![T::zero(); dim];
        let mut dx = vec![T::zero(); gd.len()];
        let n = T::of(dim as f64);
        for (r, &is) in inv_std.iter().enumerate().take(rows) {
            let mut sum_dh = T::zero();
            let mut sum_dh_h = T::zero();
            for i in 0..dim {
                let j = r * dim + i;
                dgamma[i] += gd[j] * xhat[j];
                dbeta[i] += gd[j];
                let dh = gd[j] * gv.data()[i];
                sum_dh += dh;
                sum_dh_h += dh * xhat[j];
            }
            for i in 0..dim {
                let j = r * dim + i;
                let dh = gd[j] * gv.data()[i];
                dx[j] = is * (dh - sum_dh / n - xhat[j] * sum_dh_h / n);
            }
        }
        vec![
            needs[0].then(|| Tensor::new(xs, dx).unwrap()),
            needs[1].then(|| Tensor::new(vec![dim], dgamma).unwrap()),
            needs[2].then(|| Tensor::new(vec![dim], dbeta).unwrap()),
        ]
    }))
}

/// Mean over the batch of `−log softmax(logits)[label]`, via log-sum-exp.
pub fn cross_entropy<'t, T: Element>(logits: Var<'t, T>, labels: &[usize]) -> Result<Var<'t, T>> {
    let lv = logits.value();
    let ls = lv.shape().to_vec();
    if ls.len() != 2 || ls[0] != labels.len() || ls[0] == 0 {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy",
            lhs: ls,
            rhs: vec![labels.len()],
        });
    }
    let (batch, classes) = (ls[0], ls[1]);
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(TensorError::LabelOutOfRange {
            label,
            n_classes: classes,
        });
    }
    let probs = softmax_kernel(lv.data(), batch, classes, 1);
    let mut total = T::zero();
    for (r, &label) in labels.iter().enumerate() {
        let row = &lv.data()[r * classes..(r + 1) * classes];
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        total += lse - row[label];
    }
    let value = Tensor::scalar(total / T::of(batch as f64));
    let labels = labels.to_vec();
    Ok(logits.tape.op(value, &[logits], move |g, _| {
        let scale = g.data()[0] / T::of(batch as f64);
        let mut d = probs;
        for (r, &label) in labels.iter().enumerate() {
            d[r * classes + label] -= T::one();
        }
        d.iter_mut().for_each(|v| *v *= scale);
        vec![Some(Tensor::new(ls, d).unwrap())]
    }))
}
