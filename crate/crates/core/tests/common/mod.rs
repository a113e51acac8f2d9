#![allow(dead_code)]

pub mod gradient_cases;
pub mod oracle_cases;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slicepool::architecture::Model;
use slicepool::autograd::{relative_error, Tape, Var};
use slicepool::data::{Dataset, Split, Volume};
use slicepool::interpret::{extract_attention, hirescam};
use slicepool::layers::Builder;
use slicepool::params::{Group, ParamStore};
use slicepool::tensor::Result;
use slicepool::Tensor;

pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform entries in [-1, 1).
pub fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

/// Fresh store plus a builder-compatible rng for layer tests.
pub fn store_and_rng(seed: u64) -> (ParamStore<f64>, ChaCha8Rng) {
    (ParamStore::new(), rng(seed))
}

pub fn builder<'a>(store: &'a mut ParamStore<f64>, r: &'a mut ChaCha8Rng) -> Builder<'a, f64> {
    Builder::new(store, r, Group::Backbone)
}

/// Reduces `y` to a scalar with fixed pseudo-random weights, so that no
/// gradient vanishes by symmetry (as a plain sum would after a softmax or
/// a normalization).
pub fn project<'t>(y: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let w = rand_tensor(&y.shape(), seed);
    Ok(y.mul(y.tape().constant(w))?.sum_all())
}

/// Element indices to probe: all of them for small tensors, otherwise an
/// evenly spread sample of `max` including both ends.
fn probe_indices(numel: usize, max: usize) -> Vec<usize> {
    if numel <= max {
        return (0..numel).collect();
    }
    let mut idx: Vec<usize> = (0..max).map(|i| i * (numel - 1) / (max - 1)).collect();
    idx.dedup();
    idx
}

/// Fourth-order central difference `(f(−2h) − 8f(−h) + 8f(h) − f(2h)) / 12h`.
fn stencil(f: &mut impl FnMut(f64) -> Result<f64>, h: f64) -> Result<f64> {
    Ok((f(-2.0 * h)? - 8.0 * f(-h)? + 8.0 * f(h)? - f(2.0 * h)?) / (12.0 * h))
}

/// Derivative at 0 of `f`, given as a function of the offset. A stencil is
/// accepted once it agrees with the half-step stencil to 1e-5 relative
/// (1e-10 absolute near zero); disagreement means a kink (ReLU, max) lies
/// inside the window and the step shrinks.
pub fn robust_derivative(mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    const STEPS: [f64; 4] = [1e-4, 1e-5, 1e-6, 1e-7];
    let mut last = 0.0;
    for h in STEPS {
        let (a, b) = (stencil(&mut f, h)?, stencil(&mut f, h / 2.0)?);
        if (a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1e-5) {
            return Ok(b);
        }
        last = b;
    }
    Ok(last)
}

#[derive(Debug, Clone, Default)]
pub struct StoreCheck {
    pub max_relative_error: f64,
    /// Tensor name, element, analytic and numeric values of the worst entry.
    pub worst: (String, usize, f64, f64),
    pub checked: usize,
    pub params_checked: usize,
}

/// Central differences over every gradient-receiving parameter in `store`
/// and every tensor in `inputs`, against the tape's analytic gradients.
/// At most `max_per_tensor` entries are probed per tensor.
pub fn store_grad_check<F>(
    store: &mut ParamStore<f64>,
    inputs: &[Tensor<f64>],
    max_per_tensor: usize,
    f: F,
) -> Result<StoreCheck>
where
    F: for<'t> Fn(&'t Tape<f64>, &ParamStore<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    grad_check_with(store, |s| s, inputs, max_per_tensor, f)
}

/// [`store_grad_check`] for any `ctx` owning a parameter store, such as a
/// whole model.
pub fn grad_check_with<C, S, F>(
    ctx: &mut C,
    store_of: S,
    inputs: &[Tensor<f64>],
    max_per_tensor: usize,
    f: F,
) -> Result<StoreCheck>
where
    S: Fn(&mut C) -> &mut ParamStore<f64>,
    F: for<'t> Fn(&'t Tape<f64>, &C, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let leaves: Vec<_> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let loss = f(&tape, ctx, &leaves)?;
    let grads = tape.backward(loss)?;
    let param_grads = grads.param_grads();
    let input_grads: Vec<Tensor<f64>> = leaves
        .iter()
        .zip(inputs)
        .map(|(&v, x)| {
            grads
                .of(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(x.shape()))
        })
        .collect();

    let eval = |ctx: &C, inputs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::no_grad();
        let leaves: Vec<_> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        Ok(f(&tape, ctx, &leaves)?.value().data()[0])
    };

    let mut report = StoreCheck::default();
    let mut note = |slot: &dyn Fn() -> String, i: usize, a: f64, n: f64| {
        let e = relative_error(a, n);
        if e > report.max_relative_error {
            report.max_relative_error = e;
            report.worst = (slot(), i, a, n);
        }
        report.checked += 1;
    };

    let ids: Vec<_> = store_of(ctx)
        .iter()
        .filter(|(_, p)| p.receives_grad())
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        let name = store_of(ctx).get(id).name().to_string();
        let analytic = param_grads
            .iter()
            .find(|(pid, _)| *pid == id)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| Tensor::zeros(store_of(ctx).value(id).shape()));
        for i in probe_indices(analytic.numel(), max_per_tensor) {
            let orig = store_of(ctx).value(id).data()[i];
            let numeric = robust_derivative(|dx| {
                store_of(ctx).value_mut(id).data_mut()[i] = orig + dx;
                let y = eval(ctx, inputs);
                store_of(ctx).value_mut(id).data_mut()[i] = orig;
                y
            })?;
            note(&|| name.clone(), i, analytic.data()[i], numeric);
        }
        report.params_checked += 1;
    }
    let mut work = inputs.to_vec();
    for (k, g) in input_grads.iter().enumerate() {
        for i in probe_indices(g.numel(), max_per_tensor) {
            let orig = work[k].data()[i];
            let numeric = robust_derivative(|dx| {
                work[k].data_mut()[i] = orig + dx;
                let y = eval(ctx, &work);
                work[k].data_mut()[i] = orig;
                y
            })?;
            note(&|| format!("input{k}"), i, g.data()[i], numeric);
        }
    }
    Ok(report)
}

/// Direct-loop convolution of `x: [b, c, d, h, w]` with `w: [o, c, kd, kh, kw]`.
pub fn conv3d_naive(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    bias: Option<&[f64]>,
    stride: [usize; 3],
    pad: [usize; 3],
) -> Tensor<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let (b, c, o) = (xs[0], xs[1], ws[0]);
    let ins = [xs[2], xs[3], xs[4]];
    let k = [ws[2], ws[3], ws[4]];
    let out: Vec<usize> = (0..3)
        .map(|a| (ins[a] + 2 * pad[a] - k[a]) / stride[a] + 1)
        .collect();
    let xd = x.data();
    let wd = w.data();
    let mut y = vec![0.0; b * o * out[0] * out[1] * out[2]];
    let mut at = 0;
    for bi in 0..b {
        for oi in 0..o {
            for z in 0..out[0] {
                for r in 0..out[1] {
                    for q in 0..out[2] {
                        let mut acc = bias.map_or(0.0, |bs| bs[oi]);
                        for ci in 0..c {
                            for a in 0..k[0] {
                                for bb in 0..k[1] {
                                    for cc in 0..k[2] {
                                        let zz = (z * stride[0] + a) as isize - pad[0] as isize;
                                        let rr = (r * stride[1] + bb) as isize - pad[1] as isize;
                                        let qq = (q * stride[2] + cc) as isize - pad[2] as isize;
                                        if zz < 0
                                            || rr < 0
                                            || qq < 0
                                            || zz as usize >= ins[0]
                                            || rr as usize >= ins[1]
                                            || qq as usize >= ins[2]
                                        {
                                            continue;
                                        }
                                        let xi = (((bi * c + ci) * ins[0] + zz as usize) * ins[1]
                                            + rr as usize)
                                            * ins[2]
                                            + qq as usize;
                                        let wi =
                                            (((oi * c + ci) * k[0] + a) * k[1] + bb) * k[2] + cc;
                                        acc += xd[xi] * wd[wi];
                                    }
                                }
                            }
                        }
                        y[at] = acc;
                        at += 1;
                    }
                }
            }
        }
    }
    Tensor::new(vec![b, o, out[0], out[1], out[2]], y).unwrap()
}

/// Direct-loop 2D convolution of `x: [b, c, h, w]` with `w: [o, c, k, k]`.
pub fn conv2d_naive(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let (b, c, h, wd_) = (xs[0], xs[1], xs[2], xs[3]);
    let (o, k) = (ws[0], ws[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd_ + 2 * pad - k) / stride + 1;
    let mut y = Vec::with_capacity(b * o * oh * ow);
    for bi in 0..b {
        for oi in 0..o {
            for r in 0..oh {
                for q in 0..ow {
                    let mut acc = bias.map_or(0.0, |bs| bs[oi]);
                    for ci in 0..c {
                        for a in 0..k {
                            for bb in 0..k {
                                let rr = (r * stride + a) as isize - pad as isize;
                                let qq = (q * stride + bb) as isize - pad as isize;
                                if rr < 0 || qq < 0 || rr as usize >= h || qq as usize >= wd_ {
                                    continue;
                                }
                                acc += x.data()
                                    [((bi * c + ci) * h + rr as usize) * wd_ + qq as usize]
                                    * w.data()[((oi * c + ci) * k + a) * k + bb];
                            }
                        }
                    }
                    y.push(acc);
                }
            }
        }
    }
    Tensor::new(vec![b, o, oh, ow], y).unwrap()
}

/// Triple-loop product of `[m, k] × [k, n]`.
pub fn matmul_naive(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for t in 0..k {
                out[i * n + j] += a.data()[i * k + t] * b.data()[t * n + j];
            }
        }
    }
    Tensor::new(vec![m, n], out).unwrap()
}

/// Pair counting: (wins + ½ ties) / (P·N), as one rational.
pub fn auroc_brute(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for (i, &pi) in positive.iter().enumerate() {
        if !pi {
            continue;
        }
        for (j, &pj) in positive.iter().enumerate() {
            if pj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                twice += 2;
            } else if scores[i] == scores[j] {
                twice += 1;
            }
        }
    }
    twice as f64 / (2 * pairs) as f64
}

/// Inclusive voxel bounds of the recorded signal: the recorded position
/// range on every axis that has entries, the full extent elsewhere.
pub fn signal_box(v: &Volume) -> ([usize; 3], [usize; 3]) {
    let [d, h, w] = v.spatial_shape();
    let mut lo = [0; 3];
    let mut hi = [d - 1, h - 1, w - 1];
    for ax in 0..3 {
        let ps: Vec<usize> = v
            .signal_slices
            .iter()
            .flatten()
            .filter(|s| s.axis.spatial_index() == ax)
            .map(|s| s.position)
            .collect();
        if let (Some(&a), Some(&b)) = (ps.iter().min(), ps.iter().max()) {
            lo[ax] = a;
            hi[ax] = b;
        }
    }
    (lo, hi)
}

/// Mean |value| inside and outside the signal box of `v`, for a map at the
/// volume's spatial resolution.
pub fn box_contrast(v: &Volume, map: &Tensor<f64>) -> (f64, f64) {
    let [_, h, w] = v.spatial_shape();
    let (lo, hi) = signal_box(v);
    let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
    for (f, x) in map.data().iter().enumerate() {
        let c = [f / (h * w), (f / w) % h, f % w];
        if (0..3).all(|k| c[k] >= lo[k] && c[k] <= hi[k]) {
            si += x.abs();
            ni += 1;
        } else {
            so += x.abs();
            no += 1;
        }
    }
    (si / ni as f64, so / no as f64)
}

/// Mean attention mass on the recorded signal slices and the mean uniform
/// baseline, over class-1 volumes of `split`.
pub fn attention_mass(model: &Model<f32>, ds: &Dataset, split: Split) -> (f64, f64) {
    let (mut mass, mut base, mut n) = (0.0, 0.0, 0.0);
    for i in ds.split_indices(split) {
        let v = &ds.volumes[i];
        if v.label != 1 {
            continue;
        }
        let map = extract_attention(model, v).unwrap();
        let sig = v.signal_slices.as_ref().unwrap();
        mass += sig
            .iter()
            .map(|s| map.per_slice_weight[map.layout.index_of(s.axis, s.position).unwrap()])
            .sum::<f64>();
        base += sig.len() as f64 / map.n_slices() as f64;
        n += 1.0;
    }
    (mass / n, base / n)
}

/// Mean inside/outside |HiResCam| over class-1 volumes of `split`, for the
/// default layer and target class 1.
pub fn attribution_contrast(model: &Model<f32>, ds: &Dataset, split: Split) -> (f64, f64) {
    let (mut inside, mut outside, mut n) = (0.0, 0.0, 0.0);
    for i in ds.split_indices(split) {
        let v = &ds.volumes[i];
        if v.label != 1 {
            continue;
        }
        let a = hirescam(model, v, 1, None, false).unwrap();
        let (si, so) = box_contrast(v, &a.upsampled);
        inside += si;
        outside += so;
        n += 1.0;
    }
    (inside / n, outside / n)
}

/// Linearly separable two-class set of `side³` volumes: class 0 around 0.2,
/// class 1 around 0.6, uniform noise of ±0.1. `per_class` counts are for
/// (train, val, test).
pub fn toy_dataset(side: usize, per_class: (usize, usize, usize), seed: u64) -> Dataset {
    use slicepool::data::{DatasetManifest, ManifestEntry, MANIFEST_VERSION};
    let mut r = rng(seed);
    let mut volumes = Vec::new();
    let mut entries = Vec::new();
    for (split, n) in [
        (Split::Train, per_class.0),
        (Split::Val, per_class.1),
        (Split::Test, per_class.2),
    ] {
        for i in 0..2 * n {
            let label = i % 2;
            let level = if label == 1 { 0.6 } else { 0.2 };
            let id = format!("toy-{}-{i:03}", split.name());
            volumes.push(Volume {
                id: id.clone(),
                data: Tensor::from_fn(&[1, side, side, side], |_| {
                    level + r.random_range(-0.1f32..0.1)
                }),
                label,
                signal_slices: None,
            });
            entries.push(ManifestEntry {
                file: format!("{id}.rvf"),
                label,
                split,
                signal_slices: None,
            });
        }
    }
    Dataset {
        manifest: DatasetManifest {
            version: MANIFEST_VERSION,
            name: "toy".into(),
            n_classes: 2,
            entries,
            generator: None,
        },
        volumes,
    }
}

/// Bit patterns of the trainable parameters in `group`, keyed by name.
pub fn group_bits(model: &Model<f32>, group: Group) -> Vec<(String, Vec<u32>)> {
    model
        .store()
        .iter()
        .filter(|(_, p)| p.group() == group && p.trainable())
        .map(|(_, p)| {
            (
                p.name().to_string(),
                p.value().data().iter().map(|x| x.to_bits()).collect(),
            )
        })
        .collect()
}
