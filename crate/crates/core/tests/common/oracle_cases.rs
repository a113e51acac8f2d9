//! Library outputs against independent direct-loop implementations. Each
//! case reports its maximum absolute difference.

use super::*;
use slicepool::autograd::{conv3d, ConvGeometry, Tape};
use slicepool::layers::{acs_split, AcsConv3d, Conv2d, Conv3d, ConvSpec, MultiheadAttention};
use slicepool::params::ParamStore;
use slicepool::Tensor;

pub use super::gradient_cases::{Case, CaseGroup};

/// Infinite when the shapes disagree.
fn diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.max_abs_diff(b)
}

fn randomize_bias(store: &mut ParamStore<f64>, id: Option<slicepool::params::ParamId>, seed: u64) {
    if let Some(id) = id {
        let shape = store.value(id).shape().to_vec();
        store.set(id, rand_tensor(&shape, seed));
    }
}

pub fn conv3d_op_matches_naive_loops(out: &mut Vec<Case>) {
    let cases = [
        ([1, 2, 5, 6, 7], [3, 2, 3, 3, 3], [1, 1, 1], [1, 1, 1]),
        ([2, 1, 6, 6, 6], [2, 1, 3, 3, 3], [2, 2, 2], [1, 1, 1]),
        ([1, 3, 4, 5, 6], [4, 3, 1, 3, 2], [1, 2, 1], [0, 1, 1]),
        ([2, 2, 7, 5, 4], [2, 2, 2, 2, 2], [3, 1, 2], [0, 0, 2]),
    ];
    for (i, (xs, ws, stride, padding)) in cases.into_iter().enumerate() {
        let x = rand_tensor(&xs, i as u64);
        let w = rand_tensor(&ws, 100 + i as u64);
        let b = rand_tensor(&[ws[0]], 200 + i as u64);
        let tape = Tape::<f64>::no_grad();
        let y = conv3d(
            tape.constant(x.clone()),
            tape.constant(w.clone()),
            Some(tape.constant(b.clone())),
            ConvGeometry { stride, padding },
        )
        .unwrap()
        .value();
        let expected = conv3d_naive(&x, &w, Some(b.data()), stride, padding);
        out.push((format!("conv3d op case {i}"), diff(&y, &expected)));
    }
}

pub fn conv2d_layer_matches_naive_loops(out: &mut Vec<Case>) {
    for (i, (c, o, k, s, p, hw)) in [
        (1, 4, 3, 1, 1, 7),
        (3, 2, 3, 2, 1, 8),
        (2, 5, 1, 1, 0, 5),
        (2, 3, 7, 2, 3, 9),
    ]
    .into_iter()
    .enumerate()
    {
        let (mut store, mut r) = store_and_rng(i as u64);
        let conv = Conv2d::new(
            &mut builder(&mut store, &mut r),
            ConvSpec::new(c, o, k, s, p),
        )
        .unwrap();
        randomize_bias(&mut store, conv.bias, 50 + i as u64);
        let x = rand_tensor(&[2, c, hw, hw + 1], 10 + i as u64);
        let tape = Tape::no_grad();
        let y = conv
            .forward(&tape, &store, tape.constant(x.clone()))
            .unwrap()
            .value();
        let bias = conv.bias.map(|id| store.value(id).data().to_vec());
        let expected = conv2d_naive(&x, store.value(conv.weight), bias.as_deref(), s, p);
        out.push((format!("conv2d layer case {i}"), diff(&y, &expected)));
    }
}

pub fn conv3d_layer_matches_naive_loops(out: &mut Vec<Case>) {
    for (i, (c, o, k, s, p)) in [(1, 4, 3, 1, 1), (2, 3, 3, 2, 1), (3, 2, 1, 1, 0)]
        .into_iter()
        .enumerate()
    {
        let (mut store, mut r) = store_and_rng(i as u64);
        let conv = Conv3d::new(
            &mut builder(&mut store, &mut r),
            ConvSpec::new(c, o, k, s, p),
        )
        .unwrap();
        randomize_bias(&mut store, conv.bias, 60 + i as u64);
        let x = rand_tensor(&[2, c, 5, 6, 7], 20 + i as u64);
        let tape = Tape::no_grad();
        let y = conv
            .forward(&tape, &store, tape.constant(x.clone()))
            .unwrap()
            .value();
        let bias = conv.bias.map(|id| store.value(id).data().to_vec());
        let expected = conv3d_naive(
            &x,
            store.value(conv.weight),
            bias.as_deref(),
            [s; 3],
            [p; 3],
        );
        out.push((format!("conv3d layer case {i}"), diff(&y, &expected)));
    }
}

/// Plane-wise ACS oracle: each output channel group applies its 2D kernels
/// to every plane orthogonal to its axis.
fn acs_plane_oracle(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    bias: &[f64],
    split: (usize, usize, usize),
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let xs = x.shape();
    let (b, c, d, h, wd) = (xs[0], xs[1], xs[2], xs[3], xs[4]);
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let out = |n: usize| (n + 2 * pad - k) / stride + 1;
    let (od, oh, ow) = (out(d), out(h), out(wd));
    let mut y = Tensor::zeros(&[b, o, od, oh, ow]);
    let x_at = |bi: usize, ci: usize, z: usize, r: usize, q: usize| {
        x.data()[(((bi * c + ci) * d + z) * h + r) * wd + q]
    };
    let kernels = |start: usize, n: usize| {
        Tensor::new(
            vec![n, c, k, k],
            w.data()[start * c * k * k..(start + n) * c * k * k].to_vec(),
        )
        .unwrap()
    };
    let groups = [
        (0usize, split.0),
        (split.0, split.1),
        (split.0 + split.1, split.2),
    ];
    for (axis, &(start, n)) in groups.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let kern = kernels(start, n);
        let bs = &bias[start..start + n];
        // Planes are taken at strided positions along the group's axis.
        let (count, (pa, pb)) = match axis {
            0 => (od, (h, wd)),
            1 => (oh, (d, wd)),
            _ => (ow, (d, h)),
        };
        for plane in 0..count {
            let pos = plane * stride;
            let p2 = Tensor::from_fn(&[b, c, pa, pb], |f| {
                let (bi, ci, u, v) = (
                    f / (c * pa * pb),
                    (f / (pa * pb)) % c,
                    (f / pb) % pa,
                    f % pb,
                );
                match axis {
                    0 => x_at(bi, ci, pos, u, v),
                    1 => x_at(bi, ci, u, pos, v),
                    _ => x_at(bi, ci, u, v, pos),
                }
            });
            let r = conv2d_naive(&p2, &kern, Some(bs), stride, pad);
            let (ru, rv) = (r.shape()[2], r.shape()[3]);
            for bi in 0..b {
                for g in 0..n {
                    for u in 0..ru {
                        for v in 0..rv {
                            let val = r.data()[((bi * n + g) * ru + u) * rv + v];
                            let (z, rr, q) = match axis {
                                0 => (plane, u, v),
                                1 => (u, plane, v),
                                _ => (u, v, plane),
                            };
                            y.data_mut()[(((bi * o + start + g) * od + z) * oh + rr) * ow + q] =
                                val;
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn acs_matches_plane_wise_oracle(out: &mut Vec<Case>) {
    for (i, (c, o, s, shape)) in [
        (1, 6, 1, [5, 6, 7]),
        (2, 7, 1, [4, 4, 4]),
        (3, 4, 2, [6, 7, 8]),
        (2, 2, 1, [3, 5, 4]),
    ]
    .into_iter()
    .enumerate()
    {
        let (mut store, mut r) = store_and_rng(i as u64);
        let conv = AcsConv3d::new(
            &mut builder(&mut store, &mut r),
            ConvSpec::new(c, o, 3, s, 1),
        )
        .unwrap();
        if conv.split != acs_split(o) {
            out.push((format!("acs split case {i}"), f64::INFINITY));
        }
        randomize_bias(&mut store, conv.bias, 70 + i as u64);
        let x = rand_tensor(&[2, c, shape[0], shape[1], shape[2]], 30 + i as u64);
        let tape = Tape::no_grad();
        let y = conv
            .forward(&tape, &store, tape.constant(x.clone()))
            .unwrap()
            .value();
        let bias = store.value(conv.bias.unwrap()).data().to_vec();
        let expected = acs_plane_oracle(&x, store.value(conv.weight), &bias, conv.split, s, 1);
        out.push((format!("acs case {i}"), diff(&y, &expected)));
    }
}

pub fn matmul_matches_triple_loop(out: &mut Vec<Case>) {
    for (i, (m, k, n)) in [(1, 1, 1), (3, 4, 5), (17, 9, 13), (64, 33, 2)]
        .into_iter()
        .enumerate()
    {
        let a = rand_tensor(&[m, k], i as u64);
        let b = rand_tensor(&[k, n], 40 + i as u64);
        let tape = Tape::<f64>::no_grad();
        let y = tape
            .constant(a.clone())
            .matmul(tape.constant(b.clone()))
            .unwrap()
            .value();
        out.push((format!("matmul case {i}"), diff(&y, &matmul_naive(&a, &b))));
    }
}

/// `out = concat_h(softmax(Q_h K_hᵀ / √d_h) V_h) W_o + b_o` evaluated with
/// scalar loops.
fn mha_direct(
    store: &ParamStore<f64>,
    m: &MultiheadAttention,
    q: &Tensor<f64>,
    kv: &Tensor<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let (b, nq, nk, d) = (q.shape()[0], q.shape()[1], kv.shape()[1], m.dim);
    let dh = d / m.heads;
    let lin = |l: &slicepool::layers::Linear, x: &[f64]| -> Vec<f64> {
        let (w, bias) = (store.value(l.weight).data(), store.value(l.bias).data());
        (0..d)
            .map(|j| bias[j] + (0..d).map(|i| x[i] * w[i * d + j]).sum::<f64>())
            .collect()
    };
    let row = |t: &Tensor<f64>, n: usize, bi: usize, i: usize| {
        t.data()[(bi * n + i) * d..(bi * n + i + 1) * d].to_vec()
    };
    let mut outputs = Vec::new();
    let mut weights = vec![0.0; b * m.heads * nq * nk];
    for bi in 0..b {
        let ks: Vec<Vec<f64>> = (0..nk).map(|j| lin(&m.k, &row(kv, nk, bi, j))).collect();
        let vs: Vec<Vec<f64>> = (0..nk).map(|j| lin(&m.v, &row(kv, nk, bi, j))).collect();
        for i in 0..nq {
            let qi = lin(&m.q, &row(q, nq, bi, i));
            let mut ctx = vec![0.0; d];
            for h in 0..m.heads {
                let r = h * dh..(h + 1) * dh;
                let scores: Vec<f64> = ks
                    .iter()
                    .map(|kj| r.clone().map(|t| qi[t] * kj[t]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
                for (j, s) in scores.iter().enumerate() {
                    let a = (s - mx).exp() / z;
                    weights[((bi * m.heads + h) * nq + i) * nk + j] = a;
                    for t in r.clone() {
                        ctx[t] += a * vs[j][t];
                    }
                }
            }
            outputs.extend(lin(&m.out, &ctx));
        }
    }
    (outputs, weights)
}

pub fn multihead_attention_matches_direct_formula(out: &mut Vec<Case>) {
    for (i, (d, heads, nq, nk)) in [(8, 2, 1, 5), (12, 3, 4, 7), (16, 8, 2, 3), (6, 1, 3, 1)]
        .into_iter()
        .enumerate()
    {
        let (mut store, mut r) = store_and_rng(i as u64);
        let m = MultiheadAttention::new(&mut builder(&mut store, &mut r), d, heads).unwrap();
        for (j, l) in [&m.q, &m.k, &m.v, &m.out].into_iter().enumerate() {
            randomize_bias(&mut store, Some(l.bias), 80 + j as u64);
        }
        let q = rand_tensor(&[2, nq, d], 90 + i as u64);
        let kv = rand_tensor(&[2, nk, d], 95 + i as u64);
        let tape = Tape::no_grad();
        let kvv = tape.constant(kv.clone());
        let attn = m
            .forward(&tape, &store, tape.constant(q.clone()), kvv, kvv)
            .unwrap();
        let (expected_out, expected_w) = mha_direct(&store, &m, &q, &kv);
        let got_out = attn.output.value();
        let got_w = attn.weights.value();
        let d = |a: &[f64], b: &[f64]| {
            if a.len() != b.len() {
                return f64::INFINITY;
            }
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        };
        out.push((
            format!("attention output case {i}"),
            d(got_out.data(), &expected_out),
        ));
        out.push((
            format!("attention weights case {i}"),
            d(got_w.data(), &expected_w),
        ));
    }
}

pub const GROUPS: [CaseGroup; 6] = [
    ("conv3d op", conv3d_op_matches_naive_loops),
    ("conv2d layer", conv2d_layer_matches_naive_loops),
    ("conv3d layer", conv3d_layer_matches_naive_loops),
    ("acs layer", acs_matches_plane_wise_oracle),
    ("matmul", matmul_matches_triple_loop),
    (
        "multihead attention",
        multihead_attention_matches_direct_formula,
    ),
];
