//! Finite-difference gradient cases in f64 for ops, layers and models.
//! Each case reports its maximum relative error.

use super::*;
use slicepool::architecture::{Head, Model, ModelSpec, Reduction, TransformerBlock, Variant};
use slicepool::autograd::{
    batch_norm, concat, conv3d, cross_entropy, grad_check, layer_norm, max_pool3d, ConvGeometry,
    NormStats, Tape, Var, DEFAULT_STEP,
};
use slicepool::layers::{
    AcsConv3d, BatchNorm, Conv2d, Conv3d, ConvSpec, LayerNorm, Linear, LstmCell, Mode,
    MultiheadAttention,
};
use slicepool::params::ParamStore;
use slicepool::tensor::Result;
use slicepool::Tensor;

pub type Case = (String, f64);
pub type CaseGroup = (&'static str, fn(&mut Vec<Case>));

fn check_op<F>(out: &mut Vec<Case>, name: &str, params: &[Tensor<f64>], f: F)
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let report = grad_check(f, params, DEFAULT_STEP).unwrap();
    out.push((name.to_string(), report.max_relative_error));
}

fn positive(shape: &[usize], seed: u64) -> Tensor<f64> {
    rand_tensor(shape, seed).map(|x| x.abs() + 0.5)
}

pub fn elementwise_and_broadcast_ops(out: &mut Vec<Case>) {
    let a = rand_tensor(&[3, 4], 1);
    let b = rand_tensor(&[4], 2);
    let c = positive(&[3, 4], 3);
    check_op(out, "add", &[a.clone(), b.clone()], |_, v| {
        project(v[0].add(v[1])?, 10)
    });
    check_op(out, "sub", &[a.clone(), b.clone()], |_, v| {
        project(v[0].sub(v[1])?, 11)
    });
    check_op(out, "mul", &[a.clone(), b.clone()], |_, v| {
        project(v[0].mul(v[1])?, 12)
    });
    check_op(out, "div", &[a.clone(), c.clone()], |_, v| {
        project(v[0].div(v[1])?, 13)
    });
    check_op(out, "div_broadcast", &[b.clone(), c.clone()], |_, v| {
        project(v[0].div(v[1])?, 13)
    });
    check_op(out, "relu", std::slice::from_ref(&a), |_, v| {
        project(v[0].relu(), 14)
    });
    check_op(out, "exp", std::slice::from_ref(&a), |_, v| {
        project(v[0].exp(), 15)
    });
    check_op(out, "log", std::slice::from_ref(&c), |_, v| {
        project(v[0].log(), 16)
    });
    check_op(out, "neg", std::slice::from_ref(&a), |_, v| {
        project(v[0].neg(), 17)
    });
    check_op(out, "sigmoid", std::slice::from_ref(&a), |_, v| {
        project(v[0].sigmoid(), 18)
    });
    check_op(out, "tanh", std::slice::from_ref(&a), |_, v| {
        project(v[0].tanh(), 19)
    });
    check_op(out, "scale", std::slice::from_ref(&a), |_, v| {
        project(v[0].scale(-2.5), 20)
    });
    check_op(out, "add_scalar", std::slice::from_ref(&a), |_, v| {
        project(v[0].add_scalar(0.7), 21)
    });
    check_op(out, "reused_operand", &[a], |_, v| {
        project(v[0].mul(v[0])?.add(v[0])?, 22)
    });
}

pub fn matrix_and_shape_ops(out: &mut Vec<Case>) {
    let a = rand_tensor(&[3, 5], 1);
    let b = rand_tensor(&[5, 2], 2);
    let batched = rand_tensor(&[2, 3, 4, 5], 3);
    let rhs = rand_tensor(&[2, 3, 5, 2], 4);
    check_op(out, "matmul", &[a.clone(), b], |_, v| {
        project(v[0].matmul(v[1])?, 10)
    });
    check_op(out, "batched_matmul", &[batched.clone(), rhs], |_, v| {
        project(v[0].matmul(v[1])?, 11)
    });
    check_op(out, "reshape", std::slice::from_ref(&batched), |_, v| {
        project(v[0].reshape(&[6, 20])?, 12)
    });
    check_op(out, "permute", std::slice::from_ref(&batched), |_, v| {
        project(v[0].permute(&[2, 0, 3, 1])?, 13)
    });
    check_op(out, "transpose", std::slice::from_ref(&batched), |_, v| {
        project(v[0].transpose()?, 14)
    });
    check_op(out, "narrow", std::slice::from_ref(&batched), |_, v| {
        project(v[0].narrow(2, 1, 2)?, 15)
    });
    check_op(
        out,
        "concat",
        &[a.clone(), rand_tensor(&[2, 5], 5)],
        |_, v| project(concat(&[v[0], v[1], v[0]], 0)?, 16),
    );
    for axis in 0..4 {
        check_op(out, "sum", std::slice::from_ref(&batched), |_, v| {
            project(v[0].sum(axis)?, 17)
        });
        check_op(out, "mean", std::slice::from_ref(&batched), |_, v| {
            project(v[0].mean(axis)?, 18)
        });
        check_op(out, "max", std::slice::from_ref(&batched), |_, v| {
            project(v[0].max(axis)?, 19)
        });
        check_op(out, "softmax", std::slice::from_ref(&batched), |_, v| {
            project(v[0].softmax(axis)?, 20)
        });
    }
    check_op(out, "sum_all", std::slice::from_ref(&a), |_, v| {
        Ok(v[0].mul(v[0])?.sum_all())
    });
    check_op(out, "mean_all", &[a], |_, v| Ok(v[0].exp().mean_all()));
}

pub fn convolution_and_pooling_ops(out: &mut Vec<Case>) {
    let x = rand_tensor(&[2, 2, 5, 4, 6], 1);
    let w = rand_tensor(&[3, 2, 3, 2, 3], 2);
    let b = rand_tensor(&[3], 3);
    for (stride, padding) in [
        ([1, 1, 1], [1, 1, 1]),
        ([2, 1, 2], [0, 1, 1]),
        ([1, 2, 3], [1, 0, 1]),
    ] {
        let geom = ConvGeometry { stride, padding };
        check_op(
            out,
            "conv3d",
            &[x.clone(), w.clone(), b.clone()],
            move |_, v| project(conv3d(v[0], v[1], Some(v[2]), geom)?, 10),
        );
        check_op(out, "max_pool3d", std::slice::from_ref(&x), move |_, v| {
            project(max_pool3d(v[0], [2, 3, 2], geom)?, 11)
        });
    }
    check_op(out, "conv3d_no_bias", &[x, w], |_, v| {
        project(conv3d(v[0], v[1], None, ConvGeometry::uniform(1, 0))?, 12)
    });
}

pub fn normalization_and_loss_ops(out: &mut Vec<Case>) {
    let x = rand_tensor(&[4, 3, 2, 3], 1);
    let gamma = positive(&[3], 2);
    let beta = rand_tensor(&[3], 3);
    check_op(
        out,
        "batch_norm_batch",
        &[x.clone(), gamma.clone(), beta.clone()],
        |_, v| project(batch_norm(v[0], v[1], v[2], NormStats::Batch, 1e-5)?.0, 10),
    );
    let running = NormStats::Running {
        mean: rand_tensor(&[3], 4),
        var: positive(&[3], 5),
    };
    check_op(
        out,
        "batch_norm_running",
        &[x.clone(), gamma.clone(), beta.clone()],
        move |_, v| project(batch_norm(v[0], v[1], v[2], running.clone(), 1e-5)?.0, 11),
    );
    let y = rand_tensor(&[2, 5, 6], 6);
    check_op(
        out,
        "layer_norm",
        &[y, positive(&[6], 7), rand_tensor(&[6], 8)],
        |_, v| project(layer_norm(v[0], v[1], v[2], 1e-5)?, 12),
    );
    let logits = rand_tensor(&[5, 3], 9).map(|z| 3.0 * z);
    check_op(out, "cross_entropy", &[logits], |_, v| {
        cross_entropy(v[0], &[0, 2, 1, 1, 0])
    });
}

const LAYER_PROBES: usize = 40;

/// A check that probed nothing reports an infinite error.
fn check_layer<F>(
    out: &mut Vec<Case>,
    name: &str,
    store: &mut ParamStore<f64>,
    inputs: &[Tensor<f64>],
    f: F,
) where
    F: for<'t> Fn(&'t Tape<f64>, &ParamStore<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let r = store_grad_check(store, inputs, LAYER_PROBES, f).unwrap();
    let e = if r.checked > 0 {
        r.max_relative_error
    } else {
        f64::INFINITY
    };
    out.push((name.to_string(), e));
}

pub fn linear_layer(out: &mut Vec<Case>) {
    let (mut store, mut r) = store_and_rng(1);
    let l = Linear::new(&mut builder(&mut store, &mut r), 5, 3);
    store.set(l.bias, rand_tensor(&[3], 9));
    check_layer(
        out,
        "linear",
        &mut store,
        &[rand_tensor(&[2, 4, 5], 2)],
        |t, s, v| project(l.forward(t, s, v[0])?, 3),
    );
}

pub fn convolution_layers(out: &mut Vec<Case>) {
    let x3 = rand_tensor(&[2, 2, 5, 6, 4], 1);
    let (mut store, mut r) = store_and_rng(1);
    let c2 = Conv2d::new(
        &mut builder(&mut store, &mut r),
        ConvSpec::new(2, 3, 3, 2, 1),
    )
    .unwrap();
    check_layer(
        out,
        "conv2d",
        &mut store,
        &[rand_tensor(&[2, 2, 7, 6], 2)],
        |t, s, v| project(c2.forward(t, s, v[0])?, 3),
    );
    let (mut store, mut r) = store_and_rng(2);
    let c3 = Conv3d::new(
        &mut builder(&mut store, &mut r),
        ConvSpec::new(2, 3, 3, 1, 1),
    )
    .unwrap();
    check_layer(
        out,
        "conv3d",
        &mut store,
        std::slice::from_ref(&x3),
        |t, s, v| project(c3.forward(t, s, v[0])?, 4),
    );
    for (o, stride) in [(5, 1), (4, 2), (2, 1)] {
        let (mut store, mut r) = store_and_rng(3);
        let acs = AcsConv3d::new(
            &mut builder(&mut store, &mut r),
            ConvSpec::new(2, o, 3, stride, 1),
        )
        .unwrap();
        check_layer(
            out,
            "acs_conv3d",
            &mut store,
            std::slice::from_ref(&x3),
            |t, s, v| project(acs.forward(t, s, v[0])?, 5),
        );
    }
}

pub fn normalization_layers(out: &mut Vec<Case>) {
    let (mut store, mut r) = store_and_rng(1);
    let bn = BatchNorm::new(&mut builder(&mut store, &mut r), 3);
    store.set(bn.gamma, positive(&[3], 7));
    store.set(bn.beta, rand_tensor(&[3], 8));
    let x = rand_tensor(&[3, 3, 2, 2, 2], 2);
    check_layer(
        out,
        "batchnorm_train",
        &mut store,
        std::slice::from_ref(&x),
        |t, s, v| project(bn.forward(t, s, v[0], Mode::Train)?, 3),
    );
    store.set(bn.running_mean, rand_tensor(&[3], 4));
    store.set(bn.running_var, positive(&[3], 5));
    check_layer(out, "batchnorm_eval", &mut store, &[x], |t, s, v| {
        project(bn.forward(t, s, v[0], Mode::Eval)?, 6)
    });
    let (mut store, mut r) = store_and_rng(2);
    let ln = LayerNorm::new(&mut builder(&mut store, &mut r), 6);
    store.set(ln.gamma, positive(&[6], 7));
    store.set(ln.beta, rand_tensor(&[6], 8));
    check_layer(
        out,
        "layernorm",
        &mut store,
        &[rand_tensor(&[2, 3, 6], 9)],
        |t, s, v| project(ln.forward(t, s, v[0])?, 10),
    );
}

pub fn recurrent_and_attention_layers(out: &mut Vec<Case>) {
    let (mut store, mut r) = store_and_rng(1);
    let cell = LstmCell::new(&mut builder(&mut store, &mut r), 4, 3);
    store.set(cell.bias, rand_tensor(&[12], 5));
    check_layer(
        out,
        "lstm_unrolled",
        &mut store,
        &[rand_tensor(&[2, 5, 4], 2)],
        |t, s, v| {
            let mut state = cell.zero_state(t, 2);
            for i in 0..5 {
                let xi = v[0].narrow(1, i, 1)?.reshape(&[2, 4])?;
                state = cell.step(t, s, xi, state)?;
            }
            project(state.0.add(state.1)?, 3)
        },
    );
    let (mut store, mut r) = store_and_rng(2);
    let mha = MultiheadAttention::new(&mut builder(&mut store, &mut r), 8, 2).unwrap();
    for l in [&mha.q, &mha.k, &mha.v, &mha.out] {
        store.set(l.bias, rand_tensor(&[8], 6));
    }
    check_layer(
        out,
        "multihead_attention",
        &mut store,
        &[rand_tensor(&[2, 3, 8], 3), rand_tensor(&[2, 5, 8], 4)],
        |t, s, v| {
            let out = mha.forward(t, s, v[0], v[1], v[1])?;
            project(out.output, 7)?.add(project(out.weights, 8)?)
        },
    );
    let (mut store, mut r) = store_and_rng(3);
    let block = TransformerBlock::new(&mut builder(&mut store, &mut r), 8, 4).unwrap();
    check_layer(
        out,
        "transformer_block",
        &mut store,
        &[rand_tensor(&[2, 4, 8], 5)],
        |t, s, v| project(block.forward(t, s, v[0])?, 9),
    );
}

pub fn reduction_heads(out: &mut Vec<Case>) {
    for reduction in Reduction::ALL {
        let spec = ModelSpec::with_widths(Variant::Slice2p5d, reduction, vec![8]);
        let (mut store, mut r) = store_and_rng(1);
        let head = Head::new(&mut builder(&mut store, &mut r), &spec).unwrap();
        check_layer(
            out,
            reduction.name(),
            &mut store,
            &[rand_tensor(&[2, 6, 8], 2)],
            |t, s, v| project(head.reduce(t, s, v[0])?.pooled, 3),
        );
    }
}

const MODEL_PROBES: usize = 12;

/// Cross-entropy of a tiny model on a random 8³ batch, in training mode
/// so batchnorm differentiates through its batch statistics.
fn check_model(out: &mut Vec<Case>, variant: Variant, reduction: Reduction) {
    let mut model = Model::<f64>::new(ModelSpec::tiny(variant, reduction), 3).unwrap();
    let x = rand_tensor(&[2, 1, 8, 8, 8], 4);
    let r = grad_check_with(
        &mut model,
        |m| m.store_mut(),
        &[x],
        MODEL_PROBES,
        |t, m, v| cross_entropy(m.forward(t, v[0], Mode::Train)?.logits, &[0, 1]),
    )
    .unwrap();
    let e = if r.params_checked > 0 {
        r.max_relative_error
    } else {
        f64::INFINITY
    };
    out.push((format!("model {} {}", variant.name(), reduction.name()), e));
}

pub fn tiny_slice_models(out: &mut Vec<Case>) {
    for reduction in Reduction::ALL {
        check_model(out, Variant::Slice2p5d, reduction);
    }
}

pub fn tiny_volumetric_models(out: &mut Vec<Case>) {
    check_model(out, Variant::Conv3d, Reduction::AttentionPool);
    check_model(out, Variant::Acs, Reduction::AttentionPool);
}

pub const GROUPS: [CaseGroup; 11] = [
    ("elementwise", elementwise_and_broadcast_ops),
    ("matrix", matrix_and_shape_ops),
    ("convolution ops", convolution_and_pooling_ops),
    ("normalization ops", normalization_and_loss_ops),
    ("linear", linear_layer),
    ("convolution layers", convolution_layers),
    ("normalization layers", normalization_layers),
    ("recurrent and attention", recurrent_and_attention_layers),
    ("reduction heads", reduction_heads),
    ("slice models", tiny_slice_models),
    ("volumetric models", tiny_volumetric_models),
];
