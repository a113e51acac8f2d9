use crate::architecture::spec::{BackboneSpec, ModelSpec, Variant, RESNET18_WIDTHS};
use crate::autograd::{max_pool3d, ConvGeometry, Tape, Var};
use crate::layers::{AcsConv3d, BatchNorm, Builder, Conv2d, Conv3d, ConvSpec, Mode};
use crate::params::ParamStore;
use crate::tensor::{Element, Result};

/// A convolution in the form selected by the model variant. Every form acts
/// on `[b, c, d, h, w]`; the planar form expects `d == 1`.
#[derive(Debug, Clone)]
pub enum ConvLayer {
    Planar(Conv2d),
    Full(Conv3d),
    Acs(AcsConv3d),
}

impl ConvLayer {
    pub fn new<T: Element>(
        b: &mut Builder<'_, T>,
        variant: Variant,
        spec: ConvSpec,
    ) -> Result<Self> {
        Ok(match variant {
            Variant::Slice2p5d => ConvLayer::Planar(Conv2d::new(b, spec)?),
            Variant::Conv3d => ConvLayer::Full(Conv3d::new(b, spec)?),
            Variant::Acs => ConvLayer::Acs(AcsConv3d::new(b, spec)?),
        })
    }

    pub fn forward<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        match self {
            ConvLayer::Planar(c) => c.forward_planar(tape, store, x),
            ConvLayer::Full(c) => c.forward(tape, store, x),
            ConvLayer::Acs(c) => c.forward(tape, store, x),
        }
    }
}

/// Convolution followed by batchnorm.
#[derive(Debug, Clone)]
struct ConvBn {
    conv: ConvLayer,
    bn: BatchNorm,
}

impl ConvBn {
    fn new<T: Element>(
        b: &mut Builder<'_, T>,
        variant: Variant,
        spec: ConvSpec,
        bn_name: &str,
    ) -> Result<Self> {
        let conv = ConvLayer::new(&mut b.scope(&bn_name.replace("bn", "conv")), variant, spec)?;
        let bn = BatchNorm::new(&mut b.scope(bn_name), spec.out_channels);
        Ok(Self { conv, bn })
    }

    fn forward<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
        mode: Mode,
    ) -> Result<Var<'t, T>> {
        let y = self.conv.forward(tape, store, x)?;
        self.bn.forward(tape, store, y, mode)
    }
}

#[derive(Debug, Clone)]
struct BasicBlock {
    first: ConvBn,
    second: ConvBn,
    shortcut: Option<ConvBn>,
}

impl BasicBlock {
    fn new<T: Element>(
        b: &mut Builder<'_, T>,
        variant: Variant,
        c_in: usize,
        c_out: usize,
        stride: usize,
    ) -> Result<Self> {
        let first = ConvBn::new(
            b,
            variant,
            ConvSpec::new(c_in, c_out, 3, stride, 1).without_bias(),
            "bn1",
        )?;
        let second = ConvBn::new(
            b,
            variant,
            ConvSpec::new(c_out, c_out, 3, 1, 1).without_bias(),
            "bn2",
        )?;
        let shortcut = if stride != 1 || c_in != c_out {
            let mut ds = b.scope("downsample");
            Some(ConvBn::new(
                &mut ds,
                variant,
                ConvSpec::new(c_in, c_out, 1, stride, 0).without_bias(),
                "bn",
            )?)
        } else {
            None
        };
        Ok(Self {
            first,
            second,
            shortcut,
        })
    }

    fn forward<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
        mode: Mode,
    ) -> Result<Var<'t, T>> {
        let y = self.first.forward(tape, store, x, mode)?.relu();
        let y = self.second.forward(tape, store, y, mode)?;
        let skip = match &self.shortcut {
            Some(s) => s.forward(tape, store, x, mode)?,
            None => x,
        };
        Ok(y.add(skip)?.relu())
    }
}

#[derive(Debug, Clone)]
enum Body {
    Tiny(Vec<ConvBn>),
    Resnet {
        stem: ConvBn,
        blocks: Vec<(String, BasicBlock)>,
    },
}

/// Convolutional feature extractor ending in global average pooling.
#[derive(Debug, Clone)]
pub struct Backbone {
    variant: Variant,
    body: Body,
}

/// A named intermediate activation, `[b, c, d, h, w]`.
pub struct Activation<'t, T: Element> {
    pub name: String,
    pub value: Var<'t, T>,
}

impl Backbone {
    pub fn new<T: Element>(b: &mut Builder<'_, T>, spec: &ModelSpec) -> Result<Self> {
        let variant = spec.variant;
        let body = match &spec.backbone {
            BackboneSpec::TinyCnn { widths } => {
                let mut stages = Vec::with_capacity(widths.len());
                let mut c_in = spec.in_channels;
                for (i, &w) in widths.iter().enumerate() {
                    let mut s = b.scope(&format!("stage{i}"));
                    stages.push(ConvBn::new(
                        &mut s,
                        variant,
                        ConvSpec::new(c_in, w, 3, 2, 1),
                        "bn",
                    )?);
                    c_in = w;
                }
                Body::Tiny(stages)
            }
            BackboneSpec::Resnet18Shape => {
                let stem = ConvBn::new(
                    b,
                    variant,
                    ConvSpec::new(spec.in_channels, 64, 7, 2, 3).without_bias(),
                    "bn1",
                )?;
                let mut blocks = Vec::with_capacity(8);
                let mut c_in = 64;
                for (stage, &w) in RESNET18_WIDTHS.iter().enumerate() {
                    for block in 0..2 {
                        let name = format!("layer{}.{block}", stage + 1);
                        let stride = if stage > 0 && block == 0 { 2 } else { 1 };
                        blocks.push((
                            name.clone(),
                            BasicBlock::new(&mut b.scope(&name), variant, c_in, w, stride)?,
                        ));
                        c_in = w;
                    }
                }
                Body::Resnet { stem, blocks }
            }
        };
        Ok(Self { variant, body })
    }

    /// Names accepted by [`Backbone::forward`] activation capture, input
    /// side first.
    pub fn layer_names(&self) -> Vec<String> {
        match &self.body {
            Body::Tiny(stages) => (0..stages.len()).map(|i| format!("stage{i}")).collect(),
            Body::Resnet { blocks, .. } => std::iter::once("stem".to_string())
                .chain(blocks.iter().map(|(n, _)| n.clone()))
                .collect(),
        }
    }

    /// `x: [b, c, d, h, w] → [b, f]`. Activations after each named layer are
    /// appended to `taps` when given.
    pub fn forward<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
        mode: Mode,
        mut taps: Option<&mut Vec<Activation<'t, T>>>,
    ) -> Result<Var<'t, T>> {
        let mut tap = |name: String, value: Var<'t, T>| {
            if let Some(t) = taps.as_deref_mut() {
                t.push(Activation { name, value });
            }
        };
        let mut y = x;
        match &self.body {
            Body::Tiny(stages) => {
                for (i, stage) in stages.iter().enumerate() {
                    y = stage.forward(tape, store, y, mode)?.relu();
                    tap(format!("stage{i}"), y);
                }
            }
            Body::Resnet { stem, blocks } => {
                y = stem.forward(tape, store, y, mode)?.relu();
                let (kernel, geom) = match self.variant {
                    Variant::Slice2p5d => (
                        [1, 3, 3],
                        ConvGeometry {
                            stride: [1, 2, 2],
                            padding: [0, 1, 1],
                        },
                    ),
                    _ => ([3; 3], ConvGeometry::uniform(2, 1)),
                };
                y = max_pool3d(y, kernel, geom)?;
                tap("stem".into(), y);
                for (name, block) in blocks {
                    y = block.forward(tape, store, y, mode)?;
                    tap(name.clone(), y);
                }
            }
        }
        global_average_pool(y)
    }
}

/// `[b, c, d, h, w] → [b, c]`.
pub fn global_average_pool<'t, T: Element>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = x.shape();
    x.reshape(&[s[0], s[1], s[2..].iter().product()])?.mean(2)
}
