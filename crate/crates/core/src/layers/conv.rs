use crate::autograd::{concat, conv3d, ConvGeometry, Tape, Var};
use crate::layers::Builder;
use crate::params::{init, ParamId, ParamStore};
use crate::tensor::{Element, Result, Tensor, TensorError};

/// Shape hyperparameters shared by the three convolution flavours.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            bias: true,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    fn bias_count(&self) -> usize {
        if self.bias {
            self.out_channels
        } else {
            0
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(TensorError::Invalid {
                op: "conv",
                msg: format!("degenerate conv spec {self:?}"),
            });
        }
        Ok(())
    }
}

fn check_channels(op: &'static str, x: &[usize], expected: usize) -> Result<()> {
    if x.len() != 5 || x[1] != expected {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: x.to_vec(),
            rhs: vec![expected],
        });
    }
    Ok(())
}

/// 2D convolution, `weight: [c_out, c_in, k, k]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv2d {
    pub fn new<T: Element>(b: &mut Builder<'_, T>, spec: ConvSpec) -> Result<Self> {
        spec.validate()?;
        let ConvSpec {
            in_channels: c,
            out_channels: o,
            kernel: k,
            ..
        } = spec;
        let w = init::kaiming_uniform(b.rng, &[o, c, k, k], c * k * k);
        let weight = b.param("weight", w);
        let bias = spec.bias.then(|| b.param("bias", Tensor::zeros(&[o])));
        Ok(Self { spec, weight, bias })
    }

    pub fn parameter_count(&self) -> usize {
        let s = &self.spec;
        s.out_channels * s.in_channels * s.kernel * s.kernel + s.bias_count()
    }

    /// `x: [b, c_in, h, w] → [b, c_out, h', w']`.
    pub fn forward<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let s = x.shape();
        if s.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: s,
                rhs: vec![self.spec.in_channels],
            });
        }
        let y = self.forward_planar(tape, store, x.reshape(&[s[0], s[1], 1, s[2], s[3]])?)?;
        let ys = y.shape();
        y.reshape(&[ys[0], ys[1], ys[3], ys[4]])
    }

    /// Same map on a planar tensor carried as `[b, c, 1, h, w]`.
    pub fn forward_planar<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let s = &self.spec;
        check_channels("conv2d", &x.shape(), s.in_channels)?;
        let w = tape.param(store, self.weight).reshape(&[
            s.out_channels,
            s.in_channels,
            1,
            s.kernel,
            s.kernel,
        ])?;
        let bias = self.bias.map(|id| tape.param(store, id));
        conv3d(
            x,
            w,
            bias,
            ConvGeometry {
                stride: [1, s.stride, s.stride],
                padding: [0, s.padding, s.padding],
            },
        )
    }
}

/// Full 3D convolution, `weight: [c_out, c_in, k, k, k]`.
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv3d {
    pub fn new<T: Element>(b: &mut Builder<'_, T>, spec: ConvSpec) -> Result<Self> {
        spec.validate()?;
        let ConvSpec {
            in_channels: c,
            out_channels: o,
            kernel: k,
            ..
        } = spec;
        let w = init::kaiming_uniform(b.rng, &[o, c, k, k, k], c * k * k * k);
        let weight = b.param("weight", w);
        let bias = spec.bias.then(|| b.param("bias", Tensor::zeros(&[o])));
        Ok(Self { spec, weight, bias })
    }

    pub fn parameter_count(&self) -> usize {
        let s = &self.spec;
        s.out_channels * s.in_channels * s.kernel.pow(3) + s.bias_count()
    }

    pub fn forward<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        check_channels("conv3d", &x.shape(), self.spec.in_channels)?;
        let w = tape.param(store, self.weight);
        let bias = self.bias.map(|id| tape.param(store, id));
        conv3d(
            x,
            w,
            bias,
            ConvGeometry::uniform(self.spec.stride, self.spec.padding),
        )
    }
}

/// Partition of `c_out` into (axial, coronal, sagittal) groups: as even as
/// possible, remainders going to the earlier axes.
pub fn acs_split(out_channels: usize) -> (usize, usize, usize) {
    let axial = out_channels.div_ceil(3);
    let coronal = (out_channels - axial).div_ceil(2);
    (axial, coronal, out_channels - axial - coronal)
}

/// ACS convolution: one bank of 2D kernels whose output channels are split
/// among the three anatomical planes. Each group convolves the volume with
/// its kernels laid in that plane, so the parameter count equals the 2D one.
#[derive(Debug, Clone)]
pub struct AcsConv3d {
    pub spec: ConvSpec,
    pub split: (usize, usize, usize),
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl AcsConv3d {
    pub fn new<T: Element>(b: &mut Builder<'_, T>, spec: ConvSpec) -> Result<Self> {
        Self::with_split(b, spec, acs_split(spec.out_channels))
    }

    pub fn with_split<T: Element>(
        b: &mut Builder<'_, T>,
        spec: ConvSpec,
        split: (usize, usize, usize),
    ) -> Result<Self> {
        spec.validate()?;
        if split.0 + split.1 + split.2 != spec.out_channels {
            return Err(TensorError::Invalid {
                op: "acs_conv3d",
                msg: format!("axis split {split:?} does not sum to {}", spec.out_channels),
            });
        }
        let ConvSpec {
            in_channels: c,
            out_channels: o,
            kernel: k,
            ..
        } = spec;
        let w = init::kaiming_uniform(b.rng, &[o, c, k, k], c * k * k);
        let weight = b.param("weight", w);
        let bias = spec.bias.then(|| b.param("bias", Tensor::zeros(&[o])));
        Ok(Self {
            spec,
            split,
            weight,
            bias,
        })
    }

    pub fn parameter_count(&self) -> usize {
        let s = &self.spec;
        s.out_channels * s.in_channels * s.kernel * s.kernel + s.bias_count()
    }

    pub fn forward<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let s = &self.spec;
        check_channels("acs_conv3d", &x.shape(), s.in_channels)?;
        let (k, p, st) = (s.kernel, s.padding, s.stride);
        let weight = tape.param(store, self.weight);
        let bias = self.bias.map(|id| tape.param(store, id));
        let groups = [
            (
                self.split.0,
                [s.out_channels, s.in_channels, 1, k, k],
                [0, p, p],
            ),
            (
                self.split.1,
                [s.out_channels, s.in_channels, k, 1, k],
                [p, 0, p],
            ),
            (
                self.split.2,
                [s.out_channels, s.in_channels, k, k, 1],
                [p, p, 0],
            ),
        ];
        let mut outputs = Vec::with_capacity(3);
        let mut start = 0;
        for (n, mut shape, padding) in groups {
            if n == 0 {
                continue;
            }
            shape[0] = n;
            let w = weight.narrow(0, start, n)?.reshape(&shape)?;
            let b = bias.map(|b| b.narrow(0, start, n)).transpose()?;
            outputs.push(conv3d(
                x,
                w,
                b,
                ConvGeometry {
                    stride: [st; 3],
                    padding,
                },
            )?);
            start += n;
        }
        let spatial: Vec<Vec<usize>> = outputs.iter().map(|o| o.shape()[2..].to_vec()).collect();
        if spatial.windows(2).any(|w| w[0] != w[1]) {
            return Err(TensorError::Invalid {
                op: "acs_conv3d",
                msg: format!("axis groups disagree on output extent {spatial:?}; padding must equal (kernel - 1) / 2"),
            });
        }
        concat(&outputs, 1)
    }
}
