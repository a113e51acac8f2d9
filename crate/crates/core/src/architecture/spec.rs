use serde::{Deserialize, Serialize};

use crate::tensor::{Result, TensorError};

/// How a volume is turned into a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Shared 2D network over every axial, coronal and sagittal slice.
    Slice2p5d,
    /// Every k×k convolution inflated to k×k×k.
    Conv3d,
    /// Every convolution replaced by an ACS convolution.
    Acs,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BackboneSpec {
    /// One stride-2 3×3 conv + batchnorm + ReLU stage per width. An empty
    /// list leaves only global average pooling.
    TinyCnn { widths: Vec<usize> },
    /// ResNet-18 topology with stage widths 64/128/256/512.
    Resnet18Shape,
}

/// Merges `[b, n_slices, f]` slice features into `[b, f]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    AttentionPool,
    Average,
    Max,
    Lstm,
    Transformer,
}

impl Reduction {
    pub const ALL: [Reduction; 5] = [
        Reduction::AttentionPool,
        Reduction::Average,
        Reduction::Max,
        Reduction::Lstm,
        Reduction::Transformer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Reduction::AttentionPool => "attention_pool",
            Reduction::Average => "average",
            Reduction::Max => "max",
            Reduction::Lstm => "lstm",
            Reduction::Transformer => "transformer",
        }
    }
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Slice2p5d => "slice2p5d",
            Variant::Conv3d => "conv3d",
            Variant::Acs => "acs",
        }
    }
}

pub const RESNET18_WIDTHS: [usize; 4] = [64, 128, 256, 512];
pub const TINY_CNN_WIDTHS: [usize; 3] = [8, 16, 32];
pub const DEFAULT_HEADS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub variant: Variant,
    pub backbone: BackboneSpec,
    /// Ignored by the volumetric variants.
    pub reduction: Reduction,
    pub n_heads: usize,
    pub n_classes: usize,
    pub in_channels: usize,
    pub feature_dim: usize,
}

impl ModelSpec {
    /// Desk-scale model: tiny_cnn 8/16/32, single-channel input, two classes.
    pub fn tiny(variant: Variant, reduction: Reduction) -> Self {
        Self::with_widths(variant, reduction, TINY_CNN_WIDTHS.to_vec())
    }

    pub fn with_widths(variant: Variant, reduction: Reduction, widths: Vec<usize>) -> Self {
        let in_channels = 1;
        let feature_dim = widths.last().copied().unwrap_or(in_channels);
        Self {
            variant,
            backbone: BackboneSpec::TinyCnn { widths },
            reduction,
            n_heads: DEFAULT_HEADS,
            n_classes: 2,
            in_channels,
            feature_dim,
        }
    }

    /// Output width of the backbone before any reduction.
    pub fn backbone_dim(&self) -> usize {
        match &self.backbone {
            BackboneSpec::TinyCnn { widths } => widths.last().copied().unwrap_or(self.in_channels),
            BackboneSpec::Resnet18Shape => RESNET18_WIDTHS[3],
        }
    }

    fn uses_heads(&self) -> bool {
        self.variant == Variant::Slice2p5d
            && matches!(
                self.reduction,
                Reduction::AttentionPool | Reduction::Transformer
            )
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| {
            Err(TensorError::Invalid {
                op: "model_spec",
                msg,
            })
        };
        if self.n_classes < 2 {
            return fail(format!(
                "n_classes must be at least 2, got {}",
                self.n_classes
            ));
        }
        if self.in_channels == 0 {
            return fail("in_channels must be positive".into());
        }
        if let BackboneSpec::TinyCnn { widths } = &self.backbone {
            if widths.contains(&0) {
                return fail(format!("tiny_cnn widths must be positive, got {widths:?}"));
            }
        }
        if self.feature_dim != self.backbone_dim() {
            return fail(format!(
                "feature_dim {} does not match backbone output width {}",
                self.feature_dim,
                self.backbone_dim()
            ));
        }
        if self.uses_heads()
            && (self.n_heads == 0 || !self.feature_dim.is_multiple_of(self.n_heads))
        {
            return fail(format!(
                "n_heads {} must divide feature_dim {}",
                self.n_heads, self.feature_dim
            ));
        }
        Ok(())
    }
}

/// ResNet-18-shaped spec for a variant: single-channel input, two classes,
/// feature_dim 512 and, for the slice variant, 8-head attention pooling.
pub fn resnet18_shape_builder(variant: Variant) -> ModelSpec {
    ModelSpec {
        variant,
        backbone: BackboneSpec::Resnet18Shape,
        reduction: Reduction::AttentionPool,
        n_heads: DEFAULT_HEADS,
        n_classes: 2,
        in_channels: 1,
        feature_dim: RESNET18_WIDTHS[3],
    }
}
