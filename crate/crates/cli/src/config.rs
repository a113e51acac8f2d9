//! Run configuration: built-in defaults < JSON config file < flags.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;
use slicepool::architecture::{
    resnet18_shape_builder, BackboneSpec, ModelSpec, Reduction, Variant, DEFAULT_HEADS,
    TINY_CNN_WIDTHS,
};
use slicepool::training::TrainConfig;

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneName {
    TinyCnn,
    Resnet18Shape,
}

/// Parses a snake_case enum value the same way the config file does.
pub fn parse_name<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

/// Every field optional; absent fields fall through to defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub variant: Option<Variant>,
    pub backbone: Option<BackboneName>,
    pub widths: Option<Vec<usize>>,
    pub reduction: Option<Reduction>,
    pub n_heads: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub freeze_epochs: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("config {}: {e}", path.display())))
    }

    /// Fields of `other` that are set win.
    pub fn overlay(self, other: FileConfig) -> FileConfig {
        FileConfig {
            manifest: other.manifest.or(self.manifest),
            out: other.out.or(self.out),
            variant: other.variant.or(self.variant),
            backbone: other.backbone.or(self.backbone),
            widths: other.widths.or(self.widths),
            reduction: other.reduction.or(self.reduction),
            n_heads: other.n_heads.or(self.n_heads),
            epochs: other.epochs.or(self.epochs),
            learning_rate: other.learning_rate.or(self.learning_rate),
            batch_size: other.batch_size.or(self.batch_size),
            freeze_epochs: other.freeze_epochs.or(self.freeze_epochs),
            seeds: other.seeds.or(self.seeds),
            beta1: other.beta1.or(self.beta1),
            beta2: other.beta2.or(self.beta2),
            eps: other.eps.or(self.eps),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            freeze_epochs: self.freeze_epochs.unwrap_or(d.freeze_epochs),
            seeds: self.seeds.clone().unwrap_or(d.seeds),
            beta1: self.beta1.unwrap_or(d.beta1),
            beta2: self.beta2.unwrap_or(d.beta2),
            eps: self.eps.unwrap_or(d.eps),
        }
    }

    /// Model spec for the given data shape; validated.
    pub fn model_spec(
        &self,
        in_channels: usize,
        n_classes: usize,
    ) -> Result<ModelSpec, UsageError> {
        let variant = self.variant.unwrap_or(Variant::Slice2p5d);
        let mut spec = match self.backbone.unwrap_or(BackboneName::TinyCnn) {
            BackboneName::TinyCnn => {
                let widths = self
                    .widths
                    .clone()
                    .unwrap_or_else(|| TINY_CNN_WIDTHS.to_vec());
                ModelSpec::with_widths(variant, Reduction::AttentionPool, widths)
            }
            BackboneName::Resnet18Shape => {
                if self.widths.is_some() {
                    return Err(UsageError(
                        "--widths only applies to the tiny_cnn backbone".into(),
                    ));
                }
                resnet18_shape_builder(variant)
            }
        };
        spec.reduction = self.reduction.unwrap_or(Reduction::AttentionPool);
        spec.n_heads = self.n_heads.unwrap_or(DEFAULT_HEADS);
        spec.n_classes = n_classes;
        spec.in_channels = in_channels;
        spec.feature_dim = match &spec.backbone {
            BackboneSpec::TinyCnn { widths } => widths.last().copied().unwrap_or(in_channels),
            BackboneSpec::Resnet18Shape => spec.feature_dim,
        };
        spec.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let file: FileConfig = serde_json::from_str(r#"{"epochs": 7, "batch_size": 16}"#).unwrap();
        let flags = FileConfig {
            epochs: Some(3),
            ..FileConfig::default()
        };
        let merged = file.overlay(flags).train_config();
        assert_eq!(
            (merged.epochs, merged.batch_size, merged.freeze_epochs),
            (3, 16, 2)
        );
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<FileConfig>(r#"{"epoch": 7}"#).is_err());
    }

    #[test]
    fn enum_names_parse() {
        assert_eq!(parse_name::<Reduction>("lstm"), Ok(Reduction::Lstm));
        assert_eq!(
            parse_name::<BackboneName>("resnet18_shape"),
            Ok(BackboneName::Resnet18Shape)
        );
        assert!(parse_name::<Variant>("2d").is_err());
    }
}
