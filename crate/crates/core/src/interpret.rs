//! Slice-attention extraction and export, HiResCam attributions for the
//! volumetric baselines, and attention localization scores.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::architecture::{AttentionMap, Axis, Model, Reduction, Variant};
use crate::autograd::{Tape, Var};
use crate::data::{SignalSlice, Volume};
use crate::layers::Mode;
use crate::tensor::{Element, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error("unsupported model: {0}")]
    Unsupported(String),
    #[error("unknown layer {name:?}; available: {available:?}")]
    UnknownLayer {
        name: String,
        available: Vec<String>,
    },
    #[error("target class {class} outside [0, {n_classes})")]
    TargetClass { class: usize, n_classes: usize },
    #[error("signal slice set is empty")]
    EmptySignal,
    #[error("top-k of {k} is invalid for {n_slices} slices")]
    InvalidK { k: usize, n_slices: usize },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

type Result<T, E = InterpretError> = std::result::Result<T, E>;

/// `[1, c, d, h, w]` input for one volume.
pub fn volume_batch<T: Element>(v: &Volume) -> Tensor<T> {
    let mut shape = vec![1];
    shape.extend_from_slice(v.data.shape());
    Tensor::new(
        shape,
        v.data.data().iter().map(|&x| T::of(x as f64)).collect(),
    )
    .expect("volume shape")
}

fn require_attention<T: Element>(model: &Model<T>) -> Result<()> {
    let spec = model.spec();
    if spec.variant != Variant::Slice2p5d || spec.reduction != Reduction::AttentionPool {
        return Err(InterpretError::Unsupported(format!(
            "attention maps need the slice2p5d variant with attention_pool reduction, got {} with {}",
            spec.variant.name(),
            spec.reduction.name()
        )));
    }
    Ok(())
}

/// Eval-mode attention map of one volume on a value-only tape.
pub fn extract_attention<T: Element>(model: &Model<T>, volume: &Volume) -> Result<AttentionMap> {
    extract_attention_on(model, volume, &Tape::no_grad())
}

/// As [`extract_attention`], recording on the given tape.
pub fn extract_attention_on<T: Element>(
    model: &Model<T>,
    volume: &Volume,
    tape: &Tape<T>,
) -> Result<AttentionMap> {
    require_attention(model)?;
    let x = tape.constant(volume_batch(volume));
    let out = model.forward(tape, x, Mode::Eval)?;
    let maps = out.attention_maps().expect("attention head yields weights");
    Ok(maps.into_iter().next().expect("batch of one"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionVolume {
    /// `[d', h', w']` at the chosen layer's resolution.
    pub values: Tensor<f64>,
    /// Nearest-neighbour copy at the input's `[d, h, w]`.
    pub upsampled: Tensor<f64>,
    pub layer: String,
    pub target_class: usize,
}

/// `Σ_channels A ⊙ ∂score/∂A` for `activation: [1, c, d, h, w]`, whose
/// gradient `grad` has the same shape. No gradient averaging.
pub fn hirescam_map(
    activation: &Tensor<f64>,
    grad: &Tensor<f64>,
    clamp: bool,
) -> Result<Tensor<f64>> {
    let s = activation.shape();
    if s.len() != 5 || s[0] != 1 || grad.shape() != s {
        return Err(TensorError::ShapeMismatch {
            op: "hirescam",
            lhs: s.to_vec(),
            rhs: grad.shape().to_vec(),
        }
        .into());
    }
    let (c, p) = (s[1], s[2] * s[3] * s[4]);
    let (a, g) = (activation.data(), grad.data());
    let mut out = vec![0.0; p];
    for ch in 0..c {
        for (i, o) in out.iter_mut().enumerate() {
            *o += a[ch * p + i] * g[ch * p + i];
        }
    }
    if clamp {
        out.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    Ok(Tensor::new(s[2..].to_vec(), out)?)
}

/// Nearest-neighbour resize of `[d', h', w']` to `target`.
pub fn upsample_nearest(values: &Tensor<f64>, target: [usize; 3]) -> Tensor<f64> {
    let s = values.shape();
    let src = |i: usize, axis: usize| i * s[axis] / target[axis];
    Tensor::from_fn(&target, |flat| {
        let (z, y, x) = (
            flat / (target[1] * target[2]),
            (flat / target[2]) % target[1],
            flat % target[2],
        );
        values.data()[(src(z, 0) * s[1] + src(y, 1)) * s[2] + src(x, 2)]
    })
}

/// HiResCam at a named backbone layer of a conv3d or acs model; the default
/// layer is the last one. Computed in f64 on a private tape.
pub fn hirescam<T: Element>(
    model: &Model<T>,
    volume: &Volume,
    target_class: usize,
    layer: Option<&str>,
    clamp: bool,
) -> Result<AttributionVolume> {
    let spec = model.spec();
    if spec.variant == Variant::Slice2p5d {
        return Err(InterpretError::Unsupported(
            "hirescam needs a volumetric (conv3d or acs) model".into(),
        ));
    }
    if target_class >= spec.n_classes {
        return Err(InterpretError::TargetClass {
            class: target_class,
            n_classes: spec.n_classes,
        });
    }
    let available = model.backbone().layer_names();
    let name = match layer {
        Some(n) => n.to_string(),
        None => available.last().cloned().ok_or_else(|| {
            InterpretError::Unsupported("backbone has no convolutional layer".into())
        })?,
    };
    if !available.contains(&name) {
        return Err(InterpretError::UnknownLayer { name, available });
    }
    let model = model.cast::<f64>();
    let tape = Tape::<f64>::new();
    let (out, acts) =
        model.forward_with_activations(&tape, tape.leaf(volume_batch(volume)), Mode::Eval)?;
    let act: Var<'_, f64> = acts
        .into_iter()
        .find(|a| a.name == name)
        .expect("named layer is recorded")
        .value;
    let score = out.logits.narrow(1, target_class, 1)?.sum_all();
    let grads = tape.backward(score)?;
    let a = act.value();
    let g = grads
        .of(act)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(a.shape()));
    let values = hirescam_map(&a, &g, clamp)?;
    let upsampled = upsample_nearest(&values, volume.spatial_shape());
    Ok(AttributionVolume {
        values,
        upsampled,
        layer: name,
        target_class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizationScore {
    pub top_k: usize,
    /// Fraction of the `top_k` highest-weight slices inside the signal set.
    pub hit_rate: f64,
    /// Total head-averaged weight on signal slices.
    pub attention_mass_on_signal: f64,
}

/// Slice indices by descending weight; ties keep the lower index first.
pub fn ranked_slices(weights: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    order
}

pub fn localization_score(
    map: &AttentionMap,
    signal: &[SignalSlice],
    k: usize,
) -> Result<LocalizationScore> {
    if signal.is_empty() {
        return Err(InterpretError::EmptySignal);
    }
    let n = map.n_slices();
    if k == 0 || k > n {
        return Err(InterpretError::InvalidK { k, n_slices: n });
    }
    let is_signal: Vec<bool> = (0..n)
        .map(|i| {
            signal.iter().any(|s| {
                s.axis == map.layout.axis_index[i] && s.position == map.layout.slice_position[i]
            })
        })
        .collect();
    let hits = ranked_slices(&map.per_slice_weight)[..k]
        .iter()
        .filter(|&&i| is_signal[i])
        .count();
    let mass = (0..n)
        .filter(|&i| is_signal[i])
        .map(|i| map.per_slice_weight[i])
        .sum::<f64>();
    Ok(LocalizationScore {
        top_k: k,
        hit_rate: hits as f64 / k as f64,
        attention_mass_on_signal: mass.min(1.0),
    })
}

#[derive(Debug, Clone)]
pub struct ExportedFiles {
    pub csv: PathBuf,
    /// One heatmap per axis, axial first.
    pub pgm: Vec<PathBuf>,
    pub json: PathBuf,
}

pub const TOP_PER_AXIS: usize = 5;

/// Writes `{prefix}.csv`, `{prefix}_{axis}.pgm` and `{prefix}.json`.
///
/// Each PGM has one row per head plus a final head-average row; every row is
/// scaled so its maximum maps to 255.
pub fn export_attention(map: &AttentionMap, prefix: impl AsRef<Path>) -> Result<ExportedFiles> {
    let prefix = prefix.as_ref();
    let with_suffix = |suffix: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    };
    let write = |path: &PathBuf, bytes: &[u8]| {
        fs::write(path, bytes).map_err(|source| InterpretError::Io {
            path: path.clone(),
            source,
        })
    };
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| InterpretError::Io {
            path: dir.into(),
            source,
        })?;
    }

    let mut csv = String::from("axis,position,weight");
    for h in 0..map.n_heads() {
        write!(csv, ",head_{h}").unwrap();
    }
    csv.push('\n');
    for i in 0..map.n_slices() {
        write!(
            csv,
            "{},{},{}",
            map.layout.axis_index[i].name(),
            map.layout.slice_position[i],
            map.per_slice_weight[i]
        )
        .unwrap();
        for row in &map.per_head_weight {
            write!(csv, ",{}", row[i]).unwrap();
        }
        csv.push('\n');
    }
    let csv_path = with_suffix(".csv");
    write(&csv_path, csv.as_bytes())?;

    let mut pgm = Vec::new();
    let mut per_axis = serde_json::Map::new();
    for axis in Axis::ALL {
        let idx: Vec<usize> = (0..map.n_slices())
            .filter(|&i| map.layout.axis_index[i] == axis)
            .collect();
        let rows: Vec<Vec<f64>> = map
            .per_head_weight
            .iter()
            .chain(std::iter::once(&map.per_slice_weight))
            .map(|r| idx.iter().map(|&i| r[i]).collect())
            .collect();
        let mut bytes = format!("P5\n{} {}\n255\n", idx.len(), rows.len()).into_bytes();
        for r in &rows {
            bytes.extend(normalize(r).iter().map(|v| (v * 255.0).round() as u8));
        }
        let path = with_suffix(&format!("_{}.pgm", axis.name()));
        write(&path, &bytes)?;
        pgm.push(path);

        let weights: Vec<f64> = idx.iter().map(|&i| map.per_slice_weight[i]).collect();
        let top: Vec<serde_json::Value> = ranked_slices(&weights)
            .into_iter()
            .take(TOP_PER_AXIS)
            .map(|j| serde_json::json!({ "position": map.layout.slice_position[idx[j]], "weight": weights[j] }))
            .collect();
        per_axis.insert(
            axis.name().into(),
            serde_json::json!({
                "top": top,
                "weights": weights,
                "normalized": normalize(&weights),
            }),
        );
    }
    let json = serde_json::json!({
        "n_slices": map.n_slices(),
        "n_heads": map.n_heads(),
        "axes": per_axis,
    });
    let json_path = with_suffix(".json");
    write(
        &json_path,
        (serde_json::to_string_pretty(&json).expect("json") + "\n").as_bytes(),
    )?;
    Ok(ExportedFiles {
        csv: csv_path,
        pgm,
        json: json_path,
    })
}

/// Scales so the maximum becomes 1; an all-zero row stays zero.
fn normalize(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        row.iter().map(|v| v / max).collect()
    } else {
        vec![0.0; row.len()]
    }
}
