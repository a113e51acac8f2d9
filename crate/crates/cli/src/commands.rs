use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use slicepool::architecture::{load_checkpoint, save_checkpoint, Model, ModelSpec};
use slicepool::autograd::Tape;
use slicepool::data::{
    generate_synthetic, write_volume, DataError, Dataset, Split, SyntheticParams, Volume,
};
use slicepool::interpret::{
    export_attention, extract_attention, hirescam, localization_score, volume_batch,
};
use slicepool::layers::Mode;
use slicepool::training::{argmax, evaluate, report_csv, run_multiseed, TrainError};
use slicepool::Tensor;

use crate::config::FileConfig;
use crate::{EvalArgs, ExplainArgs, GenDataArgs, ModelArgs, ParamsArgs, TrainArgs, UsageError};

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let side = a.shape.unwrap_or(16);
    let mut p = SyntheticParams::new(a.per_class.unwrap_or(200), side, a.seed.unwrap_or(0));
    if let Some(k) = a.signal_kind {
        p.signal_kind = k;
    }
    if let Some(b) = a.blob_side {
        p.blob_side = b;
    }
    if let Some(x) = a.amplitude {
        p.blob_amplitude = x;
    }
    if let Some(s) = a.noise_sigma {
        p.noise_sigma = s;
    }
    let ds = generate_synthetic(&p).map_err(|e| usage(e.to_string()))?;
    let manifest = ds.write(&a.out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn model_flags(m: &ModelArgs) -> FileConfig {
    FileConfig {
        variant: m.variant,
        backbone: m.backbone,
        widths: m.widths.clone(),
        reduction: m.reduction,
        n_heads: m.heads,
        ..FileConfig::default()
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).map_err(|e| match e {
        DataError::Io { .. } | DataError::Manifest { .. } | DataError::Volume { .. } => {
            usage(e.to_string())
        }
        other => other.into(),
    })
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    load_checkpoint(path).map_err(|e| usage(format!("checkpoint {}: {e}", path.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn train(a: TrainArgs) -> Result<()> {
    let file = match &a.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let flags = FileConfig {
        manifest: a.manifest.clone(),
        out: a.out.clone(),
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        freeze_epochs: a.freeze_epochs,
        seeds: a.seeds.clone(),
        ..model_flags(&a.model)
    };
    let cfg = file.overlay(flags);
    let manifest = cfg
        .manifest
        .clone()
        .ok_or_else(|| usage("--manifest is required"))?;
    let out: PathBuf = cfg.out.clone().ok_or_else(|| usage("--out is required"))?;
    let train_cfg = cfg.train_config();
    train_cfg.validate().map_err(|e| usage(e.to_string()))?;

    let ds = load_dataset(&manifest)?;
    let in_channels = ds
        .volumes
        .first()
        .map(|v| v.data.shape()[0])
        .ok_or_else(|| usage("manifest lists no volumes"))?;
    let spec = cfg.model_spec(in_channels, ds.manifest.n_classes)?;
    let multi = run_multiseed::<f32>(&spec, &ds, &train_cfg, |seed, e| {
        eprintln!(
            "seed {seed} epoch {:>3}{} loss {:.4} acc {:.4} | val acc {:.4} auroc {} | {:.2}s",
            e.epoch,
            if e.backbone_frozen { " (frozen)" } else { "" },
            e.train.loss,
            e.train.acc,
            e.val.acc,
            fmt_opt(e.val.auroc),
            e.seconds
        );
    })
    .map_err(|e| match e {
        TrainError::Config(m) => usage(m),
        TrainError::Data(d) => usage(d.to_string()),
        other => other.into(),
    })?;

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    for run in &multi.runs {
        let dir = out.join(format!("seed_{}", run.report.seed));
        fs::create_dir_all(&dir)?;
        write(&dir.join("report.csv"), report_csv(&[&run.report], None))?;
        save_checkpoint(&run.model, dir.join("model.spm"))?;
        let secs = run.report.epoch_seconds();
        let mean = secs.iter().sum::<f64>() / secs.len() as f64;
        eprintln!(
            "seed {} test acc {:.4} auroc {} ({mean:.2}s/epoch)",
            run.report.seed,
            run.report.test.acc,
            fmt_opt(run.report.test.auroc)
        );
    }
    write(&out.join("report.csv"), multi.to_csv())?;
    let mut summary = multi.summary_json();
    summary["model"] = serde_json::to_value(&spec)?;
    summary["train"] = serde_json::to_value(&train_cfg)?;
    write(
        &out.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    println!(
        "test acc {:.4} ± {:.4}, auroc {} over {} seed(s); reports in {}",
        multi.mean.acc,
        multi.std.acc,
        fmt_opt(multi.mean.auroc),
        multi.runs.len(),
        out.display()
    );
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let ds = load_dataset(&a.manifest)?;
    let split = a.split.unwrap_or(Split::Test);
    let batch = a.batch_size.unwrap_or(64);
    if batch == 0 {
        return Err(usage("--batch-size must be positive"));
    }
    let m = evaluate(&model, &ds, split, batch).map_err(|e| match e {
        TrainError::Data(d) => usage(d.to_string()),
        other => other.into(),
    })?;
    println!(
        "split {split} n {} acc {:.4} auroc {} loss {:.6}",
        ds.split_indices(split).len(),
        m.acc,
        fmt_opt(m.auroc),
        m.loss
    );
    Ok(())
}

pub fn params(a: ParamsArgs) -> Result<()> {
    let spec: ModelSpec =
        model_flags(&a.model).model_spec(a.in_channels.unwrap_or(1), a.classes.unwrap_or(2))?;
    let model = Model::<f32>::new(spec.clone(), 0).map_err(|e| usage(e.to_string()))?;
    let n = model.count_parameters();
    println!(
        "{n} trainable parameters ({:.3} M) for {} {}",
        n as f64 / 1e6,
        spec.variant.name(),
        match spec.variant {
            slicepool::architecture::Variant::Slice2p5d => spec.reduction.name(),
            _ => "",
        }
    );
    Ok(())
}

fn pick_volume<'a>(ds: &'a Dataset, id: Option<&str>, split: Split) -> Result<&'a Volume> {
    match id {
        Some(id) => ds
            .volumes
            .iter()
            .find(|v| v.id == id)
            .ok_or_else(|| usage(format!("no volume with id {id:?}"))),
        None => ds
            .split_indices(split)
            .first()
            .map(|&i| &ds.volumes[i])
            .ok_or_else(|| usage(format!("split {split} is empty"))),
    }
}

pub fn explain(a: ExplainArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let ds = load_dataset(&a.manifest)?;
    let volume = pick_volume(&ds, a.id.as_deref(), a.split.unwrap_or(Split::Test))?;
    let volumetric = model.spec().variant != slicepool::architecture::Variant::Slice2p5d;
    if volumetric != a.hirescam {
        return Err(usage(if volumetric {
            "this model has no attention map; pass --hirescam for a HiResCam attribution"
        } else {
            "--hirescam applies to conv3d and acs models only"
        }));
    }
    if !volumetric {
        let map = extract_attention(&model, volume).map_err(|e| usage(e.to_string()))?;
        let files = export_attention(&map, &a.out)?;
        println!("{}", files.csv.display());
        for p in &files.pgm {
            println!("{}", p.display());
        }
        println!("{}", files.json.display());
        if let Some(sig) = volume.signal_slices.as_ref().filter(|s| !s.is_empty()) {
            let score = localization_score(&map, sig, sig.len().min(map.n_slices()))?;
            eprintln!(
                "{}: attention mass on signal {:.4} (uniform {:.4}), top-{} hit rate {:.2}",
                volume.id,
                score.attention_mass_on_signal,
                sig.len() as f64 / map.n_slices() as f64,
                score.top_k,
                score.hit_rate
            );
        }
        return Ok(());
    }
    let target = match a.target_class {
        Some(c) => c,
        None => {
            let tape = Tape::<f32>::no_grad();
            let out = model.forward(&tape, tape.constant(volume_batch(volume)), Mode::Eval)?;
            argmax(&out.logits.value().to_f64_vec())
        }
    };
    let attr = hirescam(&model, volume, target, a.layer.as_deref(), a.clamp)
        .map_err(|e| usage(e.to_string()))?;
    let mut rvf = a.out.clone().into_os_string();
    rvf.push("_hirescam.rvf");
    let [d, h, w] = volume.spatial_shape();
    let up = Volume {
        id: volume.id.clone(),
        data: Tensor::new(vec![1, d, h, w], attr.upsampled.to_f32_vec())?,
        label: target,
        signal_slices: None,
    };
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_volume(PathBuf::from(&rvf), &up)?;
    let mut json = a.out.into_os_string();
    json.push("_hirescam.json");
    let doc = serde_json::json!({
        "volume": volume.id,
        "layer": attr.layer,
        "target_class": attr.target_class,
        "clamped": a.clamp,
        "shape": attr.values.shape(),
        "values": attr.values.data(),
    });
    write(Path::new(&json), serde_json::to_string_pretty(&doc)? + "\n")?;
    println!("{}", PathBuf::from(rvf).display());
    println!("{}", PathBuf::from(json).display());
    Ok(())
}
