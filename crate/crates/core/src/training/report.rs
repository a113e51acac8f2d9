use std::fmt::Write;

use serde::Serialize;

use crate::architecture::{Model, Reduction};
use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitMetrics {
    pub loss: f64,
    pub acc: f64,
    /// Absent when the split holds a single class.
    pub auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub backbone_frozen: bool,
    pub train: SplitMetrics,
    pub val: SplitMetrics,
    /// Wall clock; excluded from every file export.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// Final-epoch weights on the test split.
    pub test: SplitMetrics,
}

impl RunReport {
    pub fn epoch_seconds(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.seconds).collect()
    }
}

pub struct SeedRun<T: Element> {
    pub report: RunReport,
    pub model: Model<T>,
}

/// Mean or standard deviation of the test metrics over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub loss: f64,
    pub acc: f64,
    pub auroc: Option<f64>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub struct MultiSeedReport<T: Element> {
    pub runs: Vec<SeedRun<T>>,
    pub mean: Summary,
    /// Population standard deviation.
    pub std: Summary,
}

impl<T: Element> MultiSeedReport<T> {
    pub fn new(runs: Vec<SeedRun<T>>) -> Self {
        assert!(!runs.is_empty(), "at least one run");
        let pick = |f: &dyn Fn(&SplitMetrics) -> f64| {
            mean_std(&runs.iter().map(|r| f(&r.report.test)).collect::<Vec<_>>())
        };
        let (loss_m, loss_s) = pick(&|m| m.loss);
        let (acc_m, acc_s) = pick(&|m| m.acc);
        let aurocs: Option<Vec<f64>> = runs.iter().map(|r| r.report.test.auroc).collect();
        let (auc_m, auc_s) = match aurocs {
            Some(a) => {
                let (m, s) = mean_std(&a);
                (Some(m), Some(s))
            }
            None => (None, None),
        };
        Self {
            runs,
            mean: Summary {
                loss: loss_m,
                acc: acc_m,
                auroc: auc_m,
            },
            std: Summary {
                loss: loss_s,
                acc: acc_s,
                auroc: auc_s,
            },
        }
    }

    pub fn reports(&self) -> Vec<&RunReport> {
        self.runs.iter().map(|r| &r.report).collect()
    }

    /// `seed,epoch,split,loss,acc,auroc` rows: train and val per epoch, one
    /// test row per seed at the last epoch, then `mean` and `std` rows with
    /// epoch -1.
    pub fn to_csv(&self) -> String {
        report_csv(&self.reports(), Some((&self.mean, &self.std)))
    }

    /// Aggregate document without timings.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "model_selection": "last_epoch",
            "seeds": self.runs.iter().map(|r| r.report.seed).collect::<Vec<_>>(),
            "per_seed_test": self.runs.iter().map(|r| serde_json::json!({
                "seed": r.report.seed,
                "test": r.report.test,
            })).collect::<Vec<_>>(),
            "mean": self.mean,
            "std": self.std,
        })
    }
}

pub const CSV_HEADER: &str = "seed,epoch,split,loss,acc,auroc";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn row(out: &mut String, seed: &str, epoch: i64, split: &str, m: &SplitMetrics) {
    writeln!(
        out,
        "{seed},{epoch},{split},{},{},{}",
        m.loss,
        m.acc,
        opt(m.auroc)
    )
    .unwrap();
}

pub fn report_csv(reports: &[&RunReport], aggregate: Option<(&Summary, &Summary)>) -> String {
    let mut out = String::new();
    writeln!(out, "{CSV_HEADER}").unwrap();
    for r in reports {
        let seed = r.seed.to_string();
        for e in &r.epochs {
            row(&mut out, &seed, e.epoch as i64, "train", &e.train);
            row(&mut out, &seed, e.epoch as i64, "val", &e.val);
        }
        row(&mut out, &seed, r.epochs.len() as i64, "test", &r.test);
    }
    if let Some((mean, std)) = aggregate {
        for (name, s) in [("mean", mean), ("std", std)] {
            let m = SplitMetrics {
                loss: s.loss,
                acc: s.acc,
                auroc: s.auroc,
            };
            row(&mut out, name, -1, "test", &m);
        }
    }
    out
}

fn table_label(r: Reduction) -> &'static str {
    match r {
        Reduction::Average => "AveragePool",
        Reduction::Max => "MaxPool",
        Reduction::Lstm => "LSTM",
        Reduction::Transformer => "Transformer",
        Reduction::AttentionPool => "AttentionPool",
    }
}

/// Reduction-head comparison: one AUC and one ACC row per head (mean over
/// seeds), one column per dataset.
pub fn reduction_table_csv(datasets: &[&str], rows: &[(Reduction, Vec<Summary>)]) -> String {
    const ORDER: [Reduction; 5] = [
        Reduction::Average,
        Reduction::Max,
        Reduction::Lstm,
        Reduction::Transformer,
        Reduction::AttentionPool,
    ];
    let mut out = String::new();
    writeln!(out, "method,metric,{}", datasets.join(",")).unwrap();
    for r in ORDER {
        let Some((_, cells)) = rows.iter().find(|(x, _)| *x == r) else {
            continue;
        };
        let auc: Vec<String> = cells
            .iter()
            .map(|s| opt(s.auroc.map(|a| (a * 1e4).round() / 1e4)))
            .collect();
        let acc: Vec<String> = cells
            .iter()
            .map(|s| ((s.acc * 1e4).round() / 1e4).to_string())
            .collect();
        writeln!(out, "{},AUC,{}", table_label(r), auc.join(",")).unwrap();
        writeln!(out, "{},ACC,{}", table_label(r), acc.join(",")).unwrap();
    }
    out
}
