use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("AUROC is undefined: labels contain only class {0}")]
    SingleClass(usize),
    #[error("{scores} scores for {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("metric over an empty set")]
    Empty,
}

/// Fraction of rows of `scores: [n, k]` whose first maximal column equals
/// the label.
pub fn accuracy(scores: &[f64], n_classes: usize, labels: &[usize]) -> Result<f64, MetricError> {
    if labels.is_empty() {
        return Err(MetricError::Empty);
    }
    if scores.len() != labels.len() * n_classes {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let hits = scores
        .chunks_exact(n_classes)
        .zip(labels)
        .filter(|(row, &label)| argmax(row) == label)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// P(score⁺ > score⁻) + ½·P(tie) via the Mann-Whitney rank sum with
/// average ranks over tied scores.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Result<f64, MetricError> {
    if scores.len() != positive.len() {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: positive.len(),
        });
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if positive.is_empty() {
        return Err(MetricError::Empty);
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass(usize::from(n_pos > 0)));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps tied average ranks integral.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean (i + j + 2) / 2.
        let twice_avg = (i + j + 2) as u64;
        let pos_in_group = order[i..=j].iter().filter(|&&k| positive[k]).count() as u64;
        twice_rank_sum += twice_avg * pos_in_group;
        i = j + 1;
    }
    let (p, n) = (n_pos as u64, n_neg as u64);
    // 2U = 2·R⁺ − p(p+1)
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

/// One-vs-rest macro average for more than two classes; for two classes the
/// class-1 score alone.
pub fn auroc_multiclass(
    probs: &[f64],
    n_classes: usize,
    labels: &[usize],
) -> Result<f64, MetricError> {
    if probs.len() != labels.len() * n_classes {
        return Err(MetricError::LengthMismatch {
            scores: probs.len(),
            labels: labels.len(),
        });
    }
    let column = |c: usize| -> (Vec<f64>, Vec<bool>) {
        (
            probs.chunks_exact(n_classes).map(|r| r[c]).collect(),
            labels.iter().map(|&l| l == c).collect(),
        )
    };
    if n_classes == 2 {
        let (s, y) = column(1);
        return auroc(&s, &y);
    }
    let mut total = 0.0;
    for c in 0..n_classes {
        let (s, y) = column(c);
        total += auroc(&s, &y)?;
    }
    Ok(total / n_classes as f64)
}
