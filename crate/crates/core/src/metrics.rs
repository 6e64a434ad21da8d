//! Detection metrics over labeled scores. Label 1 is synthetic (positive);
//! higher scores mean more synthetic.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBatch {
    labels: Vec<u8>,
    scores: Vec<f64>,
    predictions: Option<Vec<u8>>,
}

impl ScoredBatch {
    pub fn new(labels: Vec<u8>, scores: Vec<f64>, predictions: Option<Vec<u8>>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("scored batch".into()));
        }
        if labels.len() != scores.len()
            || predictions
                .as_ref()
                .is_some_and(|p| p.len() != labels.len())
        {
            return Err(Error::Shape(
                "labels, scores and predictions differ in length".into(),
            ));
        }
        if labels
            .iter()
            .chain(predictions.iter().flatten())
            .any(|&v| v > 1)
        {
            return Err(Error::InvalidArgument(
                "labels and predictions must be 0 or 1".into(),
            ));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::NonFinite("score is NaN".into()));
        }
        Ok(Self {
            labels,
            scores,
            predictions,
        })
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn predictions(&self) -> Option<&[u8]> {
        self.predictions.as_deref()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn negatives(&self) -> usize {
        self.labels.len() - self.positives()
    }

    fn require_both_classes(&self) -> Result<(usize, usize)> {
        let (p, n) = (self.positives(), self.negatives());
        if p == 0 || n == 0 {
            return Err(Error::InvalidArgument(format!(
                "ranking metric needs both classes, got {p} positives and {n} negatives"
            )));
        }
        Ok((p, n))
    }

    /// Indices sorted by descending score, grouped by equal score.
    fn tie_groups(&self) -> Vec<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        let mut groups = Vec::new();
        let mut i = 0;
        while i < order.len() {
            let s = self.scores[order[i]];
            let (mut pos, mut neg) = (0, 0);
            while i < order.len() && self.scores[order[i]] == s {
                if self.labels[order[i]] == 1 {
                    pos += 1;
                } else {
                    neg += 1;
                }
                i += 1;
            }
            groups.push((pos, neg));
        }
        groups
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(batch: &ScoredBatch) -> Result<ConfusionCounts> {
    let preds = batch
        .predictions()
        .ok_or_else(|| Error::InvalidArgument("confusion counts need hard predictions".into()))?;
    let mut c = ConfusionCounts::default();
    for (&y, &p) in batch.labels().iter().zip(preds) {
        match (y, p) {
            (1, 1) => c.tp += 1,
            (0, 1) => c.fp += 1,
            (0, 0) => c.tn += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `(F1, accuracy)`; F1 is 0 when there are no true positives.
pub fn f1_accuracy(c: &ConfusionCounts) -> (f64, f64) {
    let f1 = if c.tp == 0 {
        0.0
    } else {
        (2 * c.tp) as f64 / (2 * c.tp + c.fp + c.fn_) as f64
    };
    let n = c.total();
    let acc = if n == 0 {
        0.0
    } else {
        (c.tp + c.tn) as f64 / n as f64
    };
    (f1, acc)
}

/// Mann-Whitney estimate `P(s+ > s-) + P(s+ = s-) / 2` from doubled
/// mid-ranks, so ties are exact.
pub fn roc_auc(batch: &ScoredBatch) -> Result<f64> {
    let (p, n) = batch.require_both_classes()?;
    // ascending order; doubled mid-rank of a tie group at 1-based ranks i..=j is i + j
    let mut rank_sum2: u64 = 0;
    let mut start = 1u64;
    for &(pos, neg) in batch.tie_groups().iter().rev() {
        let size = (pos + neg) as u64;
        let end = start + size - 1;
        rank_sum2 += pos as u64 * (start + end);
        start = end + 1;
    }
    let (p, n) = (p as u64, n as u64);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// Step-interpolated area under the precision-recall curve, with one
/// operating point per distinct score.
pub fn average_precision(batch: &ScoredBatch) -> Result<f64> {
    let p = batch.positives();
    if p == 0 {
        return Err(Error::InvalidArgument(
            "average precision needs a positive".into(),
        ));
    }
    // sum of pos * precision stays <= p after rounding, so the result is <= 1
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut weighted = 0.0;
    for (pos, neg) in batch.tie_groups() {
        tp += pos;
        fp += neg;
        if pos > 0 {
            weighted += pos as f64 * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(weighted / p as f64)
}

/// TPR at the lowest threshold whose FPR does not exceed `budget`,
/// predicting positive when `score >= threshold`.
pub fn tpr_at_fpr(batch: &ScoredBatch, budget: f64) -> Result<f64> {
    let (p, n) = batch.require_both_classes()?;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = 0usize;
    for (pos, neg) in batch.tie_groups() {
        tp += pos;
        fp += neg;
        if fp as f64 / n as f64 <= budget {
            best = tp;
        } else {
            break;
        }
    }
    Ok(best as f64 / p as f64)
}

/// The five detection metrics as fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub f1: f64,
    pub accuracy: f64,
    pub ap: f64,
    pub auc: f64,
    pub tpr_at_1fpr: f64,
}

impl MetricRow {
    pub const COLUMNS: [&'static str; 5] = ["f1", "accuracy", "ap", "auc", "tpr_at_1fpr"];

    pub fn values(&self) -> [f64; 5] {
        [self.f1, self.accuracy, self.ap, self.auc, self.tpr_at_1fpr]
    }

    pub fn mean(&self) -> f64 {
        self.values().iter().sum::<f64>() / 5.0
    }

    /// Percent with one decimal, e.g. `99.7`.
    pub fn percent(&self) -> [String; 5] {
        self.values().map(|v| format!("{:.1}", 100.0 * v))
    }

    /// Arithmetic mean of each column.
    pub fn average(rows: &[MetricRow]) -> Option<MetricRow> {
        if rows.is_empty() {
            return None;
        }
        let k = rows.len() as f64;
        let sum = |f: fn(&MetricRow) -> f64| rows.iter().map(f).sum::<f64>() / k;
        Some(MetricRow {
            f1: sum(|r| r.f1),
            accuracy: sum(|r| r.accuracy),
            ap: sum(|r| r.ap),
            auc: sum(|r| r.auc),
            tpr_at_1fpr: sum(|r| r.tpr_at_1fpr),
        })
    }
}

pub fn evaluate(batch: &ScoredBatch) -> Result<MetricRow> {
    let (f1, accuracy) = f1_accuracy(&confusion(batch)?);
    Ok(MetricRow {
        f1,
        accuracy,
        ap: average_precision(batch)?,
        auc: roc_auc(batch)?,
        tpr_at_1fpr: tpr_at_fpr(batch, 0.01)?,
    })
}
