use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::data::ClassLabel;

/// k×k counts; rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self, EvalError> {
        let k = counts.len();
        if counts.iter().any(|r| r.len() != k) {
            return Err(EvalError::LengthMismatch {
                preds: counts.iter().map(Vec::len).max().unwrap_or(0),
                truths: k,
            });
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.counts[i][i]).sum()
    }

    /// Support of class `c`.
    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    /// Adds another shard's counts.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), EvalError> {
        if other.k != self.k {
            return Err(EvalError::LengthMismatch {
                preds: other.k,
                truths: self.k,
            });
        }
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
        Ok(())
    }
}

pub fn build_confusion(
    preds: &[usize],
    truths: &[usize],
    k: usize,
) -> Result<ConfusionMatrix, EvalError> {
    if preds.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            truths: truths.len(),
        });
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&p, &t) in preds.iter().zip(truths) {
        for id in [p, t] {
            if id >= k {
                return Err(EvalError::InvalidClassId { id, k });
            }
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// One-vs-rest reduction for class `c`.
pub fn binary_counts(cm: &ConfusionMatrix, c: usize) -> BinaryCounts {
    let tp = cm.get(c, c);
    let fp = cm.col_sum(c) - tp;
    let fn_ = cm.row_sum(c) - tp;
    BinaryCounts {
        tp,
        tn: cm.total() - tp - fp - fn_,
        fp,
        fn_,
    }
}

/// A ratio that reports 0 with `undefined` set when its denominator is 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub undefined: bool,
}

impl Ratio {
    fn of(num: u64, den: u64) -> Self {
        if den == 0 {
            Ratio {
                value: 0.0,
                undefined: true,
            }
        } else {
            Ratio {
                value: num as f64 / den as f64,
                undefined: false,
            }
        }
    }
}

/// trace / total.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    match cm.total() {
        0 => Err(EvalError::EmptyMatrix),
        total => Ok(cm.trace() as f64 / total as f64),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrfScores {
    pub precision: Ratio,
    pub recall: Ratio,
    pub f1: Ratio,
}

pub fn precision_recall_f1(cm: &ConfusionMatrix, c: usize) -> PrfScores {
    let b = binary_counts(cm, c);
    let precision = Ratio::of(b.tp, b.tp + b.fp);
    let recall = Ratio::of(b.tp, b.tp + b.fn_);
    let (p, r) = (precision.value, recall.value);
    let f1 = if precision.undefined || recall.undefined || p + r == 0.0 {
        Ratio {
            value: 0.0,
            undefined: true,
        }
    } else {
        Ratio {
            value: 2.0 * p * r / (p + r),
            undefined: false,
        }
    };
    PrfScores {
        precision,
        recall,
        f1,
    }
}

/// TN / (TN + FP).
pub fn specificity(cm: &ConfusionMatrix, c: usize) -> Ratio {
    let b = binary_counts(cm, c);
    Ratio::of(b.tn, b.tn + b.fp)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub support: u64,
    pub counts: BinaryCounts,
    pub precision: Ratio,
    pub recall: Ratio,
    pub f1: Ratio,
    pub specificity: Ratio,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub total: u64,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub macro_specificity: f64,
    pub per_class: Vec<ClassMetrics>,
}

pub(crate) fn class_names(k: usize) -> Vec<String> {
    if k == ClassLabel::ALL.len() {
        ClassLabel::ALL.iter().map(|c| c.name().to_string()).collect()
    } else {
        (0..k).map(|i| format!("class_{i}")).collect()
    }
}

/// Per-class metrics and their unweighted means (undefined entries count as 0).
pub fn macro_report(cm: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    let accuracy = accuracy(cm)?;
    let per_class: Vec<ClassMetrics> = class_names(cm.k())
        .into_iter()
        .enumerate()
        .map(|(c, class)| {
            let prf = precision_recall_f1(cm, c);
            ClassMetrics {
                class,
                support: cm.row_sum(c),
                counts: binary_counts(cm, c),
                precision: prf.precision,
                recall: prf.recall,
                f1: prf.f1,
                specificity: specificity(cm, c),
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        per_class.iter().map(f).sum::<f64>() / per_class.len() as f64
    };
    Ok(MetricsReport {
        total: cm.total(),
        accuracy,
        macro_precision: mean(|m| m.precision.value),
        macro_recall: mean(|m| m.recall.value),
        macro_f1: mean(|m| m.f1.value),
        macro_specificity: mean(|m| m.specificity.value),
        per_class,
    })
}
