//! Evaluation arithmetic: confusion matrix, one-vs-rest per-class counts and
//! ratios, micro/macro averages, and macro F1.
//!
//! Counting is integer-exact; ratios are computed in f64 at the end. A 0/0
//! ratio yields 0 and sets the class's `undefined` flag instead of NaN, so
//! downstream numbers stay interpretable. The macro average of true-positive
//! rates excludes classes with an empty row (never true); macro F1 averages
//! over all classes with flagged ones contributing 0.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// `counts[i][j]` = samples of true class `i` predicted as class `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(n: usize) -> Self {
        ConfusionMatrix {
            n,
            counts: vec![0; n * n],
        }
    }

    /// Count (true, predicted) pairs. Labels must lie in `[0, n)`.
    pub fn from_labels(y_true: &[usize], y_pred: &[usize], n: usize) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(Error::Dimension {
                what: "label vectors".into(),
                expected: format!("{} predictions", y_true.len()),
                got: format!("{}", y_pred.len()),
            });
        }
        let mut cm = ConfusionMatrix::zeros(n);
        for (index, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
            for label in [t, p] {
                if label >= n {
                    return Err(Error::LabelOutOfRange {
                        label,
                        index,
                        classes: n,
                    });
                }
            }
            cm.counts[t * n + p] += 1;
        }
        Ok(cm)
    }

    pub fn from_counts(n: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != n * n {
            return Err(Error::Dimension {
                what: "confusion matrix".into(),
                expected: format!("{} entries", n * n),
                got: format!("{}", counts.len()),
            });
        }
        Ok(ConfusionMatrix { n, counts })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.n + j]
    }

    pub fn add(&mut self, i: usize, j: usize, count: u64) {
        self.counts[i * self.n + j] += count;
    }

    /// Merge another matrix of the same size (fold aggregation).
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n != self.n {
            return Err(Error::Dimension {
                what: "confusion matrices".into(),
                expected: format!("{} classes", self.n),
                got: format!("{}", other.n),
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        (0..self.n).map(|j| self.get(i, j)).sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.n).map(|i| self.get(i, j)).sum()
    }

    /// Plain CSV grid of counts.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n).map(|j| self.get(i, j).to_string()).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    /// Row-normalized CSV grid (each row divided by its sum; empty rows stay
    /// zero).
    pub fn to_normalized_csv(&self) -> String {
        let mut s = String::new();
        for i in 0..self.n {
            let sum = self.row_sum(i);
            let row: Vec<String> = (0..self.n)
                .map(|j| {
                    if sum == 0 {
                        "0".to_string()
                    } else {
                        format!("{}", self.get(i, j) as f64 / sum as f64)
                    }
                })
                .collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

/// One-vs-rest counts and derived ratios for a single class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Some ratio hit 0/0 for this class.
    pub undefined: bool,
}

/// Per-class one-vs-rest statistics: `tp_i = C[i,i]`,
/// `fp_i = sum_{k != i} C[k,i]`, `fn_i = sum_{k != i} C[i,k]`,
/// `tn_i = total - tp - fp - fn`.
pub fn per_class_stats(cm: &ConfusionMatrix) -> Vec<ClassStats> {
    let n = cm.n();
    let total = cm.total();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let tp = cm.get(i, i);
        let fp = cm.col_sum(i) - tp;
        let fn_ = cm.row_sum(i) - tp;
        let tn = total - tp - fp - fn_;
        let mut undefined = false;
        let mut ratio = |num: u64, den: u64| -> f64 {
            if den == 0 {
                undefined = true;
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let accuracy = ratio(tp + tn, total);
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            if tp + fp == 0 || tp + fn_ == 0 {
                undefined = true;
            }
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        out.push(ClassStats {
            tp,
            fp,
            fn_,
            tn,
            accuracy,
            precision,
            recall,
            f1,
            undefined,
        });
    }
    out
}

/// Micro/macro summary of a confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroMacro {
    /// Total correct over total scored: `trace(C) / sum(C)`.
    pub micro: f64,
    /// Unweighted mean of per-class true-positive rates `C[i,i] / row_sum_i`,
    /// over classes with a nonzero row.
    pub macro_: f64,
    /// Population standard deviation of those per-class rates.
    pub macro_std: f64,
    /// Classes excluded from the macro average (empty rows).
    pub excluded: Vec<usize>,
}

/// Micro and macro averages. Errors on an all-zero matrix; classes that never
/// occur as true labels are excluded from the macro mean and reported.
pub fn micro_macro(cm: &ConfusionMatrix) -> Result<MicroMacro> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let micro = cm.trace() as f64 / total as f64;
    let mut rates = Vec::new();
    let mut excluded = Vec::new();
    for i in 0..cm.n() {
        let row = cm.row_sum(i);
        if row == 0 {
            excluded.push(i);
        } else {
            rates.push(cm.get(i, i) as f64 / row as f64);
        }
    }
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let var = rates.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / rates.len() as f64;
    Ok(MicroMacro {
        micro,
        macro_: mean,
        macro_std: var.sqrt(),
        excluded,
    })
}

/// Unweighted mean of class F1 scores; flagged classes contribute 0.
pub fn macro_f1(stats: &[ClassStats]) -> f64 {
    if stats.is_empty() {
        return 0.0;
    }
    stats.iter().map(|s| s.f1).sum::<f64>() / stats.len() as f64
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Complete evaluation: the confusion matrix plus every derived statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassStats>,
    pub micro: f64,
    pub macro_: f64,
    pub macro_std: f64,
    pub macro_precision: f64,
    pub macro_precision_std: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Classes with any 0/0 ratio.
    pub undefined_flags: Vec<bool>,
    /// Classes excluded from the macro TP-rate average (empty rows).
    pub macro_excluded: Vec<usize>,
}

impl EvaluationReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Result<Self> {
        let per_class = per_class_stats(&confusion);
        let mm = micro_macro(&confusion)?;
        let precisions: Vec<f64> = per_class.iter().map(|s| s.precision).collect();
        let recalls: Vec<f64> = per_class.iter().map(|s| s.recall).collect();
        let (macro_precision, macro_precision_std) = mean_std(&precisions);
        let (macro_recall, _) = mean_std(&recalls);
        let f1 = macro_f1(&per_class);
        let undefined_flags = per_class.iter().map(|s| s.undefined).collect();
        Ok(EvaluationReport {
            confusion,
            micro: mm.micro,
            macro_: mm.macro_,
            macro_std: mm.macro_std,
            macro_precision,
            macro_precision_std,
            macro_recall,
            macro_f1: f1,
            per_class,
            undefined_flags,
            macro_excluded: mm.excluded,
        })
    }

    pub fn from_labels(y_true: &[usize], y_pred: &[usize], n: usize) -> Result<Self> {
        Self::from_confusion(ConfusionMatrix::from_labels(y_true, y_pred, n)?)
    }

    /// Key-value text summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("total_frames={}\n", self.confusion.total()));
        s.push_str(&format!("micro={}\n", self.micro));
        s.push_str(&format!("macro={}\n", self.macro_));
        s.push_str(&format!("macro_std={}\n", self.macro_std));
        s.push_str(&format!("macro_precision={}\n", self.macro_precision));
        s.push_str(&format!(
            "macro_precision_std={}\n",
            self.macro_precision_std
        ));
        s.push_str(&format!("macro_recall={}\n", self.macro_recall));
        s.push_str(&format!("macro_f1={}\n", self.macro_f1));
        for (i, st) in self.per_class.iter().enumerate() {
            s.push_str(&format!(
                "class{i}.acc={} class{i}.precision={} class{i}.recall={} class{i}.f1={}{}\n",
                st.accuracy,
                st.precision,
                st.recall,
                st.f1,
                if st.undefined {
                    " (undefined flagged)"
                } else {
                    ""
                }
            ));
        }
        if !self.macro_excluded.is_empty() {
            s.push_str(&format!(
                "macro_excluded_classes={:?}\n",
                self.macro_excluded
            ));
        }
        s
    }

    pub fn write_summary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        w.write_all(self.summary().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}
