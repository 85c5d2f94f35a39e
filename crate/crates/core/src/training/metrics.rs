use std::fmt::Write as _;
use std::ops::Range;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationMetrics {
    /// Correct predictions over all shapes.
    pub instance_accuracy: f64,
    /// Unweighted mean of the per-class accuracies of classes present.
    pub class_accuracy: f64,
    /// `None` for classes with no samples.
    pub per_class: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

pub fn classification_metrics(
    predictions: &[usize],
    labels: &[usize],
    classes: usize,
) -> Result<ClassificationMetrics> {
    if predictions.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Data("no samples to evaluate".into()));
    }
    let mut counts = vec![0usize; classes];
    let mut correct = vec![0usize; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if l >= classes {
            return Err(Error::Data(format!("label {l} outside {classes} classes")));
        }
        counts[l] += 1;
        correct[l] += (p == l) as usize;
    }
    let per_class: Vec<Option<f64>> = counts
        .iter()
        .zip(&correct)
        .map(|(&n, &c)| (n > 0).then(|| c as f64 / n as f64))
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    Ok(ClassificationMetrics {
        instance_accuracy: correct.iter().sum::<usize>() as f64 / labels.len() as f64,
        class_accuracy: present.iter().sum::<f64>() / present.len() as f64,
        per_class,
        counts,
    })
}

impl ClassificationMetrics {
    /// Two-column table of class-average and instance accuracy, in percent.
    pub fn table(&self) -> String {
        format!(
            "{:>8} {:>8}\n{:>8.2} {:>8.2}\n",
            "class",
            "instance",
            100.0 * self.class_accuracy,
            100.0 * self.instance_accuracy
        )
    }
}

/// Mean over the category's part types of the IoU between predicted and
/// ground-truth point sets. A part absent from both counts as 1.
pub fn shape_miou(prediction: &[usize], truth: &[usize], parts: Range<usize>) -> Result<f64> {
    if prediction.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} points",
            prediction.len(),
            truth.len()
        )));
    }
    if parts.is_empty() {
        return Err(Error::Data("category has no parts".into()));
    }
    if let Some(bad) = truth.iter().find(|l| !parts.contains(l)) {
        return Err(Error::Data(format!("part label {bad} outside {parts:?}")));
    }
    let mut total = 0.0;
    for part in parts.clone() {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&p, &t) in prediction.iter().zip(truth) {
            let (a, b) = (p == part, t == part);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        total += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    }
    Ok(total / parts.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationMetrics {
    /// Mean of the shape mIoUs over all shapes.
    pub overall: f64,
    /// Mean shape mIoU per category; `None` for categories with no shapes.
    pub per_category: Vec<Option<f64>>,
    pub names: Vec<String>,
}

/// `shapes` holds `(category, per-shape mIoU)` pairs.
pub fn segmentation_metrics(shapes: &[(usize, f64)], names: &[String]) -> Result<SegmentationMetrics> {
    if shapes.is_empty() {
        return Err(Error::Data("no shapes to evaluate".into()));
    }
    let mut sums = vec![0.0; names.len()];
    let mut counts = vec![0usize; names.len()];
    for &(c, m) in shapes {
        if c >= names.len() {
            return Err(Error::Data(format!("category {c} outside {} categories", names.len())));
        }
        sums[c] += m;
        counts[c] += 1;
    }
    Ok(SegmentationMetrics {
        overall: shapes.iter().map(|s| s.1).sum::<f64>() / shapes.len() as f64,
        per_category: sums
            .iter()
            .zip(&counts)
            .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
            .collect(),
        names: names.to_vec(),
    })
}

impl SegmentationMetrics {
    /// One row: `mean` followed by every category with shapes, in percent.
    pub fn table(&self) -> String {
        let cols: Vec<(&str, f64)> = std::iter::once(("mean", self.overall))
            .chain(
                self.names
                    .iter()
                    .zip(&self.per_category)
                    .filter_map(|(n, v)| v.map(|v| (n.as_str(), v))),
            )
            .collect();
        let width = |n: &str| n.len().max(6);
        let mut out = String::new();
        for (n, _) in &cols {
            write!(out, "{:>w$} ", n, w = width(n)).unwrap();
        }
        out.pop();
        out.push('\n');
        for (n, v) in &cols {
            write!(out, "{:>w$.2} ", 100.0 * v, w = width(n)).unwrap();
        }
        out.pop();
        out.push('\n');
        out
    }
}

/// Evaluation result for either task.
#[derive(Clone, Debug, PartialEq)]
pub enum EvalMetrics {
    Classification(ClassificationMetrics),
    Segmentation(SegmentationMetrics),
}

impl EvalMetrics {
    /// Instance accuracy or overall mIoU; used for checkpoint selection.
    pub fn primary(&self) -> f64 {
        match self {
            EvalMetrics::Classification(m) => m.instance_accuracy,
            EvalMetrics::Segmentation(m) => m.overall,
        }
    }

    pub fn table(&self) -> String {
        match self {
            EvalMetrics::Classification(m) => m.table(),
            EvalMetrics::Segmentation(m) => m.table(),
        }
    }

    fn fields(&self, prefix: &str, out: &mut String) {
        match self {
            EvalMetrics::Classification(m) => write!(
                out,
                " {prefix}_instance_acc={} {prefix}_class_acc={}",
                m.instance_accuracy, m.class_accuracy
            ),
            EvalMetrics::Segmentation(m) => write!(out, " {prefix}_miou={}", m.overall),
        }
        .unwrap();
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// One-based epoch number.
    pub epoch: usize,
    /// Mean training loss over the epoch's samples.
    pub loss: f64,
    pub lr: f64,
    pub bn_momentum: f64,
    pub train: EvalMetrics,
    pub validation: Option<EvalMetrics>,
}

impl EpochRecord {
    /// `key=value` record; floats use the shortest exact representation.
    pub fn to_line(&self) -> String {
        let mut s = format!(
            "epoch={} loss={} lr={} bn_momentum={}",
            self.epoch, self.loss, self.lr, self.bn_momentum
        );
        self.train.fields("train", &mut s);
        if let Some(v) = &self.validation {
            v.fields("val", &mut s);
        }
        s
    }
}

/// Per-epoch history of a training run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub records: Vec<EpochRecord>,
    /// One-based epoch whose parameters were retained.
    pub best_epoch: usize,
}

impl MetricsReport {
    pub fn to_log(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&r.to_line());
            s.push('\n');
        }
        s
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == self.best_epoch)
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Final and best epoch side by side.
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        for (label, rec) in [("final", self.last()), ("best", self.best())] {
            let Some(r) = rec else { continue };
            writeln!(out, "{label} (epoch {}, loss {:.6})", r.epoch, r.loss).unwrap();
            writeln!(out, "train\n{}", r.train.table()).unwrap();
            if let Some(v) = &r.validation {
                writeln!(out, "validation\n{}", v.table()).unwrap();
            }
        }
        out
    }
}
