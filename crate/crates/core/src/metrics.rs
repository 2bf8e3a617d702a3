//! Pixel-wise evaluation of predicted foreground masks.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::imgcore::{BinaryMask, ByteImage};
use crate::par;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_dims(pred: &BinaryMask, gt: &BinaryMask) -> Result<()> {
    if pred.dims() == gt.dims() {
        Ok(())
    } else {
        Err(Error::Dimension {
            expected: gt.dims(),
            got: pred.dims(),
        })
    }
}

/// Counts agreement between a prediction and the ground truth.
pub fn confusion(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts> {
    check_dims(pred, gt)?;
    let mut c = ConfusionCounts::default();
    for (p, g) in pred.bits().iter().zip(gt.bits()) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// The six scores; `None` marks a metric whose denominator is zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub pr: Option<f64>,
    pub re: Option<f64>,
    pub sp: Option<f64>,
    pub acc: Option<f64>,
    pub sim: Option<f64>,
    pub f1: Option<f64>,
}

pub const METRIC_NAMES: [&str; 6] = ["pr", "re", "sp", "acc", "sim", "f1"];

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl MetricsReport {
    pub fn values(&self) -> [Option<f64>; 6] {
        [self.pr, self.re, self.sp, self.acc, self.sim, self.f1]
    }

    fn from_values(v: [Option<f64>; 6]) -> Self {
        Self {
            pr: v[0],
            re: v[1],
            sp: v[2],
            acc: v[3],
            sim: v[4],
            f1: v[5],
        }
    }
}

/// Precision, recall, specificity, accuracy, similarity (Jaccard) and F1.
///
/// F1 is evaluated as `2TP / (2TP + FP + FN)` but reported as undefined
/// whenever the harmonic mean of precision and recall is, i.e. when either is
/// undefined or both are zero.
pub fn metrics_from_counts(c: &ConfusionCounts) -> MetricsReport {
    let pr = ratio(c.tp, c.tp + c.fp);
    let re = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (pr, re) {
        (Some(p), Some(r)) if p + r > 0.0 => ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        _ => None,
    };
    MetricsReport {
        pr,
        re,
        sp: ratio(c.tn, c.tn + c.fp),
        acc: ratio(c.tp + c.tn, c.total()),
        sim: ratio(c.tp, c.tp + c.fp + c.fn_),
        f1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageEvaluation {
    pub counts: ConfusionCounts,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchReport {
    pub per_image: Vec<ImageEvaluation>,
    /// Per-metric mean over the images where the metric is defined.
    pub mean: MetricsReport,
    /// Number of images where each metric is undefined, in `METRIC_NAMES` order.
    pub na_counts: [usize; 6],
}

impl BatchReport {
    pub fn from_evaluations(per_image: Vec<ImageEvaluation>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::config("batch evaluation needs at least one image"));
        }
        let mut sums = [0.0; 6];
        let mut defined = [0usize; 6];
        for e in &per_image {
            for (k, v) in e.report.values().iter().enumerate() {
                if let Some(v) = v {
                    sums[k] += v;
                    defined[k] += 1;
                }
            }
        }
        let mean = MetricsReport::from_values(std::array::from_fn(|k| {
            (defined[k] > 0).then(|| sums[k] / defined[k] as f64)
        }));
        let na_counts = std::array::from_fn(|k| per_image.len() - defined[k]);
        Ok(Self {
            per_image,
            mean,
            na_counts,
        })
    }
}

/// Evaluates `(prediction, ground truth)` pairs and averages per metric.
pub fn evaluate_batch(pairs: &[(BinaryMask, BinaryMask)]) -> Result<BatchReport> {
    let per_image = par::map(pairs, |(pred, gt)| {
        confusion(pred, gt).map(|counts| ImageEvaluation {
            counts,
            report: metrics_from_counts(&counts),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    BatchReport::from_evaluations(per_image)
}

pub const TP_COLOR: [u8; 3] = [255, 255, 255];
pub const FP_COLOR: [u8; 3] = [255, 165, 0];
pub const TN_COLOR: [u8; 3] = [0, 0, 0];
pub const FN_COLOR: [u8; 3] = [0, 0, 255];

/// Color-codes each pixel: TP white, FP orange, TN black, FN blue.
pub fn render_overlay(pred: &BinaryMask, gt: &BinaryMask) -> Result<ByteImage> {
    check_dims(pred, gt)?;
    let samples = pred
        .bits()
        .iter()
        .zip(gt.bits())
        .flat_map(|(p, g)| match (p, g) {
            (true, true) => TP_COLOR,
            (true, false) => FP_COLOR,
            (false, false) => TN_COLOR,
            (false, true) => FN_COLOR,
        })
        .collect();
    ByteImage::new(pred.width(), pred.height(), 3, samples)
}

fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => "NA".to_string(),
    }
}

/// Writes one row per image (`path, tp, fp, tn, fn, pr, re, sp, acc, sim, f1`)
/// followed by a `mean` row. Undefined metrics are written as `NA`.
pub fn write_csv<W: Write>(out: W, names: &[String], batch: &BatchReport) -> Result<()> {
    let io = |e: csv::Error| Error::io("<csv>", std::io::Error::other(e));
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["path", "tp", "fp", "tn", "fn"];
    header.extend(METRIC_NAMES);
    w.write_record(&header).map_err(io)?;
    for (name, e) in names.iter().zip(&batch.per_image) {
        let c = e.counts;
        let mut row = vec![name.clone(), c.tp.to_string(), c.fp.to_string(), c.tn.to_string(), c.fn_.to_string()];
        row.extend(e.report.values().map(fmt_metric));
        w.write_record(&row).map_err(io)?;
    }
    let mut mean = vec!["mean".to_string(), String::new(), String::new(), String::new(), String::new()];
    mean.extend(batch.mean.values().map(fmt_metric));
    w.write_record(&mean).map_err(io)?;
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_csv_file(path: impl AsRef<Path>, names: &[String], batch: &BatchReport) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(std::io::BufWriter::new(file), names, batch).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}
