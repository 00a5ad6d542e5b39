//! Precision, recall, F1 on the malicious class, support-weighted F1, and ROC/AUC.

use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Set when the corresponding metric hit a zero denominator and was reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MetricFlags {
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
    pub auc_undefined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive at this point.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub weighted_f1: f64,
    pub auc: f64,
    pub confusion: Confusion,
    pub roc: Vec<RocPoint>,
    pub flags: MetricFlags,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn harmonic(p: f64, r: f64) -> Option<f64> {
    (p + r > 0.0).then(|| 2.0 * p * r / (p + r))
}

/// ROC over every distinct score, highest first, starting at (0, 0).
fn roc_curve(scores: &[f64], labels: &[bool], n_pos: usize, n_neg: usize) -> Vec<RocPoint> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
            threshold: s,
        });
    }
    points
}

fn trapezoid(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

/// Scores at or above `threshold` are predicted malicious.
pub fn compute_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> Result<Metrics> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("scores contain NaN".into()));
    }
    let mut c = Confusion::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    let mut flags = MetricFlags::default();
    let precision = ratio(c.tp, c.tp + c.fp).unwrap_or_else(|| {
        flags.precision_undefined = true;
        0.0
    });
    let recall = ratio(c.tp, c.tp + c.fn_).unwrap_or_else(|| {
        flags.recall_undefined = true;
        0.0
    });
    let f1 = harmonic(precision, recall).unwrap_or_else(|| {
        flags.f1_undefined = true;
        0.0
    });

    // Normal class, one-vs-rest.
    let f1_neg = harmonic(
        ratio(c.tn, c.tn + c.fn_).unwrap_or(0.0),
        ratio(c.tn, c.tn + c.fp).unwrap_or(0.0),
    )
    .unwrap_or(0.0);
    let n_pos = c.tp + c.fn_;
    let n_neg = c.tn + c.fp;
    let n = c.total();
    let weighted_f1 = if n > 0 {
        (n_pos as f64 * f1 + n_neg as f64 * f1_neg) / n as f64
    } else {
        0.0
    };

    let (roc, auc) = if n_pos > 0 && n_neg > 0 {
        let roc = roc_curve(scores, labels, n_pos, n_neg);
        let auc = trapezoid(&roc);
        (roc, auc)
    } else {
        flags.auc_undefined = true;
        (Vec::new(), 0.0)
    };

    Ok(Metrics {
        precision,
        recall,
        f1,
        weighted_f1,
        auc,
        confusion: c,
        roc,
        flags,
    })
}

impl Metrics {
    pub fn write_roc_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "fpr,tpr,threshold")?;
        for p in &self.roc {
            writeln!(w, "{},{},{}", p.fpr, p.tpr, p.threshold)?;
        }
        w.flush()
    }
}

/// `precision=… recall=… f1=… wf1=… auc=…`
impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "precision={:.6} recall={:.6} f1={:.6} wf1={:.6} auc={:.6}",
            self.precision, self.recall, self.f1, self.weighted_f1, self.auc
        )
    }
}
