//! Downstream detection: train/test split, random forest, and metrics.

use ndarray::{ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::graph::{LabelSet, NodeId};

mod forest;
mod metrics;
mod split;

pub use forest::{gini, DecisionTree, Forest, ForestConfig, TreeNode};
pub use metrics::{compute_metrics, Confusion, MetricFlags, Metrics, RocPoint};
pub use split::{split, Split, SplitSpec};

/// Default decision threshold on the positive-vote fraction.
pub const DEFAULT_THRESHOLD: f64 = 0.35;

/// Test-set outcome of one split/fit/score round.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub split: Split,
    /// Positive-vote fraction per test node, in `split.test` order.
    pub scores: Vec<f64>,
    pub metrics: Metrics,
}

/// Splits the labeled nodes, fits a forest on the training rows of `h`, and
/// scores the held-out rows.
pub fn evaluate(
    h: ArrayView2<f64>,
    labels: &LabelSet,
    split_spec: &SplitSpec,
    forest: &ForestConfig,
    threshold: f64,
) -> Result<Evaluation> {
    if let Some((v, _)) = labels.iter().find(|(v, _)| v.index() >= h.nrows()) {
        return Err(Error::Dimension(format!(
            "label for node {v} but only {} embedding rows",
            h.nrows()
        )));
    }
    let split = split(labels, split_spec)?;
    let rows = |ids: &[NodeId]| h.select(Axis(0), &ids.iter().map(|v| v.index()).collect::<Vec<_>>());
    let truth = |ids: &[NodeId]| -> Vec<bool> {
        ids.iter()
            .map(|&v| labels.get(v).is_some_and(|l| l.is_positive()))
            .collect()
    };
    let model = Forest::fit(rows(&split.train).view(), &truth(&split.train), forest)?;
    let scores = model.predict_scores(rows(&split.test).view())?;
    let metrics = compute_metrics(&scores, &truth(&split.test), threshold)?;
    Ok(Evaluation { split, scores, metrics })
}
