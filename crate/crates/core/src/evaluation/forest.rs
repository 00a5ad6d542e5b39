//! Random forest of Gini-impurity CART trees for binary labels.

use ndarray::{ArrayView2, Axis};
use ndarray::parallel::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows every tree until its leaves are pure or unsplittable.
    pub max_depth: Option<usize>,
    /// Candidate features per split; `None` means `⌈√dim⌉`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            features_per_split: None,
            bootstrap: true,
            seed: 42,
        }
    }
}

impl ForestConfig {
    pub fn features_for(&self, dim: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize)
            .clamp(1, dim.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf { positive: bool },
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<TreeNode>,
}

#[derive(Debug, Clone, Copy)]
struct BestSplit {
    feature: usize,
    threshold: f64,
    /// Sum over both sides of `n − Σ_c n_c² / n`, i.e. `m ·` weighted Gini.
    score: f64,
}

fn side_score(pos: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let (p, n) = (pos as f64, (total - pos) as f64);
    total as f64 - (p * p + n * n) / total as f64
}

/// Gini impurity of a node with `pos` positives out of `total`.
pub fn gini(pos: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        side_score(pos, total) / total as f64
    }
}

/// Best threshold on one feature, or `None` when the feature is constant on `samples`.
fn best_threshold(
    x: &ArrayView2<f64>,
    y: &[bool],
    samples: &[usize],
    feature: usize,
    buf: &mut Vec<(f64, bool)>,
) -> Option<(f64, f64)> {
    buf.clear();
    buf.extend(samples.iter().map(|&i| (x[[i, feature]], y[i])));
    buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    if buf.first()?.0 == buf.last()?.0 {
        return None;
    }
    let m = buf.len();
    let total_pos = buf.iter().filter(|p| p.1).count();
    let mut left_pos = 0;
    let mut best: Option<(f64, f64)> = None;
    for i in 0..m - 1 {
        left_pos += buf[i].1 as usize;
        let (lo, hi) = (buf[i].0, buf[i + 1].0);
        if lo == hi {
            continue;
        }
        let score = side_score(left_pos, i + 1) + side_score(total_pos - left_pos, m - i - 1);
        if best.is_none_or(|b| score < b.1) {
            let mid = lo + (hi - lo) / 2.0;
            let threshold = if mid < hi { mid } else { lo };
            best = Some((threshold, score));
        }
    }
    best
}

impl DecisionTree {
    /// Grows a tree on `samples` (row indices into `x`, repeats allowed).
    pub fn fit(
        x: ArrayView2<f64>,
        y: &[bool],
        samples: Vec<usize>,
        features_per_split: usize,
        max_depth: Option<usize>,
        rng: &mut impl Rng,
    ) -> Self {
        let dim = x.ncols();
        let mut nodes = Vec::new();
        let mut stack = vec![(0usize, samples, 0usize)];
        nodes.push(TreeNode::Leaf { positive: false });
        let mut features: Vec<usize> = (0..dim).collect();
        let mut buf = Vec::new();

        while let Some((slot, samples, depth)) = stack.pop() {
            let pos = samples.iter().filter(|&&i| y[i]).count();
            let majority = 2 * pos > samples.len();
            let pure = pos == 0 || pos == samples.len();
            if pure || samples.len() < 2 || max_depth.is_some_and(|d| depth >= d) {
                nodes[slot] = TreeNode::Leaf { positive: majority };
                continue;
            }

            // Visit features in random order until enough non-constant ones
            // have been scored.
            features.shuffle(rng);
            let mut best: Option<BestSplit> = None;
            let mut scored = 0;
            for &f in &features {
                if scored == features_per_split {
                    break;
                }
                if let Some((threshold, score)) = best_threshold(&x, y, &samples, f, &mut buf) {
                    scored += 1;
                    if best.is_none_or(|b| score < b.score) {
                        best = Some(BestSplit { feature: f, threshold, score });
                    }
                }
            }
            let Some(best) = best else {
                nodes[slot] = TreeNode::Leaf { positive: majority };
                continue;
            };

            let (left, right): (Vec<usize>, Vec<usize>) =
                samples.into_iter().partition(|&i| x[[i, best.feature]] <= best.threshold);
            let (l, r) = (nodes.len(), nodes.len() + 1);
            nodes.push(TreeNode::Leaf { positive: false });
            nodes.push(TreeNode::Leaf { positive: false });
            nodes[slot] = TreeNode::Split {
                feature: best.feature,
                threshold: best.threshold,
                left: l,
                right: r,
            };
            stack.push((r, right, depth + 1));
            stack.push((l, left, depth + 1));
        }
        Self { nodes }
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn predict(&self, row: &[f64]) -> bool {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { positive } => return positive,
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<DecisionTree>,
    n_features: usize,
}

impl Forest {
    /// Trains on the rows of `x` with labels `y` (`true` = malicious).
    pub fn fit(x: ArrayView2<f64>, y: &[bool], cfg: &ForestConfig) -> Result<Self> {
        let n = x.nrows();
        if y.len() != n {
            return Err(Error::Dimension(format!("{} labels for {n} rows", y.len())));
        }
        if cfg.n_trees == 0 {
            return Err(Error::Config("forest needs at least one tree".into()));
        }
        let pos = y.iter().filter(|&&l| l).count();
        if pos == 0 || pos == n {
            return Err(Error::Data(format!(
                "training set must contain both classes ({pos} positive of {n})"
            )));
        }
        let x = x.as_standard_layout();
        let xv = x.view();
        let mtry = cfg.features_for(x.ncols());
        let trees = (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(t as u64);
                let samples: Vec<usize> = if cfg.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                DecisionTree::fit(xv, y, samples, mtry, cfg.max_depth, &mut rng)
            })
            .collect();
        Ok(Self {
            trees,
            n_features: x.ncols(),
        })
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Fraction of trees voting positive for each row.
    pub fn predict_scores(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::Dimension(format!(
                "forest expects {} features, got {}",
                self.n_features,
                x.ncols()
            )));
        }
        let x = x.as_standard_layout();
        let n_trees = self.trees.len() as f64;
        Ok(x.axis_iter(Axis(0))
            .into_par_iter()
            .map(|row| {
                let row = row.to_slice().expect("standard layout");
                let votes = self.trees.iter().filter(|t| t.predict(row)).count();
                votes as f64 / n_trees
            })
            .collect())
    }
}
