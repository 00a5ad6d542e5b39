//! Directed temporal aggregation.
//!
//! Lifts a `|V| x K` input embedding `Z` to a `|V| x (4K² + 2K)` structural
//! embedding. For every timestamp of a node the in- and out-neighbor rows of
//! `Z` are summed separately, concatenated and unit-normalized into a
//! timestep vector `w`. A decayed recurrence over the node's chronological
//! timeline produces a state `z_i`, and the outer products `w_i ⊗ z_i` are
//! accumulated into a `2K x 2K` matrix. The output row is that matrix
//! flattened row-major, followed by the plain sum `s` of all timestep vectors.

use ndarray::parallel::prelude::*;
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeId, TemporalGraph, TimelineEntry};

/// `|V| x K` low-dimensional embedding (input `Z`, `subx`, or optimized `Z`).
pub type LowDimMatrix = Array2<f64>;

/// `|V| x (4K² + 2K)` high-dimensional embedding `H`.
pub type EmbeddingMatrix = Array2<f64>;

/// Guard added to every L2 norm before dividing by it.
pub const NORM_EPS: f64 = 1e-10;

/// Width of an aggregated embedding row for `k` input columns.
pub const fn embedding_width(k: usize) -> usize {
    4 * k * k + 2 * k
}

/// How the temporal state is carried from one timestamp to the next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Recurrence {
    /// `z_i = normalize(w_{i-1} + exp(-Δt/α) · z_{i-1})`: older state decays.
    #[default]
    Decayed,
    /// `z_i = normalize(exp(Δt/α) · (w_{i-1} + z_{i-1}))`. The positive factor
    /// cancels under normalization, so `α` has no effect beyond the epsilon guard.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationOptions {
    /// Decay time constant in seconds.
    pub alpha: f64,
    pub recurrence: Recurrence,
}

impl Default for AggregationOptions {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            recurrence: Recurrence::Decayed,
        }
    }
}

impl AggregationOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!(
                "decay alpha must be positive and finite, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Divide by `‖x‖ + eps`; zero stays zero.
#[inline]
pub(crate) fn normalize_with(x: &mut [f64], eps: f64) {
    let denom = l2_norm(x) + eps;
    for v in x.iter_mut() {
        *v /= denom;
    }
}

fn timestep_into(entry: &TimelineEntry, z: &ArrayView2<f64>, out: &mut [f64]) {
    let k = z.ncols();
    out.fill(0.0);
    let (w_in, w_out) = out.split_at_mut(k);
    for &u in &entry.in_neighbors {
        for (acc, &x) in w_in.iter_mut().zip(z.row(u.index())) {
            *acc += x;
        }
    }
    for &u in &entry.out_neighbors {
        for (acc, &x) in w_out.iter_mut().zip(z.row(u.index())) {
            *acc += x;
        }
    }
    normalize_with(out, NORM_EPS);
}

/// Unit-normalized `[Σ_in Z_u, Σ_out Z_u]` for one timeline entry.
pub fn timestep_vector(entry: &TimelineEntry, z: ArrayView2<f64>) -> Vec<f64> {
    let mut out = vec![0.0; 2 * z.ncols()];
    timestep_into(entry, &z, &mut out);
    out
}

/// Fills `out` (length `4K² + 2K`) with one node's embedding row.
/// `timeline` is in storage order (newest first) and is walked oldest first.
fn node_embedding_into(
    timeline: &[TimelineEntry],
    z: &ArrayView2<f64>,
    opts: &AggregationOptions,
    out: &mut [f64],
) {
    let k2 = 2 * z.ncols();
    out.fill(0.0);
    let (flat, s) = out.split_at_mut(k2 * k2);

    let mut w_prev = vec![0.0; k2];
    let mut w_cur = vec![0.0; k2];
    let mut state = vec![0.0; k2];
    let mut prev_t = None;

    for entry in timeline.iter().rev() {
        timestep_into(entry, z, &mut w_cur);
        for (acc, &x) in s.iter_mut().zip(&w_cur) {
            *acc += x;
        }

        if let Some(t_prev) = prev_t {
            let dt = entry.t.seconds_since(t_prev);
            match opts.recurrence {
                Recurrence::Decayed => {
                    let decay = (-dt / opts.alpha).exp();
                    for (st, &w) in state.iter_mut().zip(&w_prev) {
                        *st = w + decay * *st;
                    }
                    normalize_with(&mut state, NORM_EPS);
                }
                Recurrence::Literal => {
                    // c·x / (‖c·x‖ + ε) rewritten as x / (‖x‖ + ε/c) so that a
                    // large Δt/α cannot overflow c.
                    for (st, &w) in state.iter_mut().zip(&w_prev) {
                        *st += w;
                    }
                    normalize_with(&mut state, NORM_EPS * (-dt / opts.alpha).exp());
                }
            }
            for (row, &wi) in flat.chunks_exact_mut(k2).zip(&w_cur) {
                for (acc, &zj) in row.iter_mut().zip(&state) {
                    *acc += wi * zj;
                }
            }
        }

        std::mem::swap(&mut w_prev, &mut w_cur);
        prev_t = Some(entry.t);
    }
}

/// Structural matrix `Z_v` (`2K x 2K`) and summed neighbor vector `s_v` of one node.
pub fn temporal_struct_matrix(
    graph: &TemporalGraph,
    v: NodeId,
    z: ArrayView2<f64>,
    opts: &AggregationOptions,
) -> Result<(Array2<f64>, Vec<f64>)> {
    opts.validate()?;
    check_input(graph, &z)?;
    let k2 = 2 * z.ncols();
    let mut row = vec![0.0; embedding_width(z.ncols())];
    node_embedding_into(graph.timeline(v), &z, opts, &mut row);
    let s = row.split_off(k2 * k2);
    let zv = Array2::from_shape_vec((k2, k2), row).expect("shape matches length");
    Ok((zv, s))
}

fn check_input(graph: &TemporalGraph, z: &ArrayView2<f64>) -> Result<()> {
    if z.nrows() != graph.n_nodes() {
        return Err(Error::Dimension(format!(
            "input embedding has {} rows for {} nodes",
            z.nrows(),
            graph.n_nodes()
        )));
    }
    if z.ncols() == 0 {
        return Err(Error::Dimension("input embedding has no columns".into()));
    }
    Ok(())
}

/// Aggregate every node. Nodes with an empty timeline get an all-zero row.
pub fn aggregate(
    graph: &TemporalGraph,
    z: ArrayView2<f64>,
    opts: &AggregationOptions,
) -> Result<EmbeddingMatrix> {
    opts.validate()?;
    check_input(graph, &z)?;
    let z = z.as_standard_layout();
    let zv = z.view();
    let mut h = Array2::zeros((graph.n_nodes(), embedding_width(z.ncols())));
    h.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(v, mut row)| {
            let out = row.as_slice_mut().expect("fresh array is contiguous");
            node_embedding_into(graph.timeline(NodeId(v as u32)), &zv, opts, out);
        });
    Ok(h)
}

/// `Z₀ = 1/K` everywhere.
pub fn uniform_input(n_nodes: usize, k: usize) -> LowDimMatrix {
    Array2::from_elem((n_nodes, k), 1.0 / k as f64)
}
