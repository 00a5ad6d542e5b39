//! Straight-line reference implementations used by the integration and
//! acceptance tests. Each one works from raw edge lists and dense matrices
//! and shares no code with the library stage it checks.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use ditsgcr::aggregation::aggregate;
use ditsgcr::clustering::{normalize_rows, soft_kmeans, subx_from_similarities};
use ditsgcr::graph::{adjacency_weights, GraphBuilder, TemporalGraph, Timestamp};
use ditsgcr::laplacian;
use ditsgcr::pipeline::PipelineConfig;
use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Edge list over node indices `0..n` plus the graph built from it. Keys are
/// `"v{i}"` and every node is registered up front, so node `i` has id `i`.
pub struct RawGraph {
    pub n: usize,
    pub edges: Vec<(usize, usize, u64)>,
    pub graph: TemporalGraph,
}

pub fn build(n: usize, edges: Vec<(usize, usize, u64)>) -> RawGraph {
    let mut b = GraphBuilder::new();
    for i in 0..n {
        b.node(&format!("v{i}"));
    }
    for &(u, v, t) in &edges {
        b.add_edge(&format!("v{u}"), &format!("v{v}"), Timestamp(t));
    }
    RawGraph {
        n,
        edges,
        graph: b.build(),
    }
}

/// Random multigraph with up to `max_nodes` nodes, timestamps drawn from
/// `max_timestamps` distinct values in `0..=time_range`, self loops and
/// parallel edges allowed.
pub fn random_graph(
    rng: &mut impl Rng,
    max_nodes: usize,
    max_timestamps: usize,
    max_edges: usize,
    time_range: u64,
) -> RawGraph {
    let n = rng.random_range(1..=max_nodes);
    let n_ts = rng.random_range(1..=max_timestamps);
    let times: Vec<u64> = (0..n_ts).map(|_| rng.random_range(0..=time_range)).collect();
    let m = rng.random_range(0..=max_edges);
    let edges = (0..m)
        .map(|_| {
            (
                rng.random_range(0..n),
                rng.random_range(0..n),
                times[rng.random_range(0..n_ts)],
            )
        })
        .collect();
    build(n, edges)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>())
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn add_row(acc: &mut [f64], z: ArrayView2<f64>, u: usize) {
    for (a, &x) in acc.iter_mut().zip(z.row(u)) {
        *a += x;
    }
}

/// Directed temporal aggregation computed node by node from the raw edge
/// list: every `w`, `z` and outer product is materialized explicitly.
/// `literal` applies the growth factor `exp(Δt/α)` to the whole state before
/// normalizing.
pub fn brute_force_aggregate(g: &RawGraph, z: ArrayView2<f64>, alpha: f64, literal: bool) -> Array2<f64> {
    let k = z.ncols();
    let d = 2 * k;
    let mut h = Array2::zeros((g.n, d * d + d));
    for v in 0..g.n {
        let times: BTreeSet<u64> = g
            .edges
            .iter()
            .filter(|e| e.0 == v || e.1 == v)
            .map(|e| e.2)
            .collect();
        let times: Vec<u64> = times.into_iter().collect();

        let ws: Vec<Vec<f64>> = times
            .iter()
            .map(|&t| {
                let mut w = vec![0.0; d];
                for &(a, b, te) in &g.edges {
                    if te != t {
                        continue;
                    }
                    if b == v {
                        add_row(&mut w[..k], z, a);
                    }
                    if a == v {
                        add_row(&mut w[k..], z, b);
                    }
                }
                let n = norm(&w);
                w.iter().map(|x| x / (n + 1e-10)).collect()
            })
            .collect();

        let mut s = vec![0.0; d];
        for w in &ws {
            for (a, x) in s.iter_mut().zip(w) {
                *a += x;
            }
        }

        let mut zs: Vec<Vec<f64>> = vec![vec![0.0; d]];
        for i in 1..times.len() {
            let dt = (times[i] - times[i - 1]) as f64;
            let prev = &zs[i - 1];
            let raw: Vec<f64> = if literal {
                let c = (dt / alpha).exp();
                (0..d).map(|j| c * (ws[i - 1][j] + prev[j])).collect()
            } else {
                let decay = (-dt / alpha).exp();
                (0..d).map(|j| ws[i - 1][j] + decay * prev[j]).collect()
            };
            let n = norm(&raw);
            zs.push(raw.iter().map(|x| x / (n + 1e-10)).collect());
        }

        let mut zv = vec![vec![0.0; d]; d];
        for i in 1..times.len() {
            for r in 0..d {
                for c in 0..d {
                    zv[r][c] += ws[i][r] * zs[i][c];
                }
            }
        }
        let row: Vec<f64> = zv.into_iter().flatten().chain(s).collect();
        for (j, x) in row.into_iter().enumerate() {
            h[[v, j]] = x;
        }
    }
    h
}

pub fn max_abs_diff(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm(a) * norm(b) + 1e-10)
}

fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

/// Hard spherical K-means: each row goes to its most cosine-similar
/// centroid, each centroid becomes the unit-normalized mean of its rows.
/// An empty cluster moves to the row farthest (Euclidean) from its nearest
/// non-empty centroid, lowest row index on ties.
pub struct HardKMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Smallest gap between the best and second-best similarity seen in any
    /// assignment step.
    pub min_gap: f64,
}

pub fn hard_kmeans(rows: &[Vec<f64>], init: Vec<Vec<f64>>, iters: usize) -> HardKMeans {
    let k = init.len();
    let d = rows[0].len();
    let mut centroids = init;
    let mut min_gap = f64::INFINITY;
    let assign = |centroids: &[Vec<f64>], min_gap: &mut f64| -> Vec<usize> {
        rows.iter()
            .map(|r| {
                let sims: Vec<f64> = centroids.iter().map(|c| cosine(r, c)).collect();
                let best = argmax(&sims);
                let second = sims
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != best)
                    .map(|(_, &s)| s)
                    .fold(f64::NEG_INFINITY, f64::max);
                *min_gap = min_gap.min(sims[best] - second);
                best
            })
            .collect()
    };
    for _ in 0..iters {
        let a = assign(&centroids, &mut min_gap);
        let mut next = vec![vec![0.0; d]; k];
        let mut count = vec![0usize; k];
        for (r, &c) in rows.iter().zip(&a) {
            count[c] += 1;
            for (acc, x) in next[c].iter_mut().zip(r) {
                *acc += x;
            }
        }
        for c in &mut next {
            let n = norm(c);
            if n > 0.0 {
                c.iter_mut().for_each(|x| *x /= n);
            }
        }
        let mut live: Vec<bool> = count.iter().map(|&c| c > 0).collect();
        for j in 0..k {
            if live[j] {
                continue;
            }
            let mut far = (usize::MAX, f64::NEG_INFINITY);
            for (i, r) in rows.iter().enumerate() {
                let nearest = (0..k)
                    .filter(|&c| live[c])
                    .map(|c| r.iter().zip(&next[c]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
                    .fold(f64::INFINITY, f64::min);
                if nearest > far.1 {
                    far = (i, nearest);
                }
            }
            let n = norm(&rows[far.0]);
            next[j] = rows[far.0].iter().map(|x| if n > 0.0 { x / n } else { *x }).collect();
            live[j] = true;
        }
        centroids = next;
    }
    let assignment = assign(&centroids, &mut min_gap);
    HardKMeans {
        centroids,
        assignment,
        min_gap,
    }
}

/// Count-mode pair weights straight from the edge list, self loops dropped.
pub fn dense_adjacency(g: &RawGraph) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(g.n, g.n);
    for &(u, v, _) in &g.edges {
        if u != v {
            a[(u, v)] += 1.0;
            a[(v, u)] += 1.0;
        }
    }
    a
}

pub fn laplacian_of(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut l = -a.clone();
    for i in 0..n {
        l[(i, i)] = a.row(i).sum();
    }
    l
}

/// `L + λ Σ_c L_c + μ I` with `L_c` built from `r_uc · r_vc · a_uv`.
pub fn dense_system(a: &DMatrix<f64>, r: ArrayView2<f64>, lambda: f64, mu: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let mut m = laplacian_of(a);
    for c in 0..r.ncols() {
        let wc = DMatrix::from_fn(n, n, |u, v| r[[u, c]] * r[[v, c]] * a[(u, v)]);
        m += lambda * laplacian_of(&wc);
    }
    for i in 0..n {
        m[(i, i)] += mu;
    }
    m
}

/// Dense Cholesky solve of `M Z = μ B`, column by column.
pub fn dense_solve(m: &DMatrix<f64>, b: ArrayView2<f64>, mu: f64) -> Array2<f64> {
    let chol = m.clone().cholesky().expect("system matrix is SPD");
    let mut out = Array2::zeros(b.dim());
    for c in 0..b.ncols() {
        let rhs = DVector::from_iterator(b.nrows(), b.column(c).iter().map(|x| mu * x));
        let x = chol.solve(&rhs);
        for i in 0..b.nrows() {
            out[[i, c]] = x[i];
        }
    }
    out
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

/// Distinct rows after rounding to 6 decimals.
pub fn distinct_rows(h: ArrayView2<f64>) -> usize {
    h.rows()
        .into_iter()
        .map(|r| r.iter().map(|x| (x * 1e6).round() as i64).collect::<Vec<_>>())
        .collect::<HashSet<_>>()
        .len()
}

/// Probability that a random positive outscores a random negative, ties half.
pub fn mann_whitney_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Lowest size-weighted Gini impurity over every feature and every threshold
/// between consecutive distinct values, or `None` if all features are constant.
pub fn best_root_gini(x: ArrayView2<f64>, y: &[bool], samples: &[usize]) -> Option<f64> {
    let gini = |s: &[usize]| {
        if s.is_empty() {
            return 0.0;
        }
        let p = s.iter().filter(|&&i| y[i]).count() as f64 / s.len() as f64;
        1.0 - p * p - (1.0 - p) * (1.0 - p)
    };
    let m = samples.len() as f64;
    let mut best: Option<f64> = None;
    for f in 0..x.ncols() {
        let mut values: Vec<f64> = samples.iter().map(|&i| x[[i, f]]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for pair in values.windows(2) {
            let thr = (pair[0] + pair[1]) / 2.0;
            let (l, r): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&i| x[[i, f]] <= thr);
            let score = (l.len() as f64 * gini(&l) + r.len() as f64 * gini(&r)) / m;
            if best.is_none_or(|b| score < b) {
                best = Some(score);
            }
        }
    }
    best
}

/// Algorithm 1 executed step by step from the stage functions.
pub fn orchestration_oracle(g: &RawGraph, cfg: &PipelineConfig) -> Result<(Array2<f64>, Vec<usize>, usize), String> {
    let mask = |mut h: Array2<f64>| {
        let split = 4 * cfg.k * cfg.k;
        for mut row in h.rows_mut() {
            for (j, x) in row.iter_mut().enumerate() {
                if (j < split && cfg.ablations.no_temporal) || (j >= split && cfg.ablations.no_neighbor) {
                    *x = 0.0;
                }
            }
        }
        h
    };
    let opts = cfg.aggregation();
    let z0 = Array2::from_elem((g.n, cfg.k), 1.0 / cfg.k as f64);
    let mut h = mask(aggregate(&g.graph, z0.view(), &opts).map_err(|e| e.to_string())?);
    let mut count = distinct_rows(h.view());
    let mut counts = vec![count];
    let weights = adjacency_weights(&g.graph, cfg.weight_mode).map_err(|e| e.to_string())?;
    let mut iterations = 0;
    for i in 1..=cfg.max_iters {
        iterations = i;
        let km = soft_kmeans(normalize_rows(h.view()).view(), &cfg.kmeans(), cfg.seed + i as u64).map_err(|e| e.to_string())?;
        let subx = subx_from_similarities(km.similarities.view());
        let z = if cfg.ablations.no_laplacian {
            subx
        } else {
            laplacian::solve(subx.view(), &weights, km.assignment.view(), &cfg.laplacian())
                .map_err(|e| e.to_string())?
                .0
        };
        let h_new = mask(aggregate(&g.graph, z.view(), &opts).map_err(|e| e.to_string())?);
        let count_new = distinct_rows(h_new.view());
        counts.push(count_new);
        if count >= count_new {
            break;
        }
        h = h_new;
        count = count_new;
    }
    Ok((h, counts, iterations))
}
