//! Graph-Laplacian refinement of the structural embedding.
//!
//! Minimizes `tr(ZᵀLZ) + λ Σ_c tr(ZᵀL_cZ) + μ‖Z − subx‖²` by solving
//! `(L + λ Σ_c L_c + μI) Z = μ·subx` one column at a time with conjugate
//! gradients. `L = D − A` is built from symmetric pair weights and each
//! cluster Laplacian `L_c` reweights the same edges by `r_uc · r_vc`.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EdgeWeights;

/// Square sparse matrix in compressed sparse row form. Both triangles of
/// symmetric matrices are stored; column indices are sorted within a row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            indptr: vec![0; n + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Duplicate `(row, col)` entries are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0; n + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last = None;
        for (r, c, v) in triplets {
            assert!(r < n && c < n, "entry ({r}, {c}) outside {n}x{n}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        Self { n, indptr, indices, values }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.indptr[i]..self.indptr[i + 1];
        match self.indices[span.clone()].binary_search(&j) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                out[[i, j]] += v;
            }
        }
        out
    }

    /// `y = A x`.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            let span = self.indptr[i]..self.indptr[i + 1];
            *yi = self.indices[span.clone()]
                .iter()
                .zip(&self.values[span])
                .map(|(&j, &a)| a * x[j])
                .sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `self + scale · other`, merging sparsity patterns row by row.
    pub fn add_scaled(&self, other: &CsrMatrix, scale: f64) -> CsrMatrix {
        assert_eq!(self.n, other.n, "dimension mismatch");
        let mut indptr = Vec::with_capacity(self.n + 1);
        let mut indices = Vec::with_capacity(self.nnz().max(other.nnz()));
        let mut values = Vec::with_capacity(indices.capacity());
        indptr.push(0);
        for i in 0..self.n {
            let mut a = self.row(i).peekable();
            let mut b = other.row(i).map(|(j, v)| (j, scale * v)).peekable();
            loop {
                let next = match (a.peek(), b.peek()) {
                    (None, None) => break,
                    (Some(_), None) => a.next().unwrap(),
                    (None, Some(_)) => b.next().unwrap(),
                    (Some(&(ja, va)), Some(&(jb, vb))) => {
                        if ja == jb {
                            a.next();
                            b.next();
                            (ja, va + vb)
                        } else if ja < jb {
                            a.next().unwrap()
                        } else {
                            b.next().unwrap()
                        }
                    }
                };
                indices.push(next.0);
                values.push(next.1);
            }
            indptr.push(indices.len());
        }
        CsrMatrix { n: self.n, indptr, indices, values }
    }

    /// Adds `shift` to every diagonal entry.
    pub fn shift_diagonal(&self, shift: f64) -> CsrMatrix {
        let n = self.n;
        let eye = CsrMatrix {
            n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        };
        self.add_scaled(&eye, shift)
    }

    pub fn max_asymmetry(&self) -> f64 {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }
}

fn check_weights(weights: &EdgeWeights) -> Result<()> {
    for &(u, v, w) in weights.pairs() {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::InvalidWeight { u, v, weight: w });
        }
    }
    Ok(())
}

/// `L = D − A`.
pub fn build_graph_laplacian(weights: &EdgeWeights) -> Result<CsrMatrix> {
    check_weights(weights)?;
    Ok(laplacian_from_checked(weights, |_, _| 1.0))
}

/// Laplacian of pair weights scaled by `factor(u, v)`. Every edge keeps its
/// slot even when the scaled weight is zero, so all Laplacians built from the
/// same weights share one sparsity pattern.
fn laplacian_from_checked(weights: &EdgeWeights, factor: impl Fn(usize, usize) -> f64) -> CsrMatrix {
    if weights.is_empty() {
        return CsrMatrix::zeros(weights.n_nodes());
    }
    let mut touched = vec![false; weights.n_nodes()];
    for &(u, v, _) in weights.pairs() {
        touched[u] = true;
        touched[v] = true;
    }
    let n = weights.n_nodes();
    let mut triplets = Vec::with_capacity(2 * weights.pairs().len() + n);
    let mut degree = vec![0.0; n];
    for &(u, v, w) in weights.pairs() {
        let w = w * factor(u, v);
        triplets.push((u, v, -w));
        triplets.push((v, u, -w));
        degree[u] += w;
        degree[v] += w;
    }
    for (i, d) in degree.into_iter().enumerate() {
        if touched[i] {
            triplets.push((i, i, d));
        }
    }
    CsrMatrix::from_triplets(n, triplets)
}

/// One edge-restricted Laplacian per cluster with `W_c(u,v) = r_uc · r_vc · w(u,v)`.
pub fn build_cluster_laplacians(weights: &EdgeWeights, r: ArrayView2<f64>) -> Result<Vec<CsrMatrix>> {
    check_weights(weights)?;
    if r.nrows() != weights.n_nodes() {
        return Err(Error::Dimension(format!(
            "assignment has {} rows for {} nodes",
            r.nrows(),
            weights.n_nodes()
        )));
    }
    Ok((0..r.ncols())
        .into_par_iter()
        .map(|c| laplacian_from_checked(weights, |u, v| r[[u, c]] * r[[v, c]]))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplacianParams {
    /// Cluster-coherence weight.
    pub lambda: f64,
    /// Fidelity weight; must be positive so the system is definite.
    pub mu: f64,
    /// Relative residual target `‖Mz − b‖ / ‖b‖`.
    pub cg_tol: f64,
    /// Iteration cap; `None` uses `max(1000, 10·⌈√|V|⌉)`.
    pub cg_max_iters: Option<usize>,
    /// Jacobi (diagonal) preconditioning.
    pub jacobi: bool,
}

impl Default for LaplacianParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            mu: 1.0,
            cg_tol: 1e-6,
            cg_max_iters: None,
            jacobi: false,
        }
    }
}

impl LaplacianParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(Error::Config(format!("mu must be > 0, got {}", self.mu)));
        }
        if !(self.cg_tol > 0.0) {
            return Err(Error::Config(format!("cg tolerance must be > 0, got {}", self.cg_tol)));
        }
        Ok(())
    }

    pub fn max_iters_for(&self, n: usize) -> usize {
        self.cg_max_iters
            .unwrap_or_else(|| 1000.max(10 * (n as f64).sqrt().ceil() as usize))
    }
}

/// `M = L + λ Σ_c L_c + μI`.
pub fn assemble_system(laplacian: &CsrMatrix, clusters: &[CsrMatrix], params: &LaplacianParams) -> CsrMatrix {
    let mut m = laplacian.clone();
    for lc in clusters {
        m = m.add_scaled(lc, params.lambda);
    }
    m.shift_diagonal(params.mu)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradients from `x = 0`. Stops once `‖r‖ ≤ tol · ‖b‖`.
pub fn conjugate_gradient(
    m: &CsrMatrix,
    b: &[f64],
    tol: f64,
    max_iters: usize,
    jacobi: bool,
) -> (Vec<f64>, CgOutcome) {
    let n = m.dim();
    let mut x = vec![0.0; n];
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return (
            x,
            CgOutcome { iterations: 0, relative_residual: 0.0, converged: true },
        );
    }
    let inv_diag: Option<Vec<f64>> = jacobi.then(|| {
        m.diagonal()
            .into_iter()
            .map(|d| if d != 0.0 { 1.0 / d } else { 1.0 })
            .collect()
    });
    let precondition = |r: &[f64], z: &mut Vec<f64>| match &inv_diag {
        Some(inv) => {
            z.clear();
            z.extend(r.iter().zip(inv).map(|(a, b)| a * b));
        }
        None => {
            z.clear();
            z.extend_from_slice(r);
        }
    };

    let mut r = b.to_vec();
    let mut z = Vec::with_capacity(n);
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut mp = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let threshold = tol * b_norm;
    let mut res_norm = b_norm;
    let mut iterations = 0;

    while iterations < max_iters && res_norm > threshold {
        m.mul_vec_into(&p, &mut mp);
        let pmp = dot(&p, &mp);
        if pmp <= 0.0 {
            break;
        }
        let step = rz / pmp;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * mp[i];
        }
        iterations += 1;
        res_norm = dot(&r, &r).sqrt();
        precondition(&r, &mut z);
        let rz_next = dot(&r, &z);
        let ratio = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + ratio * p[i];
        }
    }

    let relative_residual = res_norm / b_norm;
    (
        x,
        CgOutcome {
            iterations,
            relative_residual,
            converged: res_norm <= threshold,
        },
    )
}

/// Diagnostics from one refinement solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveReport {
    pub cg_iterations: Vec<usize>,
    pub residuals: Vec<f64>,
}

/// Solves `M z = μ·subx_col` for every column of `subx`.
pub fn solve_system(m: &CsrMatrix, subx: ArrayView2<f64>, params: &LaplacianParams) -> Result<(Array2<f64>, SolveReport)> {
    params.validate()?;
    let n = subx.nrows();
    if m.dim() != n {
        return Err(Error::Dimension(format!("system is {}x{} but subx has {n} rows", m.dim(), m.dim())));
    }
    let max_iters = params.max_iters_for(n);
    let columns: Vec<(Vec<f64>, CgOutcome)> = (0..subx.ncols())
        .into_par_iter()
        .map(|c| {
            let b: Vec<f64> = subx.column(c).iter().map(|&x| params.mu * x).collect();
            conjugate_gradient(m, &b, params.cg_tol, max_iters, params.jacobi)
        })
        .collect();

    let mut z = Array2::zeros(subx.raw_dim());
    let mut report = SolveReport::default();
    for (c, (x, outcome)) in columns.into_iter().enumerate() {
        if !outcome.converged || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotConverged {
                column: c,
                residual: outcome.relative_residual,
                iterations: outcome.iterations,
            });
        }
        z.column_mut(c).assign(&ndarray::ArrayView1::from(&x));
        report.cg_iterations.push(outcome.iterations);
        report.residuals.push(outcome.relative_residual);
    }
    Ok((z, report))
}

/// Builds `L`, the cluster Laplacians and `M`, then solves for the refined embedding.
pub fn solve(
    subx: ArrayView2<f64>,
    weights: &EdgeWeights,
    r: ArrayView2<f64>,
    params: &LaplacianParams,
) -> Result<(Array2<f64>, SolveReport)> {
    params.validate()?;
    if subx.nrows() != weights.n_nodes() {
        return Err(Error::Dimension(format!(
            "subx has {} rows for {} nodes",
            subx.nrows(),
            weights.n_nodes()
        )));
    }
    let l = build_graph_laplacian(weights)?;
    let clusters = build_cluster_laplacians(weights, r)?;
    let m = assemble_system(&l, &clusters, params);
    solve_system(&m, subx, params)
}
