//! Differentiable (soft) K-means on row-normalized embeddings.
//!
//! Centroids are seeded with K-means++, then refined for a fixed number of
//! rounds: cosine similarity to every centroid, a softmax with inverse
//! temperature `β` for responsibilities, and a responsibility-weighted mean
//! projected back to the unit sphere. The K-dimensional `subx` embedding is
//! derived from min-max normalized cosine distances to the final centroids.

use ndarray::parallel::prelude::*;
use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{l2_norm, NORM_EPS};
use crate::error::{Error, Result};

/// Centroids whose total responsibility falls below this are re-seeded.
pub const DEAD_CLUSTER_MASS: f64 = 1e-8;

/// Rows whose distance spread is below this get a uniform `subx` row.
pub const DEGENERATE_SPREAD: f64 = 1e-9;

// Rows per partial sum in the centroid update. Fixed so the reduction order,
// and therefore the result, does not depend on the thread count.
const REDUCE_CHUNK: usize = 512;

/// Each row divided by `‖row‖ + 1e-10`; zero rows stay zero.
pub fn normalize_rows(h: ArrayView2<f64>) -> Array2<f64> {
    let mut out = h.to_owned();
    out.axis_iter_mut(Axis(0)).into_par_iter().for_each(|mut row| {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.mapv_inplace(|x| x / (norm + NORM_EPS));
    });
    out
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// K-means++ seeding: `k` distinct rows, the first uniform, the rest drawn
/// with probability proportional to squared distance from the nearest pick.
pub fn kmeanspp_init(h: ArrayView2<f64>, k: usize, seed: u64) -> Result<Array2<f64>> {
    let n = h.nrows();
    if k == 0 {
        return Err(Error::Config("cluster count must be at least 1".into()));
    }
    if n < k {
        return Err(Error::TooFewRows { rows: n, k });
    }
    let h = h.as_standard_layout();
    let row = |i: usize| h.row(i).to_slice().expect("standard layout");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut picked = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    picked.push(first);
    taken[first] = true;
    let mut nearest: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| squared_distance(row(i), row(first)))
        .collect();

    while picked.len() < k {
        let total: f64 = nearest
            .iter()
            .zip(&taken)
            .filter(|(_, &t)| !t)
            .map(|(d, _)| *d)
            .sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut cum = 0.0;
            let mut choice = None;
            let mut last_positive = None;
            for i in 0..n {
                if taken[i] || nearest[i] <= 0.0 {
                    continue;
                }
                cum += nearest[i];
                last_positive = Some(i);
                if cum > target {
                    choice = Some(i);
                    break;
                }
            }
            choice.or(last_positive).expect("positive total implies a candidate")
        } else {
            // Every remaining row duplicates a pick; take one uniformly.
            let remaining = n - picked.len();
            let nth = rng.random_range(0..remaining);
            (0..n).filter(|&i| !taken[i]).nth(nth).expect("remaining > nth")
        };
        picked.push(next);
        taken[next] = true;
        let new_row = row(next);
        nearest
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, d)| *d = d.min(squared_distance(row(i), new_row)));
    }

    let d = h.ncols();
    let mut centroids = Array2::zeros((k, d));
    for (c, &i) in picked.iter().enumerate() {
        centroids.row_mut(c).assign(&h.row(i));
    }
    Ok(centroids)
}

/// `|V| x K` cosine similarities, `h·μ / (‖h‖‖μ‖ + 1e-10)`.
pub fn cosine_similarities(h: ArrayView2<f64>, centroids: ArrayView2<f64>) -> Array2<f64> {
    let k = centroids.nrows();
    let c_norms: Vec<f64> = centroids.rows().into_iter().map(|c| c.dot(&c).sqrt()).collect();
    let mut out = Array2::zeros((h.nrows(), k));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(h.axis_iter(Axis(0)))
        .for_each(|(mut sims, hv)| {
            let hn = hv.dot(&hv).sqrt();
            for (j, c) in centroids.rows().into_iter().enumerate() {
                sims[j] = hv.dot(&c) / (hn * c_norms[j] + NORM_EPS);
            }
        });
    out
}

/// Row-wise softmax of `β · sims`, shifted by the row maximum.
pub fn soft_assign(sims: ArrayView2<f64>, beta: f64) -> Array2<f64> {
    let mut r = sims.to_owned();
    r.axis_iter_mut(Axis(0)).into_par_iter().for_each(|mut row| {
        softmax_in_place(row.as_slice_mut().expect("owned rows are contiguous"), beta);
    });
    r
}

fn softmax_in_place(row: &mut [f64], beta: f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for x in row.iter_mut() {
        *x = (beta * (*x - max)).exp();
    }
    let total: f64 = row.iter().sum();
    for x in row.iter_mut() {
        *x /= total;
    }
}

/// One assignment/update round: responsibilities of every row against
/// `centroids`, then their weighted means projected to unit length.
/// Returns the new centroids and the total responsibility of each cluster.
fn update_centroids(h: ArrayView2<f64>, centroids: ArrayView2<f64>, beta: f64) -> (Array2<f64>, Vec<f64>) {
    let (n, d) = h.dim();
    let k = centroids.nrows();
    let c_norms: Vec<f64> = centroids.rows().into_iter().map(|c| c.dot(&c).sqrt()).collect();
    let partials: Vec<(Array2<f64>, Vec<f64>)> = (0..n.div_ceil(REDUCE_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut sum = Array2::<f64>::zeros((k, d));
            let mut mass = vec![0.0; k];
            let mut r = vec![0.0; k];
            for v in c * REDUCE_CHUNK..((c + 1) * REDUCE_CHUNK).min(n) {
                let hv = h.row(v);
                let hn = hv.dot(&hv).sqrt();
                for (j, cj) in centroids.rows().into_iter().enumerate() {
                    r[j] = hv.dot(&cj) / (hn * c_norms[j] + NORM_EPS);
                }
                softmax_in_place(&mut r, beta);
                for j in 0..k {
                    mass[j] += r[j];
                    sum.row_mut(j).scaled_add(r[j], &hv);
                }
            }
            (sum, mass)
        })
        .collect();

    let mut sum = Array2::<f64>::zeros((k, d));
    let mut mass = vec![0.0; k];
    for (s, m) in &partials {
        sum += s;
        for (acc, x) in mass.iter_mut().zip(m) {
            *acc += x;
        }
    }
    for (mut row, &m) in sum.axis_iter_mut(Axis(0)).zip(&mass) {
        row.mapv_inplace(|x| x / (m + NORM_EPS));
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|x| x / norm);
        }
    }
    (sum, mass)
}

/// Moves centroid `dead` onto the row farthest from its nearest live centroid.
fn reseed(h: ArrayView2<f64>, centroids: &mut Array2<f64>, live: &[bool], dead: usize) {
    let live_rows: Vec<usize> = (0..centroids.nrows()).filter(|&j| live[j]).collect();
    let far = h
        .axis_iter(Axis(0))
        .into_par_iter()
        .enumerate()
        .map(|(v, hv)| {
            let hv = hv.to_slice().expect("standard layout");
            let nearest = live_rows
                .iter()
                .map(|&j| squared_distance(hv, centroids.row(j).to_slice().unwrap()))
                .fold(f64::INFINITY, f64::min);
            (v, nearest)
        })
        // ties resolve to the lowest row index
        .reduce(
            || (usize::MAX, f64::NEG_INFINITY),
            |a, b| if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a },
        );
    let mut row = h.row(far.0).to_owned();
    let norm = l2_norm(row.as_slice().unwrap());
    if norm > 0.0 {
        row.mapv_inplace(|x| x / norm);
    }
    centroids.row_mut(dead).assign(&row);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftKMeansParams {
    pub k: usize,
    /// Inverse temperature.
    pub beta: f64,
    /// Assignment/update rounds.
    pub iters: usize,
}

impl SoftKMeansParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("cluster count must be at least 1".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if self.iters == 0 {
            return Err(Error::Config("k-means iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SoftKMeans {
    /// `|V| x K` responsibilities computed against `centroids`.
    pub assignment: Array2<f64>,
    /// `K x D` unit-norm centroids.
    pub centroids: Array2<f64>,
    /// `|V| x K` cosine similarities behind `assignment`.
    pub similarities: Array2<f64>,
    /// Number of dead-centroid re-seeds performed.
    pub reseeded: usize,
}

pub fn soft_kmeans(h_norm: ArrayView2<f64>, params: &SoftKMeansParams, seed: u64) -> Result<SoftKMeans> {
    params.validate()?;
    let h = h_norm.as_standard_layout();
    let h = h.view();
    let mut centroids = kmeanspp_init(h, params.k, seed)?;
    let mut reseeded = 0;

    for _ in 0..params.iters {
        let (updated, mass) = update_centroids(h, centroids.view(), params.beta);
        centroids = updated;
        let mut live: Vec<bool> = mass.iter().map(|&m| m >= DEAD_CLUSTER_MASS).collect();
        for j in 0..params.k {
            if !live[j] {
                reseed(h, &mut centroids, &live, j);
                live[j] = true;
                reseeded += 1;
            }
        }
    }

    let similarities = cosine_similarities(h, centroids.view());
    let assignment = soft_assign(similarities.view(), params.beta);
    Ok(SoftKMeans {
        assignment,
        centroids,
        similarities,
        reseeded,
    })
}

/// Min-max normalized cosine distances, rescaled to sum to one per row.
pub fn subx_from_similarities(sims: ArrayView2<f64>) -> Array2<f64> {
    let k = sims.ncols();
    let mut out = Array2::zeros(sims.dim());
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(sims.axis_iter(Axis(0)))
        .for_each(|(mut x, s)| {
            let val = s.mapv(|c| 1.0 - c);
            let hi = val.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = val.iter().copied().fold(f64::INFINITY, f64::min);
            if !(hi - lo >= DEGENERATE_SPREAD) {
                x.fill(1.0 / k as f64);
                return;
            }
            x.assign(&val.mapv(|v| (hi - v) / (hi - lo + NORM_EPS)));
            let total = x.sum();
            x.mapv_inplace(|v| v / (total + NORM_EPS));
        });
    out
}

/// `|V| x K` structural embedding from distances to `centroids`.
pub fn compute_subx(h_norm: ArrayView2<f64>, centroids: ArrayView2<f64>) -> Array2<f64> {
    subx_from_similarities(cosine_similarities(h_norm, centroids).view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn normalize_rows_cases() {
        let h = array![[3.0, 4.0], [0.0, 0.0], [0.6, 0.8]];
        let n = normalize_rows(h.view());
        assert!(close(n.row(0).as_slice().unwrap(), &[0.6, 0.8], 1e-9));
        assert_eq!(n.row(1).as_slice().unwrap(), &[0.0, 0.0]);
        assert!(close(n.row(2).as_slice().unwrap(), &[0.6, 0.8], 1e-9));
    }

    #[test]
    fn kmeanspp_k1_picks_a_row() {
        let h = array![[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]];
        let c = kmeanspp_init(h.view(), 1, 3).unwrap();
        assert!(h.rows().into_iter().any(|r| r == c.row(0)));
    }

    #[test]
    fn kmeanspp_k_equals_n_is_a_permutation() {
        let h = array![[1.0, 0.0], [0.0, 1.0], [0.6, 0.8], [1.0, 0.0]];
        for seed in 0..20 {
            let c = kmeanspp_init(h.view(), 4, seed).unwrap();
            let mut seen = vec![false; 4];
            for cr in c.rows() {
                let i = (0..4).find(|&i| !seen[i] && h.row(i) == cr).expect("row from input");
                seen[i] = true;
            }
        }
    }

    #[test]
    fn kmeanspp_is_deterministic_and_checks_rows() {
        let h = Array2::from_shape_fn((30, 5), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        assert_eq!(kmeanspp_init(h.view(), 4, 42).unwrap(), kmeanspp_init(h.view(), 4, 42).unwrap());
        assert!(matches!(kmeanspp_init(h.view(), 31, 0), Err(Error::TooFewRows { rows: 30, k: 31 })));
    }

    #[test]
    fn softmax_cases() {
        let r = soft_assign(array![[0.3, 0.3, 0.3]].view(), 10.0);
        assert!(close(r.row(0).as_slice().unwrap(), &[1.0 / 3.0; 3], 1e-15));

        let r = soft_assign(array![[0.9, 0.5]].view(), 10.0);
        let sigma4 = 1.0 / (1.0 + (-4.0f64).exp());
        assert!((r[[0, 0]] - sigma4).abs() < 1e-12);
        assert!((r[[0, 0]] - 0.98201).abs() < 1e-5);
        assert!((r[[0, 1]] - 0.01799).abs() < 1e-5);

        // no overflow at huge beta
        let r = soft_assign(array![[0.9, 0.5, 0.1]].view(), 1e6);
        assert!(close(r.row(0).as_slice().unwrap(), &[1.0, 0.0, 0.0], 1e-12));
    }

    #[test]
    fn subx_cases() {
        let s = subx_from_similarities(array![[1.0, 0.0]].view());
        assert!(close(s.row(0).as_slice().unwrap(), &[1.0, 0.0], 1e-9));

        let s = subx_from_similarities(array![[0.4, 0.4, 0.4, 0.4]].view());
        assert_eq!(s.row(0).as_slice().unwrap(), &[0.25; 4]);

        let s = subx_from_similarities(array![[0.8, 0.5, 0.2]].view());
        assert!(close(s.row(0).as_slice().unwrap(), &[2.0 / 3.0, 1.0 / 3.0, 0.0], 1e-9));

        // K = 1 is always degenerate
        let s = subx_from_similarities(array![[0.7], [-0.2]].view());
        assert_eq!(s.column(0).to_vec(), vec![1.0, 1.0]);
    }

    #[test]
    fn zero_rows_have_zero_similarity() {
        let sims = cosine_similarities(array![[0.0, 0.0]].view(), array![[1.0, 0.0], [0.0, 1.0]].view());
        assert_eq!(sims.row(0).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn dead_centroid_is_reseeded() {
        // Two tight groups; seeding both centroids in the same group and using
        // a huge beta starves one of them.
        let mut h = Array2::zeros((6, 2));
        for i in 0..3 {
            h[[i, 0]] = 1.0;
            h[[i + 3, 1]] = 1.0;
        }
        let params = SoftKMeansParams { k: 2, beta: 1e6, iters: 3 };
        for seed in 0..10 {
            let out = soft_kmeans(h.view(), &params, seed).unwrap();
            let c0 = out.centroids.row(0).to_vec();
            let c1 = out.centroids.row(1).to_vec();
            assert_ne!(c0, c1, "seed {seed}");
        }
    }

    fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
        prop::collection::vec(-1.0f64..1.0, rows * cols)
            .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
    }

    proptest! {
        #[test]
        fn assignments_are_stochastic(h in matrix(12, 6), k in 1usize..5, beta in 0.1f64..50.0, seed in 0u64..1000) {
            let hn = normalize_rows(h.view());
            let out = soft_kmeans(hn.view(), &SoftKMeansParams { k, beta, iters: 4 }, seed).unwrap();
            for row in out.assignment.rows() {
                prop_assert!((row.sum() - 1.0).abs() <= 1e-9);
                prop_assert!(row.iter().all(|&r| r > 0.0));
            }
            for c in out.centroids.rows() {
                prop_assert!((c.dot(&c).sqrt() - 1.0).abs() <= 1e-9);
            }
            let subx = compute_subx(hn.view(), out.centroids.view());
            for (row, sims) in subx.rows().into_iter().zip(out.similarities.rows()) {
                prop_assert!((row.sum() - 1.0).abs() <= 1e-6);
                let best = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for j in 0..k {
                    if sims[j] == best {
                        prop_assert_eq!(row[j], top);
                    }
                }
            }
        }

        #[test]
        fn sharper_beta_never_softens(sims in matrix(5, 4), b1 in 0.1f64..20.0, extra in 0.0f64..20.0) {
            let lo = soft_assign(sims.view(), b1);
            let hi = soft_assign(sims.view(), b1 + extra);
            for (a, b) in lo.rows().into_iter().zip(hi.rows()) {
                let ma = a.iter().copied().fold(0.0, f64::max);
                let mb = b.iter().copied().fold(0.0, f64::max);
                prop_assert!(mb >= ma - 1e-12);
            }
        }
    }
}
