//! The iterative embedding loop.
//!
//! Starting from a uniform `Z`, each round aggregates `Z` into `H`, clusters
//! the normalized rows of `H`, refines the cluster-distance embedding with
//! the Laplacian solve, and aggregates again. The loop stops as soon as the
//! number of distinct embedding rows fails to grow, keeping the previous `H`.

use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::time::{Duration, Instant};

use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, embedding_width, uniform_input, AggregationOptions, EmbeddingMatrix, Recurrence};
use crate::clustering::{normalize_rows, soft_kmeans, subx_from_similarities, SoftKMeansParams};
use crate::error::{Error, Result};
use crate::graph::{adjacency_weights, TemporalGraph, WeightMode};
use crate::laplacian::{self, LaplacianParams};

/// Decimal places kept when deciding whether two embedding rows are equal.
pub const UNIQUE_ROUNDING_DECIMALS: i32 = 6;

/// Components switched off for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ablations {
    /// Zero the summed neighbor vector `s_v`.
    pub no_neighbor: bool,
    /// Zero the flattened temporal structure matrix.
    pub no_temporal: bool,
    /// Feed `subx` straight into the next aggregation.
    pub no_laplacian: bool,
}

impl Ablations {
    pub fn none() -> Self {
        Self::default()
    }

    /// Zeroes the ablated column blocks of `h` (`k` input columns).
    pub fn apply(&self, mut h: ArrayViewMut2<f64>, k: usize) {
        let split = 4 * k * k;
        if self.no_temporal {
            h.slice_mut(s![.., ..split]).fill(0.0);
        }
        if self.no_neighbor {
            h.slice_mut(s![.., split..]).fill(0.0);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Cluster count `K`.
    pub k: usize,
    /// Temporal decay in seconds.
    pub alpha: f64,
    /// Inverse temperature of the soft assignment.
    pub beta: f64,
    /// Maximum outer iterations `d`.
    pub max_iters: usize,
    /// Soft K-means rounds per outer iteration.
    pub kmeans_iters: usize,
    pub lambda: f64,
    pub mu: f64,
    pub seed: u64,
    pub recurrence: Recurrence,
    pub ablations: Ablations,
    pub weight_mode: WeightMode,
    pub cg_tol: f64,
    pub cg_max_iters: Option<usize>,
    pub jacobi: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 10,
            alpha: 1.0,
            beta: 10.0,
            max_iters: 10,
            kmeans_iters: 10,
            lambda: 1.0,
            mu: 1.0,
            seed: 42,
            recurrence: Recurrence::Decayed,
            ablations: Ablations::none(),
            weight_mode: WeightMode::Count,
            cg_tol: 1e-6,
            cg_max_iters: None,
            jacobi: false,
        }
    }
}

impl PipelineConfig {
    pub fn aggregation(&self) -> AggregationOptions {
        AggregationOptions {
            alpha: self.alpha,
            recurrence: self.recurrence,
        }
    }

    pub fn kmeans(&self) -> SoftKMeansParams {
        SoftKMeansParams {
            k: self.k,
            beta: self.beta,
            iters: self.kmeans_iters,
        }
    }

    pub fn laplacian(&self) -> LaplacianParams {
        LaplacianParams {
            lambda: self.lambda,
            mu: self.mu,
            cg_tol: self.cg_tol,
            cg_max_iters: self.cg_max_iters,
            jacobi: self.jacobi,
        }
    }

    /// Seed for the clustering stage of outer iteration `i` (1-based).
    pub fn iteration_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_add(i as u64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("cluster count must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max iterations must be at least 1".into()));
        }
        self.aggregation().validate()?;
        self.kmeans().validate()?;
        self.laplacian().validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTiming {
    pub cluster: Duration,
    pub optimize: Duration,
    pub aggregate: Duration,
}

/// Counters and timings gathered during a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineStats {
    /// Laplacian systems assembled and solved.
    pub laplacian_solves: usize,
    /// CG iterations per column, per outer iteration that ran the solve.
    pub cg_iterations: Vec<Vec<usize>>,
    /// Dead-centroid re-seeds per outer iteration.
    pub reseeded: Vec<usize>,
    pub initial_aggregate: Duration,
    pub iterations: Vec<IterationTiming>,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub h: EmbeddingMatrix,
    pub iterations_run: usize,
    /// Distinct-row count of the initial `H` and of every candidate `H_new`.
    pub unique_counts: Vec<usize>,
    pub stats: PipelineStats,
}

impl PipelineResult {
    /// Counts of the embeddings that were kept: all but a rejected final candidate.
    pub fn adopted_counts(&self) -> &[usize] {
        let n = self.unique_counts.len();
        if n >= 2 && self.unique_counts[n - 2] >= self.unique_counts[n - 1] {
            &self.unique_counts[..n - 1]
        } else {
            &self.unique_counts
        }
    }
}

fn rounded(x: f64) -> i64 {
    (x * 10f64.powi(UNIQUE_ROUNDING_DECIMALS)).round() as i64
}

/// Number of distinct rows after rounding every entry to six decimals.
pub fn get_number(h: ArrayView2<f64>) -> usize {
    let mut buckets: HashMap<u64, Vec<usize>> = HashMap::new();
    let mut distinct = 0;
    for (v, row) in h.axis_iter(Axis(0)).enumerate() {
        let mut hasher = DefaultHasher::new();
        for &x in row {
            rounded(x).hash(&mut hasher);
        }
        let reps = buckets.entry(hasher.finish()).or_default();
        let seen = reps.iter().any(|&u| {
            h.row(u).iter().zip(row).all(|(&a, &b)| rounded(a) == rounded(b))
        });
        if !seen {
            reps.push(v);
            distinct += 1;
        }
    }
    distinct
}

fn aggregate_with(graph: &TemporalGraph, z: ArrayView2<f64>, config: &PipelineConfig) -> Result<EmbeddingMatrix> {
    let mut h = aggregate(graph, z, &config.aggregation())?;
    config.ablations.apply(h.view_mut(), config.k);
    Ok(h)
}

pub fn run(graph: &TemporalGraph, config: &PipelineConfig) -> Result<PipelineResult> {
    config.validate()?;
    let n = graph.n_nodes();
    let mut stats = PipelineStats::default();
    if n == 0 {
        return Ok(PipelineResult {
            h: Array2::zeros((0, embedding_width(config.k))),
            iterations_run: 0,
            unique_counts: vec![0],
            stats,
        });
    }

    let weights = if config.ablations.no_laplacian {
        None
    } else {
        Some(adjacency_weights(graph, config.weight_mode)?)
    };

    let started = Instant::now();
    let mut h = aggregate_with(graph, uniform_input(n, config.k).view(), config)?;
    stats.initial_aggregate = started.elapsed();
    let mut count = get_number(h.view());
    let mut unique_counts = vec![count];
    let mut iterations_run = 0;
    log::info!("initial aggregation: {count} unique rows ({:.2?})", stats.initial_aggregate);

    for i in 1..=config.max_iters {
        iterations_run = i;
        let mut timing = IterationTiming::default();

        let started = Instant::now();
        let h_norm = normalize_rows(h.view());
        let km = soft_kmeans(h_norm.view(), &config.kmeans(), config.iteration_seed(i))?;
        let subx = subx_from_similarities(km.similarities.view());
        stats.reseeded.push(km.reseeded);
        timing.cluster = started.elapsed();

        let started = Instant::now();
        let z = match &weights {
            None => subx,
            Some(w) => {
                let (z, report) = laplacian::solve(subx.view(), w, km.assignment.view(), &config.laplacian())?;
                stats.laplacian_solves += 1;
                log::debug!("iteration {i}: CG iterations per column {:?}", report.cg_iterations);
                stats.cg_iterations.push(report.cg_iterations);
                z
            }
        };
        timing.optimize = started.elapsed();

        let started = Instant::now();
        let h_new = aggregate_with(graph, z.view(), config)?;
        timing.aggregate = started.elapsed();
        let count_new = get_number(h_new.view());
        unique_counts.push(count_new);
        log::info!(
            "iteration {i}: {count_new} unique rows (cluster {:.2?}, optimize {:.2?}, aggregate {:.2?})",
            timing.cluster,
            timing.optimize,
            timing.aggregate
        );
        stats.iterations.push(timing);

        if count >= count_new {
            break;
        }
        h = h_new;
        count = count_new;
    }

    Ok(PipelineResult {
        h,
        iterations_run,
        unique_counts,
        stats,
    })
}
