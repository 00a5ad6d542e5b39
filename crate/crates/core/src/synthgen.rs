//! Seeded generator for labeled transaction graphs with bursty phishing accounts.
//!
//! Normal accounts send a Poisson number of transactions to uniformly chosen
//! normal partners at uniform times. Each phishing account collects
//! `burst_fanin` transfers from distinct normal accounts inside one short
//! window, then forwards one to three transfers to a shared sink within the
//! next window.

use std::io::{self, Write};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, Label, LabelSet, NodeId, TemporalGraph, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_normal: usize,
    pub n_phisher: usize,
    /// Length of the observation period in seconds.
    pub time_span: u64,
    /// Mean number of transactions sent by each normal account.
    pub normal_rate: f64,
    /// Burst length in seconds; at most `time_span / 100`.
    pub burst_window: u64,
    /// Distinct victims per phishing account.
    pub burst_fanin: usize,
    /// Timestamp of the start of the period.
    pub start_time: u64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_normal: 1900,
            n_phisher: 100,
            time_span: 30 * 24 * 3600,
            normal_rate: 5.0,
            burst_window: 3600,
            burst_fanin: 30,
            start_time: 1_600_000_000,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.time_span == 0 {
            return Err(Error::Config("time span must be positive".into()));
        }
        if !(self.normal_rate >= 0.0) || !self.normal_rate.is_finite() {
            return Err(Error::Config(format!("normal rate must be >= 0, got {}", self.normal_rate)));
        }
        if self.burst_window > self.time_span / 100 {
            return Err(Error::Config(format!(
                "burst window {} exceeds 1% of the time span {}",
                self.burst_window, self.time_span
            )));
        }
        if self.n_phisher > 0 {
            if self.burst_window == 0 {
                return Err(Error::Config("burst window must be positive".into()));
            }
            if self.burst_fanin > self.n_normal {
                return Err(Error::Config(format!(
                    "burst fan-in {} exceeds the {} normal accounts",
                    self.burst_fanin, self.n_normal
                )));
            }
        }
        Ok(())
    }
}

/// Edge counts by origin, kept alongside the generated graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SynthReport {
    pub normal_edges: usize,
    pub burst_edges: usize,
    pub cashout_edges: usize,
}

impl SynthReport {
    pub fn total(&self) -> usize {
        self.normal_edges + self.burst_edges + self.cashout_edges
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub graph: TemporalGraph,
    pub labels: LabelSet,
    pub report: SynthReport,
    /// Edges in emission (chronological) order; ingesting them reproduces `graph` with the same ids.
    pub rows: Vec<(NodeId, NodeId, Timestamp)>,
}

impl SynthOutput {
    pub fn write_edges_csv<W: Write>(&self, writer: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["from", "to", "timestamp"])?;
        for &(u, v, t) in &self.rows {
            w.write_record([self.graph.key(u), self.graph.key(v), &t.0.to_string()])?;
        }
        w.flush()
    }

    pub fn write_labels_csv<W: Write>(&self, writer: W) -> io::Result<()> {
        self.labels.write_csv(&self.graph, writer)
    }
}

fn normal_key(i: usize) -> String {
    format!("n{i:06}")
}

fn phisher_key(i: usize) -> String {
    format!("p{i:05}")
}

const SINK_KEY: &str = "sink";

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut raw: Vec<(String, String, u64)> = Vec::new();
    let mut report = SynthReport::default();

    if cfg.n_normal >= 2 && cfg.normal_rate > 0.0 {
        let poisson = Poisson::new(cfg.normal_rate)
            .map_err(|e| Error::Config(format!("normal rate: {e}")))?;
        for i in 0..cfg.n_normal {
            let count = poisson.sample(&mut rng) as usize;
            for _ in 0..count {
                let mut j = rng.random_range(0..cfg.n_normal - 1);
                if j >= i {
                    j += 1;
                }
                let t = rng.random_range(0..cfg.time_span);
                raw.push((normal_key(i), normal_key(j), t));
                report.normal_edges += 1;
            }
        }
    }

    let bw = cfg.burst_window;
    for p in 0..cfg.n_phisher {
        let start = rng.random_range(0..=cfg.time_span - 2 * bw);
        for victim in index::sample(&mut rng, cfg.n_normal, cfg.burst_fanin) {
            let t = start + rng.random_range(0..bw);
            raw.push((normal_key(victim), phisher_key(p), t));
            report.burst_edges += 1;
        }
        for _ in 0..rng.random_range(1..=3) {
            let t = start + bw + rng.random_range(0..bw);
            raw.push((phisher_key(p), SINK_KEY.to_owned(), t));
            report.cashout_edges += 1;
        }
    }

    raw.sort_by_key(|r| r.2);
    let mut builder = GraphBuilder::new();
    let mut rows = Vec::with_capacity(raw.len());
    for (u, v, t) in &raw {
        let t = Timestamp(cfg.start_time + t);
        let (a, b) = (builder.node(u), builder.node(v));
        builder.add_edge(u, v, t);
        rows.push((a, b, t));
    }
    let graph = builder.build();

    let mut labels = LabelSet::new();
    for v in graph.nodes() {
        let label = if graph.key(v).starts_with('p') { Label::Malicious } else { Label::Normal };
        labels.insert(v, label);
    }

    Ok(SynthOutput {
        graph,
        labels,
        report,
        rows,
    })
}
