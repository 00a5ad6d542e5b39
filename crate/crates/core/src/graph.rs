//! Directed temporal transaction graphs.
//!
//! Edges are ingested from a `from,to,timestamp[,...]` CSV and stored as one
//! timeline per node: a list of `(t, in-neighbors, out-neighbors)` entries in
//! descending timestamp order. Node keys (account addresses) are mapped to
//! dense ids in order of first appearance.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense node index in `0..n_nodes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Seconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp(pub u64);

impl Timestamp {
    /// Signed difference `self - earlier` in seconds.
    #[inline]
    pub fn seconds_since(self, earlier: Timestamp) -> f64 {
        self.0 as f64 - earlier.0 as f64
    }
}

/// All transactions touching one node at one second.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimelineEntry {
    pub t: Timestamp,
    /// Senders of transactions received at `t`, with multiplicity, ascending by id.
    pub in_neighbors: Vec<NodeId>,
    /// Receivers of transactions sent at `t`, with multiplicity, ascending by id.
    pub out_neighbors: Vec<NodeId>,
}

/// Immutable directed temporal graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalGraph {
    keys: Vec<String>,
    lookup: HashMap<String, NodeId>,
    /// Per node, sorted by descending `t`.
    timelines: Vec<Vec<TimelineEntry>>,
    n_edges: usize,
}

impl TemporalGraph {
    pub fn empty() -> Self {
        GraphBuilder::new().build()
    }

    pub fn n_nodes(&self) -> usize {
        self.keys.len()
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn key(&self, id: NodeId) -> &str {
        &self.keys[id.index()]
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn id(&self, key: &str) -> Option<NodeId> {
        self.lookup.get(key).copied()
    }

    /// Timeline of `id`, newest entry first.
    pub fn timeline(&self, id: NodeId) -> &[TimelineEntry] {
        &self.timelines[id.index()]
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = NodeId> + '_ {
        (0..self.keys.len() as u32).map(NodeId)
    }

    /// Latest timestamp in the graph, `None` when there are no edges.
    pub fn max_timestamp(&self) -> Option<Timestamp> {
        self.timelines
            .iter()
            .filter_map(|tl| tl.first().map(|e| e.t))
            .max()
    }

    /// Every edge as `(from, to, t)`, grouped by source id and newest first
    /// within a source.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId, Timestamp)> + '_ {
        self.timelines.iter().enumerate().flat_map(|(u, tl)| {
            tl.iter().flat_map(move |e| {
                e.out_neighbors
                    .iter()
                    .map(move |&v| (NodeId(u as u32), v, e.t))
            })
        })
    }

    /// Key-level view that ignores id assignment, for comparing graphs
    /// ingested from differently ordered rows.
    pub fn canonical_form(&self) -> BTreeMap<String, Vec<(u64, Vec<String>, Vec<String>)>> {
        self.nodes()
            .map(|v| {
                let tl = self
                    .timeline(v)
                    .iter()
                    .map(|e| {
                        let mut ins: Vec<String> =
                            e.in_neighbors.iter().map(|&u| self.key(u).to_owned()).collect();
                        let mut outs: Vec<String> =
                            e.out_neighbors.iter().map(|&u| self.key(u).to_owned()).collect();
                        ins.sort();
                        outs.sort();
                        (e.t.0, ins, outs)
                    })
                    .collect();
                (self.key(v).to_owned(), tl)
            })
            .collect()
    }

    pub fn write_edges_csv<W: Write>(&self, writer: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["from", "to", "timestamp"])?;
        for (u, v, t) in self.edges() {
            w.write_record([self.key(u), self.key(v), &t.0.to_string()])?;
        }
        w.flush()
    }
}

/// Accumulates edges, then sorts them into per-node timelines.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    keys: Vec<String>,
    lookup: HashMap<String, NodeId>,
    edges: Vec<(NodeId, NodeId, Timestamp)>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Id for `key`, registering it if unseen.
    pub fn node(&mut self, key: &str) -> NodeId {
        if let Some(&id) = self.lookup.get(key) {
            return id;
        }
        let id = NodeId(self.keys.len() as u32);
        self.keys.push(key.to_owned());
        self.lookup.insert(key.to_owned(), id);
        id
    }

    pub fn add_edge(&mut self, from: &str, to: &str, t: Timestamp) {
        let u = self.node(from);
        let v = self.node(to);
        self.edges.push((u, v, t));
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn build(self) -> TemporalGraph {
        let n = self.keys.len();
        // (t, is_out, neighbor) events per node
        let mut events: Vec<Vec<(Timestamp, bool, NodeId)>> = vec![Vec::new(); n];
        for &(u, v, t) in &self.edges {
            events[u.index()].push((t, true, v));
            events[v.index()].push((t, false, u));
        }

        let timelines = events
            .into_iter()
            .map(|mut ev| {
                ev.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
                let mut timeline: Vec<TimelineEntry> = Vec::new();
                for (t, is_out, nb) in ev {
                    let entry = match timeline.last_mut() {
                        Some(e) if e.t == t => e,
                        _ => {
                            timeline.push(TimelineEntry {
                                t,
                                in_neighbors: Vec::new(),
                                out_neighbors: Vec::new(),
                            });
                            timeline.last_mut().unwrap()
                        }
                    };
                    if is_out {
                        entry.out_neighbors.push(nb);
                    } else {
                        entry.in_neighbors.push(nb);
                    }
                }
                timeline
            })
            .collect();

        TemporalGraph {
            keys: self.keys,
            lookup: self.lookup,
            timelines,
            n_edges: self.edges.len(),
        }
    }
}

/// Header handling for CSV inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeaderMode {
    /// Treat row 1 as a header when its numeric column does not parse as a number.
    #[default]
    Auto,
    Present,
    Absent,
}

/// Column layout of an edge CSV. Columns beyond these are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeSchema {
    pub from: usize,
    pub to: usize,
    pub timestamp: usize,
    pub header: HeaderMode,
}

impl Default for EdgeSchema {
    fn default() -> Self {
        Self {
            from: 0,
            to: 1,
            timestamp: 2,
            header: HeaderMode::Auto,
        }
    }
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader)
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn csv_error(err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse {
        line,
        message: err.to_string(),
    }
}

fn is_header(record: &csv::StringRecord, numeric_col: usize, mode: HeaderMode) -> bool {
    match mode {
        HeaderMode::Present => true,
        HeaderMode::Absent => false,
        HeaderMode::Auto => record
            .get(numeric_col)
            .map(|f| f.parse::<f64>().is_err())
            .unwrap_or(false),
    }
}

pub fn parse_timestamp(field: &str, line: u64) -> Result<Timestamp> {
    if let Ok(t) = field.parse::<u64>() {
        return Ok(Timestamp(t));
    }
    let message = if field.parse::<i64>().is_ok() {
        format!("negative timestamp {field:?}")
    } else if field.parse::<f64>().is_ok() {
        format!("timestamp {field:?} is not a whole number of seconds")
    } else {
        format!("unparsable timestamp {field:?}")
    };
    Err(Error::Parse { line, message })
}

/// Parse an edge list. Empty input yields an empty graph.
pub fn read_edges<R: Read>(reader: R, schema: &EdgeSchema) -> Result<TemporalGraph> {
    let width = schema.from.max(schema.to).max(schema.timestamp) + 1;
    let mut builder = GraphBuilder::new();
    let mut first = true;
    for record in csv_reader(reader).records() {
        let record = record.map_err(csv_error)?;
        if std::mem::take(&mut first) && is_header(&record, schema.timestamp, schema.header) {
            continue;
        }
        let line = record_line(&record);
        if record.len() < width {
            return Err(Error::Parse {
                line,
                message: format!("expected at least {width} columns, found {}", record.len()),
            });
        }
        let t = parse_timestamp(&record[schema.timestamp], line)?;
        builder.add_edge(&record[schema.from], &record[schema.to], t);
    }
    Ok(builder.build())
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &EdgeSchema) -> Result<TemporalGraph> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_edges(io::BufReader::new(file), schema)
}

/// Binary account label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Normal,
    Malicious,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Malicious
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Malicious => 1,
        }
    }
}

/// Labels keyed by node id; every labeled id exists in the graph it was read against.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelSet {
    labels: BTreeMap<NodeId, Label>,
}

impl LabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: NodeId, label: Label) -> Option<Label> {
        self.labels.insert(id, label)
    }

    pub fn get(&self, id: NodeId) -> Option<Label> {
        self.labels.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, Label)> + '_ {
        self.labels.iter().map(|(&k, &v)| (k, v))
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.values().filter(|&&l| l == label).count()
    }

    pub fn write_csv<W: Write>(&self, graph: &TemporalGraph, writer: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["account", "label"])?;
        for (id, label) in self.iter() {
            w.write_record([graph.key(id), &label.as_u8().to_string()])?;
        }
        w.flush()
    }
}

/// Result of reading a label file against a graph.
#[derive(Debug, Clone, Default)]
pub struct LabelIngest {
    pub labels: LabelSet,
    /// Accounts listed in the file but absent from the graph.
    pub skipped: Vec<String>,
}

pub fn read_labels<R: Read>(reader: R, graph: &TemporalGraph) -> Result<LabelIngest> {
    let mut out = LabelIngest::default();
    let mut first = true;
    for record in csv_reader(reader).records() {
        let record = record.map_err(csv_error)?;
        if std::mem::take(&mut first) && is_header(&record, 1, HeaderMode::Auto) {
            continue;
        }
        let line = record_line(&record);
        if record.len() < 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected account,label but found {} column(s)", record.len()),
            });
        }
        let label = match &record[1] {
            "0" => Label::Normal,
            "1" => Label::Malicious,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("label must be 0 or 1, got {other:?}"),
                })
            }
        };
        let key = &record[0];
        let Some(id) = graph.id(key) else {
            log::warn!("line {line}: account {key} is not in the graph, skipping");
            out.skipped.push(key.to_owned());
            continue;
        };
        if let Some(prev) = out.labels.insert(id, label) {
            if prev != label {
                return Err(Error::Parse {
                    line,
                    message: format!("account {key} has conflicting labels"),
                });
            }
        }
    }
    Ok(out)
}

pub fn ingest_labels(path: impl AsRef<Path>, graph: &TemporalGraph) -> Result<LabelIngest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_labels(io::BufReader::new(file), graph)
}

/// How transactions between two accounts turn into one undirected edge weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum WeightMode {
    /// Number of transactions in either direction.
    #[default]
    Count,
    /// Sum of `exp(-(t_max - t) / alpha)` over those transactions.
    Recency { alpha: f64 },
}

/// Symmetric, nonnegative pair weights stored once per unordered pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeWeights {
    n: usize,
    /// `(u, v, w)` with `u < v`, sorted.
    pairs: Vec<(usize, usize, f64)>,
}

impl EdgeWeights {
    /// Builds from arbitrary `(u, v, w)` triples; reversed duplicates are summed.
    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut acc: HashMap<(usize, usize), f64> = HashMap::new();
        let mut order = Vec::new();
        for (u, v, w) in pairs {
            if u >= n || v >= n {
                return Err(Error::Dimension(format!("pair ({u}, {v}) outside {n} nodes")));
            }
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidWeight { u, v, weight: w });
            }
            if u == v {
                continue;
            }
            let key = (u.min(v), u.max(v));
            match acc.entry(key) {
                Entry::Occupied(mut e) => *e.get_mut() += w,
                Entry::Vacant(e) => {
                    e.insert(w);
                    order.push(key);
                }
            }
        }
        order.sort_unstable();
        let pairs = order.into_iter().map(|k| (k.0, k.1, acc[&k])).collect();
        Ok(Self { n, pairs })
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn pairs(&self) -> &[(usize, usize, f64)] {
        &self.pairs
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        let key = (u.min(v), u.max(v));
        self.pairs
            .binary_search_by(|p| (p.0, p.1).cmp(&key))
            .map(|i| self.pairs[i].2)
            .unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.pairs.iter().map(|p| p.2).sum()
    }
}

/// Undirected weights between distinct nodes; self-loops are dropped.
pub fn adjacency_weights(graph: &TemporalGraph, mode: WeightMode) -> Result<EdgeWeights> {
    let t_max = graph.max_timestamp().unwrap_or(Timestamp(0));
    if let WeightMode::Recency { alpha } = mode {
        if !(alpha > 0.0) {
            return Err(Error::Config(format!("recency alpha must be positive, got {alpha}")));
        }
    }
    let triples = graph.edges().map(|(u, v, t)| {
        let w = match mode {
            WeightMode::Count => 1.0,
            WeightMode::Recency { alpha } => (-t_max.seconds_since(t) / alpha).exp(),
        };
        (u.index(), v.index(), w)
    });
    EdgeWeights::from_pairs(graph.n_nodes(), triples)
}
