//! `ditsgcr` command-line front end: embed, evaluate, synth.

mod manifest;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ditsgcr::aggregation::Recurrence;
use ditsgcr::evaluation::{evaluate, ForestConfig, SplitSpec, DEFAULT_THRESHOLD};
use ditsgcr::graph::{ingest_csv, ingest_labels, EdgeSchema, TemporalGraph, WeightMode};
use ditsgcr::pipeline::{self, Ablations, PipelineConfig, PipelineResult};
use ditsgcr::synthgen::{self, SynthConfig};
use ndarray::ArrayView2;

use crate::manifest::{Manifest, PipelineSummary};

#[derive(Parser, Debug)]
#[command(name = "ditsgcr", version, about = "Temporal graph embeddings for malicious-account detection")]
struct Cli {
    /// Worker threads (default: all cores). Outputs do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute node embeddings for an edge list.
    Embed(EmbedArgs),
    /// Embed, train a random forest on a labeled split, and report test metrics.
    Evaluate(EvaluateArgs),
    /// Generate a labeled synthetic transaction graph.
    Synth(SynthArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum WeightKind {
    Count,
    Recency,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Ablation {
    NoNeighbor,
    NoTemporal,
    NoLaplacian,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    /// Edge CSV: from,to,timestamp[,...] with optional header.
    #[arg(long)]
    input: PathBuf,
    /// Number of clusters K.
    #[arg(long, default_value_t = 10)]
    clusters: usize,
    /// Temporal decay constant in seconds.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Inverse temperature of the soft assignment.
    #[arg(long, default_value_t = 10.0)]
    beta: f64,
    /// Weight of the cluster Laplacian terms.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Weight of the fidelity term.
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 10)]
    kmeans_iters: usize,
    /// Maximum outer iterations.
    #[arg(long, default_value_t = 10)]
    max_iters: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = WeightKind::Count)]
    weight_mode: WeightKind,
    /// Time scale in seconds for `--weight-mode recency`.
    #[arg(long, default_value_t = 86_400.0)]
    recency_scale: f64,
    /// Use the undamped normalization form of the temporal recurrence.
    #[arg(long)]
    literal_recurrence: bool,
    /// Comma-separated components to switch off.
    #[arg(long, value_enum, value_delimiter = ',')]
    ablate: Vec<Ablation>,
    /// Jacobi-preconditioned conjugate gradient.
    #[arg(long)]
    jacobi: bool,
}

impl PipelineArgs {
    fn config(&self) -> PipelineConfig {
        let mut ablations = Ablations::none();
        for a in &self.ablate {
            match a {
                Ablation::NoNeighbor => ablations.no_neighbor = true,
                Ablation::NoTemporal => ablations.no_temporal = true,
                Ablation::NoLaplacian => ablations.no_laplacian = true,
            }
        }
        PipelineConfig {
            k: self.clusters,
            alpha: self.alpha,
            beta: self.beta,
            max_iters: self.max_iters,
            kmeans_iters: self.kmeans_iters,
            lambda: self.lambda,
            mu: self.mu,
            seed: self.seed,
            recurrence: if self.literal_recurrence { Recurrence::Literal } else { Recurrence::Decayed },
            ablations,
            weight_mode: match self.weight_mode {
                WeightKind::Count => WeightMode::Count,
                WeightKind::Recency => WeightMode::Recency { alpha: self.recency_scale },
            },
            jacobi: self.jacobi,
            ..PipelineConfig::default()
        }
    }
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Embedding CSV path (stdout when omitted). The run manifest is written next to it.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Label CSV: account,label with 0 = normal, 1 = malicious.
    #[arg(long)]
    labels: PathBuf,
    /// Positive-vote fraction at or above which a node is called malicious.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
    /// Write ROC points (fpr,tpr,threshold) to this path.
    #[arg(long)]
    emit_roc: Option<PathBuf>,
    /// Write metrics as JSON to this path, with the run manifest next to it.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 1900)]
    normal: usize,
    #[arg(long, default_value_t = 100)]
    phishers: usize,
    /// Mean transactions sent per normal account.
    #[arg(long, default_value_t = 5.0)]
    rate: f64,
    /// Distinct victims per phishing account.
    #[arg(long, default_value_t = 30)]
    fanin: usize,
    /// Observation period in seconds.
    #[arg(long, default_value_t = 30 * 24 * 3600)]
    time_span: u64,
    /// Burst length in seconds.
    #[arg(long, default_value_t = 3600)]
    burst_window: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Directory receiving edges.csv, labels.csv and manifest.json.
    #[arg(long, default_value = ".")]
    output: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DITSGCR_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    match cli.command {
        Command::Embed(args) => cmd_embed(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Synth(args) => cmd_synth(args),
    }
}

fn embed(args: &PipelineArgs, manifest: &mut Manifest) -> Result<(TemporalGraph, PipelineResult)> {
    let config = args.config();
    config.validate()?;
    manifest.pipeline = Some(config);
    manifest.add_input(&args.input)?;

    let start = Instant::now();
    let graph = ingest_csv(&args.input, &EdgeSchema::default())?;
    manifest.time("ingest", start);
    log::info!("{} nodes, {} edges", graph.n_nodes(), graph.n_edges());

    let start = Instant::now();
    let result = pipeline::run(&graph, &config)?;
    manifest.time("pipeline", start);
    manifest.pipeline_summary = Some(PipelineSummary::from(&result));
    Ok((graph, result))
}

fn cmd_embed(args: EmbedArgs) -> Result<()> {
    let mut manifest = Manifest::new("embed");
    let (graph, result) = embed(&args.pipeline, &mut manifest)?;

    let start = Instant::now();
    match &args.output {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_embeddings(BufWriter::new(file), &graph, result.h.view())
                .with_context(|| format!("writing {}", path.display()))?;
        }
        None => write_embeddings(io::stdout().lock(), &graph, result.h.view())?,
    }
    manifest.time("write", start);
    if let Some(path) = &args.output {
        manifest.write_beside(path)?;
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    if !(args.threshold >= 0.0 && args.threshold <= 1.0) {
        bail!("--threshold must be within [0, 1]");
    }
    let mut manifest = Manifest::new("evaluate");
    let (graph, result) = embed(&args.pipeline, &mut manifest)?;

    manifest.add_input(&args.labels)?;
    let ingest = ingest_labels(&args.labels, &graph)?;
    if !ingest.skipped.is_empty() {
        log::warn!("{} labels refer to accounts absent from the graph", ingest.skipped.len());
    }
    if ingest.labels.is_empty() {
        bail!("no labels match accounts in {}", args.pipeline.input.display());
    }

    let split_spec = SplitSpec {
        train_fraction: args.train_frac,
        seed: args.pipeline.seed,
        ..SplitSpec::default()
    };
    let forest = ForestConfig {
        n_trees: args.trees,
        seed: args.pipeline.seed,
        ..ForestConfig::default()
    };
    manifest.split = Some(split_spec);
    manifest.forest = Some(forest);
    manifest.threshold = Some(args.threshold);

    let start = Instant::now();
    let eval = evaluate(result.h.view(), &ingest.labels, &split_spec, &forest, args.threshold)?;
    manifest.time("evaluate", start);
    println!("{}", eval.metrics);

    if let Some(path) = &args.emit_roc {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        eval.metrics
            .write_roc_csv(BufWriter::new(file))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.output {
        let json = serde_json::to_string_pretty(&eval.metrics)?;
        fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
        manifest.write_beside(path)?;
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_normal: args.normal,
        n_phisher: args.phishers,
        time_span: args.time_span,
        normal_rate: args.rate,
        burst_window: args.burst_window,
        burst_fanin: args.fanin,
        seed: args.seed,
        ..SynthConfig::default()
    };
    let mut manifest = Manifest::new("synth");
    manifest.synth = Some(cfg);

    let start = Instant::now();
    let out = synthgen::generate(&cfg)?;
    manifest.time("generate", start);
    manifest.synth_report = Some(out.report);

    fs::create_dir_all(&args.output).with_context(|| format!("creating {}", args.output.display()))?;
    let edges = args.output.join("edges.csv");
    let labels = args.output.join("labels.csv");
    write_with(&edges, |w| out.write_edges_csv(w))?;
    write_with(&labels, |w| out.write_labels_csv(w))?;
    manifest.write_to(&args.output.join("manifest.json"))?;
    log::info!(
        "{} nodes, {} edges written to {}",
        out.graph.n_nodes(),
        out.graph.n_edges(),
        args.output.display()
    );
    Ok(())
}

fn write_with(path: &Path, f: impl FnOnce(BufWriter<File>) -> io::Result<()>) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f(BufWriter::new(file)).with_context(|| format!("writing {}", path.display()))
}

fn write_embeddings<W: Write>(mut w: W, graph: &TemporalGraph, h: ArrayView2<f64>) -> Result<()> {
    write!(w, "node_key")?;
    for j in 0..h.ncols() {
        write!(w, ",e{j}")?;
    }
    writeln!(w)?;
    let mut line = String::new();
    for (v, row) in graph.nodes().zip(h.rows()) {
        line.clear();
        line.push_str(&csv_field(graph.key(v)));
        for &x in row {
            line.push(',');
            line.push_str(&format_sig9(x));
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Shortest of fixed or scientific notation carrying 9 significant digits,
/// in the manner of C's `%.9g`.
fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..9).contains(&exp) {
        let fixed = format!("{:.*}", (8 - exp) as usize, x);
        trim_zeros(&fixed).to_owned()
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
