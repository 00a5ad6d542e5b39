//! Run manifest written next to every output.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use ditsgcr::evaluation::{ForestConfig, SplitSpec};
use ditsgcr::pipeline::{PipelineConfig, PipelineResult};
use ditsgcr::synthgen::{SynthConfig, SynthReport};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct PipelineSummary {
    pub iterations_run: usize,
    pub unique_counts: Vec<usize>,
    pub laplacian_solves: usize,
}

impl From<&PipelineResult> for PipelineSummary {
    fn from(r: &PipelineResult) -> Self {
        Self {
            iterations_run: r.iterations_run,
            unique_counts: r.unique_counts.clone(),
            laplacian_solves: r.stats.laplacian_solves,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: &'static str,
    pub version: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<PipelineConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forest: Option<ForestConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_report: Option<SynthReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pipeline_summary: Option<PipelineSummary>,
    pub inputs: Vec<InputDigest>,
    /// Seconds per stage. The only field that varies between identical runs.
    pub wall_times: BTreeMap<&'static str, f64>,
}

impl Manifest {
    pub fn new(command: &'static str) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            pipeline: None,
            split: None,
            forest: None,
            threshold: None,
            synth: None,
            synth_report: None,
            pipeline_summary: None,
            inputs: Vec::new(),
            wall_times: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.push(InputDigest {
            path: path.to_owned(),
            sha256,
        });
        Ok(())
    }

    pub fn time(&mut self, stage: &'static str, start: Instant) {
        self.wall_times.insert(stage, start.elapsed().as_secs_f64());
    }

    /// Writes to `<output>.manifest.json`.
    pub fn write_beside(&self, output: &Path) -> Result<()> {
        let mut name = output.as_os_str().to_owned();
        name.push(".manifest.json");
        self.write_to(Path::new(&name))
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}
