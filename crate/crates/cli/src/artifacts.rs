//! On-disk artifacts: sample tables, sidecars, reports and the manifest.
//! Every file is written to a temporary sibling and renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use bnn_mcmc::data::{format_f64, StandardizationParams};
use bnn_mcmc::evaluation::RocCurve;
use bnn_mcmc::features::ConvStackSpec;
use bnn_mcmc::{Chain, ChainControls, Kernel, NetworkSpec, PriorSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;
pub const MODEL_FILE: &str = "model.json";

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| CliError::data(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serialises");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

pub fn chain_table_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("chain_{i}.csv"))
}

pub fn chain_meta_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("chain_{i}.json"))
}

/// `lp,w0,w1,...` followed by one row per retained sample, 17 significant
/// digits per value.
pub fn encode_chain_table(chain: &Chain) -> String {
    let mut out = String::from("lp");
    for j in 0..chain.dim() {
        out.push_str(&format!(",w{j}"));
    }
    out.push('\n');
    for (lp, sample) in chain.log_posts.iter().zip(&chain.samples) {
        out.push_str(&format_f64(*lp));
        for v in sample {
            out.push(',');
            out.push_str(&format_f64(*v));
        }
        out.push('\n');
    }
    out
}

/// Parses a sample table into `(log_posts, samples)`.
pub fn decode_chain_table(text: &str, origin: &Path) -> CliResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let bad = |line: usize, msg: String| CliError::data(format!("{}:{line}: {msg}", origin.display()));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad(1, "empty sample table".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let expected_header = (0..cols.len().saturating_sub(1)).all(|j| cols[j + 1] == format!("w{j}"));
    if cols.first() != Some(&"lp") || !expected_header {
        return Err(bad(1, "header must be `lp,w0,w1,...`".into()));
    }
    let dim = cols.len() - 1;
    let mut log_posts = Vec::new();
    let mut samples = Vec::new();
    for (n, line) in lines.enumerate() {
        let values: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(n + 2, e.to_string()))?;
        if values.len() != dim + 1 {
            return Err(bad(n + 2, format!("expected {} fields, found {}", dim + 1, values.len())));
        }
        log_posts.push(values[0]);
        samples.push(values[1..].to_vec());
    }
    Ok((log_posts, samples))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub chain: usize,
    pub seed: u64,
    pub stream: u64,
    pub controls: ChainControls,
    pub n_retained: usize,
    pub dim: usize,
    pub n_proposed: usize,
    pub n_accepted: usize,
    pub n_divergent: usize,
    pub acceptance_rate: f64,
}

impl ChainMeta {
    pub fn new(index: usize, chain: &Chain, controls: ChainControls) -> Self {
        Self {
            chain: index,
            seed: chain.seed,
            stream: chain.stream,
            controls,
            n_retained: chain.len(),
            dim: chain.dim(),
            n_proposed: chain.n_proposed,
            n_accepted: chain.n_accepted,
            n_divergent: chain.n_divergent,
            acceptance_rate: bnn_mcmc::diagnostics::acceptance_rate(chain),
        }
    }
}

/// Reads a sample table and, when present, its metadata sidecar.
pub fn read_chain(table: &Path) -> CliResult<Chain> {
    let text = fs::read_to_string(table)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", table.display())))?;
    let (log_posts, samples) = decode_chain_table(&text, table)?;
    let sidecar = table.with_extension("json");
    let meta: Option<ChainMeta> = if sidecar.is_file() {
        Some(read_json(&sidecar)?)
    } else {
        None
    };
    let mut chain = Chain {
        samples,
        log_posts,
        n_proposed: 0,
        n_accepted: 0,
        n_divergent: 0,
        seed: 0,
        stream: 0,
    };
    if let Some(m) = meta {
        if m.n_retained != chain.len() {
            return Err(CliError::data(format!(
                "{} holds {} samples but its sidecar records {}",
                table.display(),
                chain.len(),
                m.n_retained
            )));
        }
        chain.n_proposed = m.n_proposed;
        chain.n_accepted = m.n_accepted;
        chain.n_divergent = m.n_divergent;
        chain.seed = m.seed;
        chain.stream = m.stream;
    }
    Ok(chain)
}

/// Chain tables `chain_0.csv, chain_1.csv, ...` of a run directory.
pub fn read_run_chains(dir: &Path, n_chains: usize) -> CliResult<Vec<Chain>> {
    (0..n_chains)
        .map(|i| read_chain(&chain_table_path(dir, i)))
        .collect()
}

/// All `chain_<i>.csv` files in `dir`, in index order.
pub fn find_chain_tables(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut found: Vec<(usize, PathBuf)> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| {
            let name = p.file_name()?.to_str()?;
            let idx = name.strip_prefix("chain_")?.strip_suffix(".csv")?.parse().ok()?;
            Some((idx, p))
        })
        .collect();
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// Everything needed to turn retained samples back into predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub network: NetworkSpec,
    pub prior: PriorSpec,
    pub sampler: Kernel,
    pub standardizer: StandardizationParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<ConvStackSpec>,
    pub class_names: Vec<String>,
    pub n_chains: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub library_version: String,
    pub format_version: u32,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    /// SHA-256 of every file the command wrote.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config_sha256: String, seed: u64) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            library_version: bnn_mcmc::VERSION.into(),
            format_version: FORMAT_VERSION,
            command: command.into(),
            config_sha256,
            seed,
            artifacts: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, dir: &Path, name: &str) -> CliResult<()> {
        let digest = sha256_file(&dir.join(name))?;
        self.artifacts.insert(name.to_string(), digest);
        Ok(())
    }
}

/// `threshold,fpr,tpr` rows; the opening threshold is written as `inf`.
pub fn encode_roc_table(curve: &RocCurve) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in &curve.points {
        let t = if p.threshold.is_infinite() {
            "inf".to_string()
        } else {
            format_f64(p.threshold)
        };
        out.push_str(&format!("{t},{},{}\n", format_f64(p.fpr), format_f64(p.tpr)));
    }
    out
}
