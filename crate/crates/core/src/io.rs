//! File formats: run manifests, network descriptions, weight blobs,
//! compiled programs and atomic file output.
//!
//! Weight blob layout (little endian): magic `MRVW`, `u32` version, `u32`
//! layer count, then per layer `u32` weight count, `u32` bias count and
//! the `f32` weights followed by the `f32` biases.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, DatasetError};
use crate::network::{FloatLayer, FloatNetwork, LayerSpec, ShapeError};
use crate::quant::LayerChoice;
use crate::sim::{CycleModel, ExecutionReport, Program, SimError};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"MRVW";
pub const WEIGHTS_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;
pub const NETWORK_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, msg: impl std::fmt::Display) -> IoError {
    IoError::Format { path: path.to_path_buf(), msg: msg.to_string() }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(file_err(path))
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(file_err(path))
}

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never see partial output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(file_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(file_err(dir))?;
    tmp.write_all(bytes).map_err(file_err(path))?;
    tmp.as_file().sync_all().map_err(file_err(path))?;
    tmp.persist(path).map_err(|e| IoError::File { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    version: u32,
    layers: Vec<LayerSpec>,
}

pub fn network_to_toml(specs: &[LayerSpec]) -> String {
    toml::to_string(&NetworkFile { version: NETWORK_VERSION, layers: specs.to_vec() }).expect("layer specs serialize")
}

pub fn network_from_toml(text: &str) -> Result<Vec<LayerSpec>, String> {
    let f: NetworkFile = toml::from_str(text).map_err(|e| e.to_string())?;
    if f.version != NETWORK_VERSION {
        return Err(format!("unsupported network version {}", f.version));
    }
    crate::network::validate_chain(&f.layers).map_err(|e| e.to_string())?;
    Ok(f.layers)
}

pub fn encode_weights(net: &FloatNetwork) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
    for l in &net.layers {
        out.extend_from_slice(&(l.weights.len() as u32).to_le_bytes());
        out.extend_from_slice(&(l.bias.len() as u32).to_le_bytes());
        for v in l.weights.iter().chain(&l.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Rebuilds a network from its specs and a weight blob.
pub fn decode_weights(specs: &[LayerSpec], bytes: &[u8]) -> Result<FloatNetwork, String> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], String> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| format!("truncated at byte {pos}"))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != WEIGHTS_MAGIC {
        return Err("bad magic".into());
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
    let version = u32_at(take(4)?);
    if version != WEIGHTS_VERSION {
        return Err(format!("unsupported weights version {version}"));
    }
    let count = u32_at(take(4)?) as usize;
    if count != specs.len() {
        return Err(format!("{count} layers in weights, {} in network", specs.len()));
    }
    let mut layers = Vec::with_capacity(count);
    for (i, spec) in specs.iter().enumerate() {
        let nw = u32_at(take(4)?) as usize;
        let nb = u32_at(take(4)?) as usize;
        let mut l = FloatLayer::new(spec.clone());
        if nw != l.weights.len() || nb != l.bias.len() {
            return Err(format!("layer {i}: {nw} weights and {nb} biases do not fit its shape"));
        }
        let vals: Vec<f32> = take(4 * (nw + nb))?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        l.weights.copy_from_slice(&vals[..nw]);
        l.bias.copy_from_slice(&vals[nw..]);
        layers.push(l);
    }
    if pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - pos));
    }
    FloatNetwork::new(layers).map_err(|e| e.to_string())
}

/// Everything needed to reproduce one experiment. Paths are relative to
/// the manifest's directory unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: u32,
    pub network: PathBuf,
    pub weights: PathBuf,
    pub dataset: PathBuf,
    pub seed: u64,
    /// One entry per weighted layer; empty means all `w8a8`, unpruned.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<LayerChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle_model: Option<CycleModel>,
}

impl RunManifest {
    pub fn parse(text: &str) -> Result<Self, IoError> {
        let m: Self = toml::from_str(text).map_err(|e| IoError::Manifest(e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(IoError::Manifest(format!("unsupported version {}", m.version)));
        }
        if let Some(c) = &m.cycle_model {
            c.validate()?;
        }
        for l in &m.layers {
            if !(0.0..1.0).contains(&l.pruning_rate) {
                return Err(IoError::Manifest(format!("pruning rate {} outside [0, 1)", l.pruning_rate)));
            }
        }
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

/// A manifest with its referenced files loaded and checked.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub manifest: RunManifest,
    pub net: FloatNetwork,
    pub dataset: Dataset,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_manifest(path: &Path) -> Result<LoadedRun, IoError> {
    let manifest = RunManifest::parse(&read_text(path)?).map_err(|e| match e {
        IoError::Manifest(m) => format_err(path, m),
        other => other,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let net_path = resolve(base, &manifest.network);
    let specs = network_from_toml(&read_text(&net_path)?).map_err(|e| format_err(&net_path, e))?;
    let w_path = resolve(base, &manifest.weights);
    let net = decode_weights(&specs, &read_file(&w_path)?).map_err(|e| format_err(&w_path, e))?;
    let d_path = resolve(base, &manifest.dataset);
    let dataset = Dataset::from_bytes(&read_file(&d_path)?).map_err(|e| format_err(&d_path, e))?;
    let macs = specs.iter().filter(|s| s.is_mac()).count();
    if !manifest.layers.is_empty() && manifest.layers.len() != macs {
        return Err(format_err(path, format!("{} layer entries for {macs} weighted layers", manifest.layers.len())));
    }
    if specs[0].in_shape().len() != dataset.height * dataset.width {
        return Err(format_err(&d_path, "image size does not match the network input"));
    }
    Ok(LoadedRun { manifest, net, dataset })
}

/// Sidecar describing a `.bin` program image: entry, memory and layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramManifest {
    pub version: u32,
    pub entry: u32,
    pub memory_size: usize,
    pub data: Vec<crate::sim::DataSegment>,
    pub layers: Vec<crate::sim::LayerMarker>,
}

/// Writes `<stem>.bin` with the instruction words and `<stem>.json` with
/// everything else.
pub fn write_program(stem: &Path, program: &Program) -> Result<(), IoError> {
    let pm = ProgramManifest {
        version: MANIFEST_VERSION,
        entry: program.entry,
        memory_size: program.memory_size,
        data: program.data.clone(),
        layers: program.layers.clone(),
    };
    write_atomic(&stem.with_extension("bin"), &program.to_binary())?;
    let json = serde_json::to_string_pretty(&pm).expect("program manifest serializes");
    write_atomic(&stem.with_extension("json"), json.as_bytes())
}

/// Reads a `.bin` image and, when present, its `.json` sidecar.
pub fn read_program(bin: &Path) -> Result<Program, IoError> {
    let bytes = read_file(bin)?;
    if bytes.len() % 4 != 0 {
        return Err(format_err(bin, "length is not a whole number of words"));
    }
    let mut program = Program::from_binary(&bytes);
    let side = bin.with_extension("json");
    if side.exists() {
        let pm: ProgramManifest = serde_json::from_str(&read_text(&side)?).map_err(|e| format_err(&side, e))?;
        program.entry = pm.entry;
        program.memory_size = pm.memory_size;
        program.data = pm.data;
        program.layers = pm.layers;
    }
    Ok(program)
}

/// Totals of one run as written to `summary.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub style: String,
    pub total_cycles: u64,
    pub instruction_count: u64,
    pub load_count: u64,
    pub store_count: u64,
    pub stall_cycles: u64,
    pub mac_count: u64,
}

impl SummaryRow {
    pub fn new(style: &str, r: &ExecutionReport) -> Self {
        Self {
            style: style.into(),
            total_cycles: r.total_cycles,
            instruction_count: r.instruction_count,
            load_count: r.load_count,
            store_count: r.store_count,
            stall_cycles: r.stall_cycles,
            mac_count: r.mac_count,
        }
    }

    /// A report carrying only the totals.
    pub fn report(&self) -> ExecutionReport {
        ExecutionReport {
            total_cycles: self.total_cycles,
            instruction_count: self.instruction_count,
            load_count: self.load_count,
            store_count: self.store_count,
            stall_cycles: self.stall_cycles,
            mac_count: self.mac_count,
            ..Default::default()
        }
    }
}

/// Per-layer comparison row of `layers.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub layer: String,
    pub config: String,
    pub pruning_rate: f64,
    pub macs: u64,
    pub baseline_cycles: u64,
    pub packed_cycles: u64,
    pub speedup: f64,
    pub baseline_loads: u64,
    pub packed_loads: u64,
}

/// One timing-slack sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlackRow {
    pub voltage: f64,
    pub slack_ps: f64,
}

pub fn rows_to_csv<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize");
    }
    w.into_inner().expect("in-memory writer")
}

pub fn rows_from_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let text = read_text(path)?;
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| format_err(path, format!("row {}: {e}", i + 1))))
        .collect()
}
