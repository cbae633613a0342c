//! Single-file persistence of every learned artifact.
//!
//! Layout: `"PMBD"`, u16 LE version, u32 LE header length, the JSON header,
//! then the array sections (little-endian f32 or i64, row-major) in manifest
//! order. The header checksum is the SHA-256 of the header serialized with
//! an empty checksum field followed by the array payload.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::detector::Thresholds;
use crate::embedding::{ProviderMode, StepStateKind};
use crate::error::{Error, Result};
use crate::hashing::sha256_hex;
use crate::manifold::{Projector, Stage1Config};
use crate::markov::{FailCountsScope, TransitionModel};
use crate::nn::{Activation, Dense, DenseNet, LayerNorm};
use crate::proactive::{BinaryHead, Stage2Config};
use crate::quantizer::{Codebook, KMeansConfig};

pub const MAGIC: &[u8; 4] = b"PMBD";
pub const VERSION: u16 = 1;

/// Configuration echo: everything needed to rebuild the pipeline's behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleConfig {
    pub k: usize,
    pub top_m: usize,
    pub state_dim: usize,
    pub epsilon: f64,
    pub beta: f64,
    pub provider_mode: ProviderMode,
    pub step_state: StepStateKind,
    pub absolute_states: bool,
    pub no_triplet: bool,
    pub binary_baseline: bool,
    pub fail_counts_scope: FailCountsScope,
    pub score_hidden: usize,
    pub projection_hidden: usize,
    pub projection_dim: usize,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub kmeans: KMeansConfig,
    pub train_fraction: f64,
    pub split_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// SHA-256 over the training trajectories' ids and contents.
    pub dataset_hash: String,
    pub train_trajectories: usize,
    /// Only present when supplied by the caller, so identical runs stay
    /// byte-identical by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created: Option<String>,
    pub stage1_loss: Vec<f64>,
    pub stage2_loss: Vec<f64>,
    pub stage2_train_accuracy: f64,
    pub inertia_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config: BundleConfig,
    pub thresholds: Thresholds,
    pub provenance: Provenance,
    pub score_net: Option<DenseNet>,
    pub projector: Projector,
    pub codebook: Codebook,
    pub transitions: TransitionModel,
    pub head: DenseNet,
    pub binary: Option<BinaryHead>,
}

fn inconsistent(msg: String) -> Error {
    Error::InconsistentDimensions(msg)
}

impl ModelBundle {
    pub fn k(&self) -> usize {
        self.codebook.k()
    }

    /// Internal dimension consistency.
    pub fn validate(&self) -> Result<()> {
        let k = self.codebook.k();
        let d = self.config.state_dim;
        if self.config.k != k {
            return Err(inconsistent(format!("config K {} but codebook K {k}", self.config.k)));
        }
        if self.transitions.k() != k {
            return Err(inconsistent(format!(
                "codebook K {k} but transition model K {}",
                self.transitions.k()
            )));
        }
        if self.head.output_dim() != k {
            return Err(inconsistent(format!(
                "codebook K {k} but prediction head outputs {}",
                self.head.output_dim()
            )));
        }
        if self.head.input_dim() != d {
            return Err(inconsistent(format!(
                "state dim {d} but prediction head input {}",
                self.head.input_dim()
            )));
        }
        let projected = match &self.projector {
            Projector::Raw => d,
            Projector::Learned(net) => {
                if net.input_dim() != d {
                    return Err(inconsistent(format!(
                        "state dim {d} but projection input {}",
                        net.input_dim()
                    )));
                }
                net.output_dim()
            }
        };
        if projected != self.codebook.dim() {
            return Err(inconsistent(format!(
                "projection outputs {projected} but centroids have dim {}",
                self.codebook.dim()
            )));
        }
        if let Some(net) = &self.score_net {
            if net.input_dim() != d || net.output_dim() != 1 {
                return Err(inconsistent("attention scorer does not match state dim".into()));
            }
        }
        if (self.config.provider_mode == ProviderMode::TokenLevel) != self.score_net.is_some() {
            return Err(Error::ModeMismatch(
                "attention scorer must be present exactly in token-level mode".into(),
            ));
        }
        if let Some(b) = &self.binary {
            if b.0.input_dim() != d || b.0.output_dim() != 2 {
                return Err(inconsistent("binary head does not match state dim".into()));
            }
        }
        if self.config.binary_baseline && self.binary.is_none() {
            return Err(inconsistent("binary baseline enabled without a binary head".into()));
        }
        if self.config.top_m == 0 || self.config.top_m > k {
            return Err(inconsistent(format!("top-m {} not in [1, {k}]", self.config.top_m)));
        }
        self.thresholds.validate()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut writer = ArrayWriter::default();
        if let Some(net) = &self.score_net {
            writer.net("score_net", net);
        }
        if let Projector::Learned(net) = &self.projector {
            writer.net("projection", net);
        }
        writer.f32("codebook.centroids", &self.codebook.centroids);
        writer.i64_2d("markov.fail_counts", &self.transitions.fail_counts);
        writer.i64_2d("markov.succ_counts", &self.transitions.succ_counts);
        writer.i64_1d("markov.fail_start", &self.transitions.fail_start);
        writer.i64_1d("markov.succ_start", &self.transitions.succ_start);
        writer.net("head", &self.head);
        if let Some(b) = &self.binary {
            writer.net("binary", &b.0);
        }
        let mut header = Header {
            config: self.config.clone(),
            thresholds: self.thresholds,
            provenance: self.provenance.clone(),
            epsilon: self.transitions.epsilon,
            beta: self.transitions.beta,
            inertia_history: self.codebook.inertia_history.clone(),
            networks: writer.networks,
            arrays: writer.manifest,
            checksum: String::new(),
        };
        header.checksum = checksum(&header, &writer.payload)?;
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(10 + json.len() + writer.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&writer.payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 {
            return Err(Error::TruncatedFile {
                expected: 10,
                actual: bytes.len(),
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::BadMagic("PMBD"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::VersionUnsupported {
                format: "PMBD",
                version,
            });
        }
        let header_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
        let header_end = 10 + header_len;
        if bytes.len() < header_end {
            return Err(Error::TruncatedFile {
                expected: header_end,
                actual: bytes.len(),
            });
        }
        let mut header: Header =
            serde_json::from_slice(&bytes[10..header_end]).map_err(|_| Error::ChecksumMismatch)?;
        let payload = &bytes[header_end..];
        let stored = std::mem::take(&mut header.checksum);
        if checksum(&header, payload)? != stored {
            return Err(Error::ChecksumMismatch);
        }
        let reader = ArrayReader {
            manifest: &header.arrays,
            payload,
        };
        let net = |name: &str| -> Result<DenseNet> {
            let spec = header
                .networks
                .iter()
                .find(|n| n.name == name)
                .ok_or_else(|| inconsistent(format!("missing network {name}")))?;
            reader.net(spec)
        };
        let has = |name: &str| header.networks.iter().any(|n| n.name == name);
        let score_net = if has("score_net") { Some(net("score_net")?) } else { None };
        let projector = if has("projection") {
            Projector::Learned(net("projection")?)
        } else {
            Projector::Raw
        };
        let codebook = Codebook {
            centroids: reader.f32_2d("codebook.centroids")?,
            inertia_history: header.inertia_history.clone(),
        };
        let transitions = TransitionModel {
            fail_counts: reader.i64_2d("markov.fail_counts")?,
            succ_counts: reader.i64_2d("markov.succ_counts")?,
            fail_start: reader.i64_1d("markov.fail_start")?,
            succ_start: reader.i64_1d("markov.succ_start")?,
            epsilon: header.epsilon,
            beta: header.beta,
        };
        let binary = if has("binary") { Some(BinaryHead(net("binary")?)) } else { None };
        let bundle = ModelBundle {
            config: header.config,
            thresholds: header.thresholds,
            provenance: header.provenance,
            score_net,
            projector,
            codebook,
            transitions,
            head: net("head")?,
            binary,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn checksum(header: &Header, payload: &[u8]) -> Result<String> {
    let mut bytes = serde_json::to_vec(header)?;
    bytes.extend_from_slice(payload);
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: BundleConfig,
    thresholds: Thresholds,
    provenance: Provenance,
    epsilon: f64,
    beta: f64,
    inertia_history: Vec<f64>,
    networks: Vec<NetSpec>,
    arrays: Vec<ArrayEntry>,
    checksum: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetSpec {
    name: String,
    layer_norm: bool,
    activations: Vec<Activation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum DType {
    F32,
    I64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Default)]
struct ArrayWriter {
    manifest: Vec<ArrayEntry>,
    networks: Vec<NetSpec>,
    payload: Vec<u8>,
}

impl ArrayWriter {
    fn entry(&mut self, name: String, dtype: DType, shape: Vec<usize>) {
        self.manifest.push(ArrayEntry {
            name,
            dtype,
            shape,
            offset: self.payload.len(),
        });
    }

    fn f32_iter<'a>(&mut self, name: String, shape: Vec<usize>, values: impl Iterator<Item = &'a f64>) {
        self.entry(name, DType::F32, shape);
        for v in values {
            self.payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }

    fn f32(&mut self, name: &str, a: &Array2<f64>) {
        self.f32_iter(name.into(), vec![a.nrows(), a.ncols()], a.iter());
    }

    fn i64_2d(&mut self, name: &str, a: &Array2<i64>) {
        self.entry(name.into(), DType::I64, vec![a.nrows(), a.ncols()]);
        for v in a.iter() {
            self.payload.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn i64_1d(&mut self, name: &str, a: &Array1<i64>) {
        self.entry(name.into(), DType::I64, vec![a.len()]);
        for v in a.iter() {
            self.payload.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn net(&mut self, name: &str, net: &DenseNet) {
        if let Some(norm) = &net.norm {
            self.f32_iter(format!("{name}.norm.gain"), vec![norm.dim()], norm.gain.iter());
            self.f32_iter(format!("{name}.norm.offset"), vec![norm.dim()], norm.offset.iter());
        }
        for (i, layer) in net.layers.iter().enumerate() {
            self.f32(&format!("{name}.layers.{i}.weights"), &layer.weights);
            self.f32_iter(
                format!("{name}.layers.{i}.bias"),
                vec![layer.bias.len()],
                layer.bias.iter(),
            );
        }
        self.networks.push(NetSpec {
            name: name.into(),
            layer_norm: net.norm.is_some(),
            activations: net.layers.iter().map(|l| l.activation).collect(),
        });
    }
}

struct ArrayReader<'a> {
    manifest: &'a [ArrayEntry],
    payload: &'a [u8],
}

impl ArrayReader<'_> {
    fn raw(&self, name: &str, dtype: DType) -> Result<(&ArrayEntry, &[u8])> {
        let entry = self
            .manifest
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| inconsistent(format!("missing array {name}")))?;
        if entry.dtype != dtype {
            return Err(inconsistent(format!("array {name} has the wrong element type")));
        }
        let count = entry
            .shape
            .iter()
            .try_fold(1usize, |acc, &s| acc.checked_mul(s))
            .ok_or(Error::DimensionOverflow)?;
        let len = count.checked_mul(8).ok_or(Error::DimensionOverflow)? / if dtype == DType::F32 { 2 } else { 1 };
        let end = entry.offset.checked_add(len).ok_or(Error::DimensionOverflow)?;
        if end > self.payload.len() {
            return Err(Error::TruncatedFile {
                expected: end,
                actual: self.payload.len(),
            });
        }
        Ok((entry, &self.payload[entry.offset..end]))
    }

    fn f32_values(&self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let (entry, bytes) = self.raw(name, DType::F32)?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok((entry.shape.clone(), values))
    }

    fn i64_values(&self, name: &str) -> Result<(Vec<usize>, Vec<i64>)> {
        let (entry, bytes) = self.raw(name, DType::I64)?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok((entry.shape.clone(), values))
    }

    fn f32_2d(&self, name: &str) -> Result<Array2<f64>> {
        let (shape, v) = self.f32_values(name)?;
        shaped_2d(name, shape, v)
    }

    fn f32_1d(&self, name: &str) -> Result<Array1<f64>> {
        let (shape, v) = self.f32_values(name)?;
        if shape.len() != 1 {
            return Err(inconsistent(format!("array {name} is not a vector")));
        }
        Ok(Array1::from(v))
    }

    fn i64_2d(&self, name: &str) -> Result<Array2<i64>> {
        let (shape, v) = self.i64_values(name)?;
        shaped_2d(name, shape, v)
    }

    fn i64_1d(&self, name: &str) -> Result<Array1<i64>> {
        let (shape, v) = self.i64_values(name)?;
        if shape.len() != 1 {
            return Err(inconsistent(format!("array {name} is not a vector")));
        }
        Ok(Array1::from(v))
    }

    fn net(&self, spec: &NetSpec) -> Result<DenseNet> {
        let name = &spec.name;
        let norm = if spec.layer_norm {
            Some(LayerNorm {
                gain: self.f32_1d(&format!("{name}.norm.gain"))?,
                offset: self.f32_1d(&format!("{name}.norm.offset"))?,
            })
        } else {
            None
        };
        let layers = spec
            .activations
            .iter()
            .enumerate()
            .map(|(i, &activation)| {
                Ok(Dense {
                    weights: self.f32_2d(&format!("{name}.layers.{i}.weights"))?,
                    bias: self.f32_1d(&format!("{name}.layers.{i}.bias"))?,
                    activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        DenseNet::new(norm, layers).map_err(|e| inconsistent(format!("network {name}: {e}")))
    }
}

fn shaped_2d<T>(name: &str, shape: Vec<usize>, values: Vec<T>) -> Result<Array2<T>> {
    if shape.len() != 2 {
        return Err(inconsistent(format!("array {name} is not a matrix")));
    }
    Array2::from_shape_vec((shape[0], shape[1]), values)
        .map_err(|_| inconsistent(format!("array {name} has the wrong length")))
}
