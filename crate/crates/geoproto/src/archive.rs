//! Versioned binary containers for models (`.gpn`) and fitted baselines.
//!
//! ```text
//! magic[4] | u32 version | u32 header bytes | header (JSON)
//!          | u64 body bytes | body (little-endian blocks) | sha256 of all preceding bytes
//! ```
//!
//! Model bodies hold, in header order, the fusion logits, prototypes, head
//! and bias as f32, then the global baselines as f64.

use std::fs;
use std::path::Path;

use geoproto_core::aggregate::{FusionGranularity, FusionWeights, PoolMode, PoolingPlan};
use geoproto_core::encoder::{ConceptSpec, GlobalBaselines};
use geoproto_core::model::{Hyperparams, PrototypeModel, N_CLASSES};
use geoproto_core::stats::{BaselineDist, BaselineKind, Scope};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::hashing::sha256;

pub const FORMAT_VERSION: u32 = 1;
const MODEL_MAGIC: &[u8; 4] = b"GPN\0";
const BASELINE_MAGIC: &[u8; 4] = b"GPB\0";

fn seal(magic: &[u8; 4], header: &[u8], body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(header.len() + body.len() + 56);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(body);
    let digest = sha256(&out);
    out.extend_from_slice(&digest);
    out
}

fn unseal<'a>(bytes: &'a [u8], magic: &[u8; 4], what: &str) -> AppResult<(&'a [u8], &'a [u8])> {
    let corrupt = || AppError::Data(format!("{what}: truncated or corrupt"));
    if bytes.len() < 52 || &bytes[..4] != magic {
        return Err(AppError::Data(format!("{what}: wrong file type")));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(AppError::Incompatible(format!(
            "{what}: format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let (content, digest) = bytes.split_at(bytes.len() - 32);
    if sha256(content) != digest {
        return Err(AppError::Data(format!("{what}: checksum mismatch")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header = content.get(12..12 + hlen).ok_or_else(corrupt)?;
    let rest = &content[12 + hlen..];
    if rest.len() < 8 {
        return Err(corrupt());
    }
    let blen = u64::from_le_bytes(rest[..8].try_into().unwrap()) as usize;
    if rest.len() != 8 + blen {
        return Err(corrupt());
    }
    Ok((header, &rest[8..]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineEntry {
    pub feature: String,
    pub scope: Scope,
    pub family: String,
    /// f64 values in the body: `[rate]` or `[mean, sorted...]`.
    pub len: usize,
}

fn baselines_to_parts(b: &GlobalBaselines) -> (Vec<BaselineEntry>, Vec<f64>) {
    let mut entries = Vec::new();
    let mut values = Vec::new();
    for d in &b.baselines {
        let (family, vals): (&str, Vec<f64>) = match &d.kind {
            BaselineKind::Poisson { rate } => ("poisson", vec![*rate]),
            BaselineKind::Empirical { sorted, mean } => {
                ("empirical", std::iter::once(*mean).chain(sorted.iter().copied()).collect())
            }
        };
        entries.push(BaselineEntry {
            feature: d.feature.clone(),
            scope: d.scope,
            family: family.into(),
            len: vals.len(),
        });
        values.extend(vals);
    }
    (entries, values)
}

fn baselines_from_parts(entries: &[BaselineEntry], values: &[f64], what: &str) -> AppResult<GlobalBaselines> {
    let bad = |msg: &str| AppError::Data(format!("{what}: {msg}"));
    let mut at = 0;
    let mut baselines = Vec::with_capacity(entries.len());
    for e in entries {
        let v = values.get(at..at + e.len).ok_or_else(|| bad("baseline block too short"))?;
        at += e.len;
        let kind = match (e.family.as_str(), v) {
            ("poisson", [rate]) => BaselineKind::Poisson { rate: *rate },
            ("empirical", [mean, sorted @ ..]) if !sorted.is_empty() => BaselineKind::Empirical {
                sorted: sorted.to_vec(),
                mean: *mean,
            },
            _ => return Err(bad("malformed baseline entry")),
        };
        baselines.push(BaselineDist {
            feature: e.feature.clone(),
            scope: e.scope,
            kind,
        });
    }
    if at != values.len() {
        return Err(bad("trailing baseline values"));
    }
    Ok(GlobalBaselines { baselines })
}

fn f64_le(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn read_f64(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect()
}

fn f32_le(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

fn read_f32(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BaselineHeader {
    encode_hash: String,
    entries: Vec<BaselineEntry>,
}

pub fn baselines_to_bytes(b: &GlobalBaselines, encode_hash: &str) -> Vec<u8> {
    let (entries, values) = baselines_to_parts(b);
    let header = BaselineHeader {
        encode_hash: encode_hash.into(),
        entries,
    };
    seal(BASELINE_MAGIC, &serde_json::to_vec(&header).unwrap(), &f64_le(&values))
}

pub fn baselines_from_bytes(bytes: &[u8], encode_hash: &str, what: &str) -> AppResult<GlobalBaselines> {
    let (header, body) = unseal(bytes, BASELINE_MAGIC, what)?;
    let h: BaselineHeader = serde_json::from_slice(header).map_err(|e| AppError::Data(format!("{what}: {e}")))?;
    if h.encode_hash != encode_hash {
        return Err(AppError::Incompatible(format!(
            "{what}: fitted for encoding {}, expected {encode_hash}; re-run baseline",
            h.encode_hash
        )));
    }
    if body.len() % 8 != 0 {
        return Err(AppError::Data(format!("{what}: ragged body")));
    }
    baselines_from_parts(&h.entries, &read_f64(body), what)
}

/// Hashes that tie a model to the data, encoding and training settings that
/// produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub data_hash: String,
    pub encode_hash: String,
    pub train_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArchive {
    pub provenance: Provenance,
    pub model: PrototypeModel,
    pub baselines: GlobalBaselines,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PlanHeader {
    size: usize,
    mode: PoolMode,
    ring_radii: Vec<f64>,
    sectors: usize,
    region_names: Vec<String>,
    cell_region: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlockHeader {
    name: String,
    dtype: String,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelHeader {
    format: String,
    #[serde(flatten)]
    provenance: Provenance,
    concepts: ConceptSpec,
    pooling: PlanHeader,
    fusion: FusionGranularity,
    hyperparams: Hyperparams,
    dim: usize,
    k: usize,
    class_of: Vec<u8>,
    epoch: usize,
    baselines: Vec<BaselineEntry>,
    blocks: Vec<BlockHeader>,
}

/// Round every trainable parameter through f32, the archive precision.
pub fn quantize(model: &mut PrototypeModel) {
    let q = |v: &mut [f64]| v.iter_mut().for_each(|x| *x = *x as f32 as f64);
    q(&mut model.prototypes);
    q(&mut model.head);
    q(&mut model.bias);
    q(&mut model.fusion.logits);
}

impl ModelArchive {
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let (entries, values) = baselines_to_parts(&self.baselines);
        let f32_blocks: [(&str, &[f64]); 4] = [
            ("fusion_logits", &m.fusion.logits),
            ("prototypes", &m.prototypes),
            ("head", &m.head),
            ("bias", &m.bias),
        ];
        let mut blocks: Vec<BlockHeader> = f32_blocks
            .iter()
            .map(|(name, v)| BlockHeader {
                name: (*name).into(),
                dtype: "f32".into(),
                len: v.len(),
            })
            .collect();
        blocks.push(BlockHeader {
            name: "baselines".into(),
            dtype: "f64".into(),
            len: values.len(),
        });
        let header = ModelHeader {
            format: "geoproto-model".into(),
            provenance: self.provenance.clone(),
            concepts: m.spec.clone(),
            pooling: PlanHeader {
                size: m.plan.size,
                mode: m.plan.mode,
                ring_radii: m.plan.ring_radii.clone(),
                sectors: m.plan.sectors,
                region_names: m.plan.region_names.clone(),
                cell_region: m.plan.cell_region.clone(),
            },
            fusion: m.fusion.granularity,
            hyperparams: m.hyper.clone(),
            dim: m.dim,
            k: m.k(),
            class_of: m.class_of.clone(),
            epoch: m.epoch,
            baselines: entries,
            blocks,
        };
        let mut body = Vec::new();
        for (_, v) in f32_blocks {
            body.extend(f32_le(v));
        }
        body.extend(f64_le(&values));
        seal(MODEL_MAGIC, &serde_json::to_vec_pretty(&header).unwrap(), &body)
    }

    pub fn from_bytes(bytes: &[u8], what: &str) -> AppResult<Self> {
        let (header, body) = unseal(bytes, MODEL_MAGIC, what)?;
        let bad = |msg: String| AppError::Data(format!("{what}: {msg}"));
        let h: ModelHeader = serde_json::from_slice(header).map_err(|e| bad(e.to_string()))?;
        if h.format != "geoproto-model" {
            return Err(bad(format!("unknown format {:?}", h.format)));
        }
        let mut at = 0;
        let mut blocks = Vec::new();
        for b in &h.blocks {
            let width = match b.dtype.as_str() {
                "f32" => 4,
                "f64" => 8,
                other => return Err(bad(format!("unknown dtype {other}"))),
            };
            let raw = body
                .get(at..at + b.len * width)
                .ok_or_else(|| bad(format!("block {} truncated", b.name)))?;
            at += b.len * width;
            blocks.push(if width == 4 { read_f32(raw) } else { read_f64(raw) });
        }
        let names: Vec<&str> = h.blocks.iter().map(|b| b.name.as_str()).collect();
        if at != body.len() || names != ["fusion_logits", "prototypes", "head", "bias", "baselines"] {
            return Err(bad("unexpected block layout".into()));
        }
        let [logits, prototypes, head, bias, baseline_values]: [Vec<f64>; 5] = blocks.try_into().unwrap();

        let p = &h.pooling;
        let mut plan = PoolingPlan::from_assignment(p.size, p.mode, p.region_names.clone(), p.cell_region.clone())?;
        plan.ring_radii = p.ring_radii.clone();
        plan.sectors = p.sectors;
        let mut fusion = FusionWeights::uniform(&h.concepts, p.size, h.fusion);
        if fusion.logits.len() != logits.len() {
            return Err(AppError::Incompatible(format!("{what}: fusion logits do not fit the concept spec")));
        }
        fusion.logits = logits;
        let mut model = PrototypeModel::new(h.concepts, plan, fusion, h.hyperparams, prototypes)?;
        if model.dim != h.dim || model.k() != h.k || model.class_of != h.class_of {
            return Err(bad("header disagrees with parameters".into()));
        }
        if head.len() != model.head.len() || bias.len() != N_CLASSES {
            return Err(bad("head or bias has the wrong size".into()));
        }
        model.head = head;
        model.bias = [bias[0], bias[1]];
        model.epoch = h.epoch;
        let baselines = baselines_from_parts(&h.baselines, &baseline_values, what)?;
        Ok(Self {
            provenance: h.provenance,
            model,
            baselines,
        })
    }

    pub fn save(&self, path: &Path) -> AppResult<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(AppError::io(dir))?;
        }
        fs::write(path, self.to_bytes()).map_err(AppError::io(path))
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let bytes = fs::read(path).map_err(AppError::io(path))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    /// Reject use with encodings produced under different settings.
    pub fn check_encoding(&self, encode_hash: &str) -> AppResult<()> {
        if self.provenance.encode_hash != encode_hash {
            return Err(AppError::Incompatible(format!(
                "model was trained on encoding {}, cache holds {encode_hash}",
                self.provenance.encode_hash
            )));
        }
        Ok(())
    }
}
