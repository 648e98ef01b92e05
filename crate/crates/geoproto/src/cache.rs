//! Encoding cache: one bit-packed file per sample plus a JSON index.
//!
//! Sample file layout (little-endian):
//!
//! ```text
//! b"GPC1"
//! u32 size, n_map_features, n_temporal_features, n_windows, channels
//! [32] encoding hash
//! [32] sha256 of the packed payload
//! u64 id, u64 time, u32 row, u32 col, u8 label
//! u64 payload bytes
//! payload: spatial bits then temporal bits, least significant bit first
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use geoproto_core::encoder::{ConceptTensor, CHANNELS};
use geoproto_core::explain::SampleMeta;
use geoproto_core::grid::Split;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::hashing::{from_hex, sha256, to_hex, Hash};

const MAGIC: &[u8; 4] = b"GPC1";
pub const INDEX: &str = "index.json";

pub fn pack_bits(bits: impl IntoIterator<Item = u8>) -> Vec<u8> {
    let mut out = Vec::new();
    for (i, b) in bits.into_iter().enumerate() {
        if i % 8 == 0 {
            out.push(0);
        }
        if b != 0 {
            *out.last_mut().unwrap() |= 1 << (i % 8);
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], n: usize) -> Vec<u8> {
    (0..n).map(|i| (bytes[i / 8] >> (i % 8)) & 1).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedMeta {
    #[serde(flatten)]
    pub meta: SampleMeta,
    pub label: u8,
}

pub fn encode_sample(c: &ConceptTensor, m: &CachedMeta, hash: &Hash) -> Vec<u8> {
    let payload = pack_bits(c.spatial.iter().chain(&c.temporal).copied());
    let mut out = Vec::with_capacity(payload.len() + 128);
    out.extend_from_slice(MAGIC);
    for v in [c.size, c.n_map_features, c.n_temporal_features, c.n_windows, CHANNELS] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(hash);
    out.extend_from_slice(&sha256(&payload));
    out.extend_from_slice(&(m.meta.id as u64).to_le_bytes());
    out.extend_from_slice(&(m.meta.time as u64).to_le_bytes());
    out.extend_from_slice(&(m.meta.center.0 as u32).to_le_bytes());
    out.extend_from_slice(&(m.meta.center.1 as u32).to_le_bytes());
    out.push(m.label);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<usize> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?) as usize)
    }

    fn u64(&mut self) -> Option<usize> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?) as usize)
    }
}

/// Parse a sample file. A foreign encoding hash is an incompatibility; a
/// damaged file is a data error.
pub fn decode_sample(bytes: &[u8], expected: &Hash, what: &str) -> AppResult<(ConceptTensor, CachedMeta)> {
    let corrupt = || AppError::Data(format!("{what}: truncated or corrupt cache file"));
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).ok_or_else(corrupt)? != MAGIC {
        return Err(AppError::Data(format!("{what}: not a cache file")));
    }
    let mut dims = [0usize; 5];
    for d in dims.iter_mut() {
        *d = r.u32().ok_or_else(corrupt)?;
    }
    let [size, nm, nt, nw, ch] = dims;
    if ch != CHANNELS {
        return Err(AppError::Incompatible(format!("{what}: {ch} channels, expected {CHANNELS}")));
    }
    let hash = r.take(32).ok_or_else(corrupt)?;
    if hash != expected {
        return Err(AppError::Incompatible(format!(
            "{what}: encoded under {}, expected {}; re-run encode",
            hex_of(hash),
            to_hex(expected)
        )));
    }
    let checksum: Hash = r.take(32).ok_or_else(corrupt)?.try_into().unwrap();
    let id = r.u64().ok_or_else(corrupt)?;
    let time = r.u64().ok_or_else(corrupt)?;
    let row = r.u32().ok_or_else(corrupt)?;
    let col = r.u32().ok_or_else(corrupt)?;
    let label = r.take(1).ok_or_else(corrupt)?[0];
    let len = r.u64().ok_or_else(corrupt)?;
    let payload = r.take(len).ok_or_else(corrupt)?;
    if r.pos != bytes.len() || sha256(payload) != checksum {
        return Err(AppError::Data(format!("{what}: checksum mismatch")));
    }
    let mut c = ConceptTensor::zeros(size, nm, nt, nw);
    let (ns, ntb) = (c.spatial.len(), c.temporal.len());
    if len != (ns + ntb).div_ceil(8) {
        return Err(corrupt());
    }
    let bits = unpack_bits(payload, ns + ntb);
    c.spatial.copy_from_slice(&bits[..ns]);
    c.temporal.copy_from_slice(&bits[ns..]);
    let meta = CachedMeta {
        meta: SampleMeta {
            id,
            time,
            center: (row, col),
        },
        label,
    };
    Ok((c, meta))
}

fn hex_of(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheIndex {
    pub encode_hash: String,
    pub config_hash: String,
    pub data_hash: String,
    pub epoch_weekday: u8,
    pub grid: (usize, usize),
    pub samples: Vec<CachedMeta>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl CacheIndex {
    pub fn split(&self) -> Split {
        Split {
            train: self.train.clone(),
            validation: self.validation.clone(),
            test: self.test.clone(),
        }
    }
}

/// Cache directory for one encoding hash.
#[derive(Debug, Clone)]
pub struct Cache {
    pub dir: PathBuf,
    pub hash: String,
}

impl Cache {
    pub fn new(root: &Path, encode_hash: &str) -> Self {
        Self {
            dir: root.join(encode_hash),
            hash: encode_hash.to_string(),
        }
    }

    fn raw_hash(&self) -> AppResult<Hash> {
        from_hex(&self.hash).ok_or_else(|| AppError::Data(format!("malformed hash {}", self.hash)))
    }

    pub fn sample_path(&self, id: usize) -> PathBuf {
        self.dir.join("samples").join(format!("s{id:07}.gpc"))
    }

    pub fn baselines_path(&self) -> PathBuf {
        self.dir.join("baselines.bin")
    }

    pub fn index_path(&self) -> PathBuf {
        self.dir.join(INDEX)
    }

    pub fn write_sample(&self, c: &ConceptTensor, m: &CachedMeta) -> AppResult<()> {
        let p = self.sample_path(m.meta.id);
        let dir = p.parent().unwrap();
        fs::create_dir_all(dir).map_err(AppError::io(dir))?;
        fs::write(&p, encode_sample(c, m, &self.raw_hash()?)).map_err(AppError::io(&p))
    }

    pub fn read_sample(&self, id: usize) -> AppResult<(ConceptTensor, CachedMeta)> {
        let p = self.sample_path(id);
        let bytes = fs::read(&p).map_err(AppError::io(&p))?;
        decode_sample(&bytes, &self.raw_hash()?, &p.display().to_string())
    }

    pub fn write_index(&self, index: &CacheIndex) -> AppResult<()> {
        fs::create_dir_all(&self.dir).map_err(AppError::io(&self.dir))?;
        let p = self.index_path();
        let text = serde_json::to_string(index).expect("index serializes");
        fs::write(&p, text).map_err(AppError::io(&p))
    }

    /// `None` when no index has been written yet.
    pub fn read_index(&self) -> AppResult<Option<CacheIndex>> {
        let p = self.index_path();
        if !p.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&p).map_err(AppError::io(&p))?;
        let index: CacheIndex =
            serde_json::from_str(&text).map_err(|e| AppError::Data(format!("{}: {e}", p.display())))?;
        if index.encode_hash != self.hash {
            return Err(AppError::Incompatible(format!(
                "{}: written for encoding {}, expected {}; re-run encode",
                p.display(),
                index.encode_hash,
                self.hash
            )));
        }
        Ok(Some(index))
    }

    /// Whether the index and every sample file are present.
    pub fn is_complete(&self) -> AppResult<bool> {
        Ok(match self.read_index()? {
            Some(index) => index.samples.iter().all(|m| self.sample_path(m.meta.id).exists()),
            None => false,
        })
    }
}
