//! Dataset directories: `manifest.json` plus raw little-endian tensors.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/F_T.bin   f32 [T][f_t]
//! <dir>/F_S.bin   f32 [m][n][f_s]
//! <dir>/F_ST.bin  f32 [T][m][n][f_st]
//! <dir>/Y.u8      u8  [T][m][n]
//! ```

use std::fs;
use std::path::Path;

use geoproto_core::grid::{FeatureMeta, GridDataset, GridSpec};
use geoproto_core::synth::GroundTruth;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::hashing::Chain;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub m: usize,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub f_t: usize,
    pub f_s: usize,
    pub f_st: usize,
    pub features: Vec<FeatureMeta>,
    pub endianness: String,
    pub dtype: String,
    /// Day of week of interval 0, Monday = 0.
    #[serde(default)]
    pub epoch_weekday: u8,
    #[serde(default = "default_interval")]
    pub interval: String,
    #[serde(default = "default_cell")]
    pub cell_size: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
    /// Hash of the generator settings for synthetic data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
}

fn default_interval() -> String {
    "1 day".into()
}

fn default_cell() -> String {
    "1 cell".into()
}

impl Manifest {
    pub fn for_dataset(ds: &GridDataset, ground_truth: Option<GroundTruth>) -> Self {
        let s = ds.spec();
        Self {
            m: s.rows,
            n: s.cols,
            t: s.intervals,
            f_t: s.n_temporal,
            f_s: s.n_spatial,
            f_st: s.n_spatiotemporal,
            features: ds.features().to_vec(),
            endianness: "little".into(),
            dtype: "f32".into(),
            epoch_weekday: ds.epoch_weekday,
            interval: s.interval_label.clone(),
            cell_size: s.cell_size_label.clone(),
            ground_truth,
            generator: None,
        }
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            rows: self.m,
            cols: self.n,
            intervals: self.t,
            n_temporal: self.f_t,
            n_spatial: self.f_s,
            n_spatiotemporal: self.f_st,
            interval_label: self.interval.clone(),
            cell_size_label: self.cell_size.clone(),
        }
    }
}

fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn read_f32(path: &Path) -> AppResult<Vec<f32>> {
    let bytes = fs::read(path).map_err(AppError::io(path))?;
    if bytes.len() % 4 != 0 {
        return Err(AppError::Data(format!("{}: length {} is not a multiple of 4", path.display(), bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

pub fn write_dataset(dir: &Path, ds: &GridDataset, manifest: &Manifest) -> AppResult<()> {
    fs::create_dir_all(dir).map_err(AppError::io(dir))?;
    let put = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(AppError::io(&p))
    };
    put("F_T.bin", &f32_bytes(ds.temporal()))?;
    put("F_S.bin", &f32_bytes(ds.spatial()))?;
    put("F_ST.bin", &f32_bytes(ds.spatiotemporal()))?;
    put("Y.u8", ds.labels())?;
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    put(MANIFEST, text.as_bytes())
}

pub fn read_manifest(dir: &Path) -> AppResult<Manifest> {
    let p = dir.join(MANIFEST);
    let text = fs::read_to_string(&p).map_err(AppError::io(&p))?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| AppError::Data(format!("{}: {e}", p.display())))?;
    if m.endianness != "little" || m.dtype != "f32" {
        return Err(AppError::Data(format!(
            "{}: unsupported layout {}/{}",
            p.display(),
            m.endianness,
            m.dtype
        )));
    }
    if m.epoch_weekday > 6 {
        return Err(AppError::Data(format!("{}: epoch_weekday must be 0..=6", p.display())));
    }
    Ok(m)
}

pub fn read_dataset(dir: &Path) -> AppResult<(GridDataset, Manifest)> {
    let manifest = read_manifest(dir)?;
    let y_path = dir.join("Y.u8");
    let labels = fs::read(&y_path).map_err(AppError::io(&y_path))?;
    let mut ds = GridDataset::new(
        manifest.grid_spec(),
        read_f32(&dir.join("F_T.bin"))?,
        read_f32(&dir.join("F_S.bin"))?,
        read_f32(&dir.join("F_ST.bin"))?,
        labels,
        manifest.features.clone(),
    )
    .map_err(|e| AppError::Data(format!("{}: {e}", dir.display())))?;
    ds.epoch_weekday = manifest.epoch_weekday;
    Ok((ds, manifest))
}

/// Content hash over the tensors and the fields of the manifest that shape
/// them.
pub fn dataset_hash(ds: &GridDataset) -> String {
    Chain::new("dataset")
        .json(ds.spec())
        .json(&ds.features())
        .part(&[ds.epoch_weekday])
        .part(&f32_bytes(ds.temporal()))
        .part(&f32_bytes(ds.spatial()))
        .part(&f32_bytes(ds.spatiotemporal()))
        .part(ds.labels())
        .hex()
}
