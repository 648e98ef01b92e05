//! Study-field rasters and per-cell classification windows.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum FeatureKind {
    Temporal,
    Spatial,
    Spatiotemporal,
}

/// How a feature is distributed, which decides the significance test used on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum DistHint {
    Count,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureMeta {
    pub name: String,
    pub kind: FeatureKind,
    pub dist_hint: DistHint,
}

impl FeatureMeta {
    pub fn new(name: impl Into<String>, kind: FeatureKind, dist_hint: DistHint) -> Self {
        Self {
            name: name.into(),
            kind,
            dist_hint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub intervals: usize,
    pub n_temporal: usize,
    pub n_spatial: usize,
    pub n_spatiotemporal: usize,
    pub interval_label: String,
    pub cell_size_label: String,
}

impl GridSpec {
    pub fn new(
        rows: usize,
        cols: usize,
        intervals: usize,
        n_temporal: usize,
        n_spatial: usize,
        n_spatiotemporal: usize,
    ) -> Self {
        Self {
            rows,
            cols,
            intervals,
            n_temporal,
            n_spatial,
            n_spatiotemporal,
            interval_label: "1 day".to_string(),
            cell_size_label: "1 cell".to_string(),
        }
    }

    pub fn n_features(&self) -> usize {
        self.n_temporal + self.n_spatial + self.n_spatiotemporal
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidSpec(format!(
                "grid must be at least 1x1, got {}x{}",
                self.rows, self.cols
            )));
        }
        if self.intervals < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least 2 intervals, got {}",
                self.intervals
            )));
        }
        if self.n_features() == 0 {
            return Err(Error::InvalidSpec("no features declared".to_string()));
        }
        Ok(())
    }

    pub fn temporal_len(&self) -> usize {
        self.intervals * self.n_temporal
    }

    pub fn spatial_len(&self) -> usize {
        self.rows * self.cols * self.n_spatial
    }

    pub fn spatiotemporal_len(&self) -> usize {
        self.intervals * self.rows * self.cols * self.n_spatiotemporal
    }

    pub fn labels_len(&self) -> usize {
        self.intervals * self.rows * self.cols
    }
}

/// The full study field. Tensors are row-major with the last index fastest:
/// `temporal[t][f]`, `spatial[r][c][f]`, `spatiotemporal[t][r][c][f]`,
/// `labels[t][r][c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDataset {
    spec: GridSpec,
    temporal: Vec<f32>,
    spatial: Vec<f32>,
    spatiotemporal: Vec<f32>,
    labels: Vec<u8>,
    features: Vec<FeatureMeta>,
    /// Day of week (0 = Monday) of interval 0.
    pub epoch_weekday: u8,
}

fn check_finite(name: &str, values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            tensor: name.to_string(),
            index,
        }),
        None => Ok(()),
    }
}

fn check_len(name: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::ShapeMismatch {
            tensor: name.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

impl GridDataset {
    pub fn new(
        spec: GridSpec,
        temporal: Vec<f32>,
        spatial: Vec<f32>,
        spatiotemporal: Vec<f32>,
        labels: Vec<u8>,
        features: Vec<FeatureMeta>,
    ) -> Result<Self> {
        spec.validate()?;
        check_len("F_T", spec.temporal_len(), temporal.len())?;
        check_len("F_S", spec.spatial_len(), spatial.len())?;
        check_len("F_ST", spec.spatiotemporal_len(), spatiotemporal.len())?;
        check_len("Y", spec.labels_len(), labels.len())?;
        check_finite("F_T", &temporal)?;
        check_finite("F_S", &spatial)?;
        check_finite("F_ST", &spatiotemporal)?;
        if let Some(index) = labels.iter().position(|&y| y > 1) {
            return Err(Error::InvalidLabel {
                tensor: "Y".to_string(),
                index,
                value: labels[index],
            });
        }
        check_len("features", spec.n_features(), features.len())?;
        let count = |k| features.iter().filter(|f| f.kind == k).count();
        if count(FeatureKind::Temporal) != spec.n_temporal
            || count(FeatureKind::Spatial) != spec.n_spatial
            || count(FeatureKind::Spatiotemporal) != spec.n_spatiotemporal
        {
            return Err(Error::InvalidSpec(
                "feature kinds do not partition into f_t/f_s/f_st".to_string(),
            ));
        }
        Ok(Self {
            spec,
            temporal,
            spatial,
            spatiotemporal,
            labels,
            features,
            epoch_weekday: 0,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn features(&self) -> &[FeatureMeta] {
        &self.features
    }

    /// Features of one kind, in tensor column order.
    pub fn features_of(&self, kind: FeatureKind) -> impl Iterator<Item = &FeatureMeta> {
        self.features.iter().filter(move |f| f.kind == kind)
    }

    pub fn temporal(&self) -> &[f32] {
        &self.temporal
    }

    pub fn spatial(&self) -> &[f32] {
        &self.spatial
    }

    pub fn spatiotemporal(&self) -> &[f32] {
        &self.spatiotemporal
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, t: usize, row: usize, col: usize) -> u8 {
        self.labels[(t * self.spec.rows + row) * self.spec.cols + col]
    }
}

/// Addresses one feature column of one tensor kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureRef {
    pub kind: FeatureKind,
    pub index: usize,
}

impl FeatureRef {
    pub fn new(kind: FeatureKind, index: usize) -> Self {
        Self { kind, index }
    }
}

/// One classification instance centred on a target cell.
///
/// `spatial` is `[d][d][f_s]`, `spatiotemporal` is `[t_in][d][d][f_st]` and
/// `temporal` is `[t_in][f_t]`, oldest interval first. Cells outside the study
/// area hold 0 and are `false` in `mask`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    pub id: usize,
    pub center: (usize, usize),
    pub time: usize,
    pub size: usize,
    pub history: usize,
    pub n_temporal: usize,
    pub n_spatial: usize,
    pub n_spatiotemporal: usize,
    pub spatial: Vec<f32>,
    pub spatiotemporal: Vec<f32>,
    pub temporal: Vec<f32>,
    pub mask: Vec<bool>,
    pub label: u8,
}

impl SampleWindow {
    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn valid_cells(&self) -> usize {
        self.mask.iter().filter(|&&v| v).count()
    }

    pub fn spatial_at(&self, row: usize, col: usize, feature: usize) -> f32 {
        self.spatial[(row * self.size + col) * self.n_spatial + feature]
    }

    pub fn spatiotemporal_at(&self, step: usize, row: usize, col: usize, feature: usize) -> f32 {
        let d = self.size;
        self.spatiotemporal[((step * d + row) * d + col) * self.n_spatiotemporal + feature]
    }

    pub fn temporal_at(&self, step: usize, feature: usize) -> f32 {
        self.temporal[step * self.n_temporal + feature]
    }

    /// The `d x d` map of a spatial or spatiotemporal feature, the latter
    /// mean-flattened over the history. Padded cells read 0.
    pub fn spatial_map(&self, feature: FeatureRef) -> Vec<f64> {
        let cells = self.size * self.size;
        match feature.kind {
            FeatureKind::Spatial => (0..cells)
                .map(|c| self.spatial[c * self.n_spatial + feature.index] as f64)
                .collect(),
            FeatureKind::Spatiotemporal => {
                let mut out = vec![0.0f64; cells];
                for step in 0..self.history {
                    for (c, v) in out.iter_mut().enumerate() {
                        *v += self.spatiotemporal
                            [(step * cells + c) * self.n_spatiotemporal + feature.index]
                            as f64;
                    }
                }
                let h = self.history as f64;
                out.iter_mut().for_each(|v| *v /= h);
                out
            }
            FeatureKind::Temporal => panic!("temporal feature has no spatial map"),
        }
    }

    /// History of a temporal feature, oldest first.
    pub fn temporal_series(&self, feature: usize) -> Vec<f64> {
        (0..self.history)
            .map(|step| self.temporal_at(step, feature) as f64)
            .collect()
    }

    /// Unmasked observations of a feature: valid cells of its flattened map,
    /// or the full history for temporal features.
    pub fn observations(&self, feature: FeatureRef) -> Vec<f64> {
        match feature.kind {
            FeatureKind::Temporal => self.temporal_series(feature.index),
            _ => self
                .spatial_map(feature)
                .into_iter()
                .zip(&self.mask)
                .filter(|(_, &valid)| valid)
                .map(|(v, _)| v)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ExtractConfig {
    /// Window side `d`, odd.
    pub size: usize,
    /// Intervals of history `t_in` per sample.
    pub history: usize,
    pub stride: usize,
    /// Negative:positive ratio to subsample negatives to.
    pub balance: Option<f64>,
    pub seed: u64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            size: 9,
            history: 1,
            stride: 1,
            balance: None,
            seed: 0,
        }
    }
}

impl ExtractConfig {
    pub fn validate_for(&self, spec: &GridSpec) -> Result<()> {
        if self.size.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "window size must be odd, got {}",
                self.size
            )));
        }
        if self.size > 2 * spec.rows.min(spec.cols) {
            return Err(Error::InvalidParameter(format!(
                "window size {} too large for a {}x{} grid",
                self.size, spec.rows, spec.cols
            )));
        }
        if self.history == 0 || self.history > spec.intervals - 1 {
            return Err(Error::InvalidParameter(format!(
                "history {} outside 1..={}",
                self.history,
                spec.intervals - 1
            )));
        }
        if self.stride == 0 {
            return Err(Error::InvalidParameter("stride must be >= 1".to_string()));
        }
        if let Some(r) = self.balance {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "balance ratio must be positive, got {r}"
                )));
            }
        }
        Ok(())
    }
}

fn extract_one(ds: &GridDataset, cfg: &ExtractConfig, time: usize, row: usize, col: usize) -> SampleWindow {
    let spec = &ds.spec;
    let d = cfg.size;
    let r = (d / 2) as isize;
    let (fs, fst, ft) = (spec.n_spatial, spec.n_spatiotemporal, spec.n_temporal);
    let mut spatial = vec![0.0f32; d * d * fs];
    let mut spatiotemporal = vec![0.0f32; cfg.history * d * d * fst];
    let mut mask = vec![false; d * d];
    let first = time + 1 - cfg.history;

    for wr in 0..d {
        let gr = row as isize + wr as isize - r;
        if gr < 0 || gr >= spec.rows as isize {
            continue;
        }
        for wc in 0..d {
            let gc = col as isize + wc as isize - r;
            if gc < 0 || gc >= spec.cols as isize {
                continue;
            }
            let (gr, gc) = (gr as usize, gc as usize);
            let cell = wr * d + wc;
            mask[cell] = true;
            let src = (gr * spec.cols + gc) * fs;
            spatial[cell * fs..(cell + 1) * fs].copy_from_slice(&ds.spatial[src..src + fs]);
            for step in 0..cfg.history {
                let t = first + step;
                let src = ((t * spec.rows + gr) * spec.cols + gc) * fst;
                let dst = (step * d * d + cell) * fst;
                spatiotemporal[dst..dst + fst].copy_from_slice(&ds.spatiotemporal[src..src + fst]);
            }
        }
    }
    let temporal = ds.temporal[first * ft..(time + 1) * ft].to_vec();

    SampleWindow {
        id: 0,
        center: (row, col),
        time,
        size: d,
        history: cfg.history,
        n_temporal: ft,
        n_spatial: fs,
        n_spatiotemporal: fst,
        spatial,
        spatiotemporal,
        temporal,
        mask,
        label: ds.label(time + 1, row, col),
    }
}

/// Cut one window per (time, lattice cell). Inputs come from intervals
/// `time - history + 1 ..= time`, the label from `time + 1`.
pub fn extract_samples(ds: &GridDataset, cfg: &ExtractConfig) -> Result<Vec<SampleWindow>> {
    let spec = &ds.spec;
    cfg.validate_for(spec)?;
    let mut out = Vec::new();
    for time in (cfg.history - 1)..=(spec.intervals - 2) {
        for row in (0..spec.rows).step_by(cfg.stride) {
            for col in (0..spec.cols).step_by(cfg.stride) {
                out.push(extract_one(ds, cfg, time, row, col));
            }
        }
    }

    if let Some(ratio) = cfg.balance {
        let positives = out.iter().filter(|s| s.label == 1).count();
        if positives == 0 {
            return Err(Error::NoPositives);
        }
        let mut negatives: Vec<usize> = out
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == 0)
            .map(|(i, _)| i)
            .collect();
        let keep = libm::round(ratio * positives as f64) as usize;
        if keep < negatives.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            negatives.shuffle(&mut rng);
            let mut dropped = vec![false; out.len()];
            for &i in &negatives[keep..] {
                dropped[i] = true;
            }
            let mut i = 0;
            out.retain(|_| {
                let keep = !dropped[i];
                i += 1;
                keep
            });
        }
    }

    for (id, s) in out.iter_mut().enumerate() {
        s.id = id;
    }
    Ok(out)
}

/// Index sets of a seeded train/validation/test split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffle `0..n` with `seed` and cut it by the train and validation
/// fractions; the remainder is the test set. Each part is returned sorted.
pub fn split_indices(n: usize, train: f64, validation: f64, seed: u64) -> Result<Split> {
    if !(train > 0.0 && validation >= 0.0 && train + validation <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "split fractions train={train} validation={validation} are not a valid partition"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_train = libm::round(train * n as f64) as usize;
    let n_val = (libm::round(validation * n as f64) as usize).min(n - n_train);
    let mut tr = idx[..n_train].to_vec();
    let mut va = idx[n_train..n_train + n_val].to_vec();
    let mut te = idx[n_train + n_val..].to_vec();
    tr.sort_unstable();
    va.sort_unstable();
    te.sort_unstable();
    Ok(Split {
        train: tr,
        validation: va,
        test: te,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_dataset(m: usize, n: usize, t: usize) -> GridDataset {
        let spec = GridSpec::new(m, n, t, 1, 1, 1);
        let temporal = (0..t).map(|i| i as f32).collect();
        let spatial = (0..m * n).map(|i| i as f32).collect();
        let spatiotemporal = (0..t * m * n).map(|i| (i % 7) as f32).collect();
        let labels = (0..t * m * n).map(|i| (i % 5 == 0) as u8).collect();
        let features = vec![
            FeatureMeta::new("temp", FeatureKind::Temporal, DistHint::Continuous),
            FeatureMeta::new("poi", FeatureKind::Spatial, DistHint::Continuous),
            FeatureMeta::new("taxi", FeatureKind::Spatiotemporal, DistHint::Count),
        ];
        GridDataset::new(spec, temporal, spatial, spatiotemporal, labels, features).unwrap()
    }

    #[test]
    fn sample_count_for_small_grid() {
        let ds = toy_dataset(9, 9, 4);
        let cfg = ExtractConfig {
            history: 2,
            ..Default::default()
        };
        assert_eq!(extract_samples(&ds, &cfg).unwrap().len(), 162);
    }

    #[test]
    fn corner_window_padding() {
        let ds = toy_dataset(9, 9, 4);
        let samples = extract_samples(&ds, &ExtractConfig::default()).unwrap();
        let corner = samples.iter().find(|s| s.center == (0, 0)).unwrap();
        // oracle: enumerate window offsets that land inside the grid
        let mut inside = 0;
        for dr in -4i32..=4 {
            for dc in -4i32..=4 {
                if (0..9).contains(&dr) && (0..9).contains(&dc) {
                    inside += 1;
                }
            }
        }
        assert_eq!(81 - inside, 56);
        assert_eq!(corner.mask.iter().filter(|&&v| !v).count(), 56);
        for (i, &valid) in corner.mask.iter().enumerate() {
            if !valid {
                assert_eq!(corner.spatial[i], 0.0);
            }
        }
    }

    #[test]
    fn labels_and_inputs_do_not_leak() {
        let ds = toy_dataset(5, 6, 5);
        let cfg = ExtractConfig {
            size: 3,
            history: 2,
            ..Default::default()
        };
        for s in extract_samples(&ds, &cfg).unwrap() {
            assert_eq!(s.label, ds.label(s.time + 1, s.center.0, s.center.1));
            // centre cell of the last history step is the grid value at `time`
            let (r, c) = s.center;
            let gi = (s.time * 5 + r) * 6 + c;
            assert_eq!(s.spatiotemporal_at(1, 1, 1, 0), ds.spatiotemporal()[gi]);
            assert_eq!(s.temporal_at(1, 0), s.time as f32);
        }
    }

    #[test]
    fn stride_lattice_count() {
        let ds = toy_dataset(9, 7, 6);
        let cfg = ExtractConfig {
            size: 3,
            history: 2,
            stride: 2,
            ..Default::default()
        };
        let n = extract_samples(&ds, &cfg).unwrap().len();
        assert_eq!(n, (6 - 2) * 5 * 4);
    }

    #[test]
    fn balance_without_positives_fails() {
        let spec = GridSpec::new(3, 3, 3, 0, 1, 0);
        let ds = GridDataset::new(
            spec,
            vec![],
            vec![1.0; 9],
            vec![],
            vec![0; 27],
            vec![FeatureMeta::new("s", FeatureKind::Spatial, DistHint::Continuous)],
        )
        .unwrap();
        let cfg = ExtractConfig {
            size: 3,
            balance: Some(1.0),
            ..Default::default()
        };
        assert_eq!(extract_samples(&ds, &cfg), Err(Error::NoPositives));
    }

    #[test]
    fn balance_subsamples_negatives() {
        let ds = toy_dataset(9, 9, 4);
        let cfg = ExtractConfig {
            balance: Some(1.0),
            seed: 3,
            ..Default::default()
        };
        let s = extract_samples(&ds, &cfg).unwrap();
        let pos = s.iter().filter(|w| w.label == 1).count();
        assert_eq!(s.len(), 2 * pos);
        assert_eq!(s, extract_samples(&ds, &cfg).unwrap());
        assert!(s.iter().enumerate().all(|(i, w)| w.id == i));
    }

    #[test]
    fn rejects_bad_parameters() {
        let ds = toy_dataset(4, 4, 3);
        let bad = [
            ExtractConfig { size: 4, ..Default::default() },
            ExtractConfig { size: 9, ..Default::default() },
            ExtractConfig { size: 3, history: 3, ..Default::default() },
            ExtractConfig { size: 3, history: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(extract_samples(&ds, &cfg), Err(Error::InvalidParameter(_))));
        }
    }

    #[test]
    fn dataset_validation_names_tensor() {
        let spec = GridSpec::new(9, 9, 4, 1, 1, 1);
        let err = GridDataset::new(
            spec,
            vec![0.0; 4],
            vec![0.0; 162],
            vec![0.0; 324],
            vec![0; 324],
            vec![
                FeatureMeta::new("a", FeatureKind::Temporal, DistHint::Continuous),
                FeatureMeta::new("b", FeatureKind::Spatial, DistHint::Continuous),
                FeatureMeta::new("c", FeatureKind::Spatiotemporal, DistHint::Count),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { ref tensor, .. } if tensor == "F_S"));

        let mut st = vec![0.0; 324];
        st[17] = f32::NAN;
        let err = GridDataset::new(
            GridSpec::new(9, 9, 4, 1, 1, 1),
            vec![0.0; 4],
            vec![0.0; 81],
            st,
            vec![0; 324],
            vec![
                FeatureMeta::new("a", FeatureKind::Temporal, DistHint::Continuous),
                FeatureMeta::new("b", FeatureKind::Spatial, DistHint::Continuous),
                FeatureMeta::new("c", FeatureKind::Spatiotemporal, DistHint::Count),
            ],
        )
        .unwrap_err();
        assert_eq!(
            err,
            Error::NonFinite {
                tensor: "F_ST".into(),
                index: 17
            }
        );
    }

    #[test]
    fn split_is_a_partition() {
        let s = split_indices(100, 0.7, 0.15, 9).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (70, 15, 15));
    }
}
