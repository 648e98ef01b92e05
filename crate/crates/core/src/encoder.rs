//! Statistically guided concept encoding.
//!
//! Every feature is scanned with each configured window size. At each window
//! position a global test (against the training-set baseline) and a local test
//! (against the sample's own cells) are run, and a significant outcome sets a
//! bit at the window's centre in one of four channels:
//! `[global-higher, global-lower, local-higher, local-lower]`.
//!
//! Spatiotemporal features are averaged over the history first. Temporal
//! features are scanned with 1-D windows and reduced to one bit per
//! (feature, window, channel).

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{DistHint, FeatureKind, FeatureMeta, FeatureRef, SampleWindow};
use crate::stats::{self, BaselineDist, Scope, TestOutcome};

pub const CHANNELS: usize = 4;
pub const CHANNEL_NAMES: [&str; CHANNELS] =
    ["global-higher", "global-lower", "local-higher", "local-lower"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum TestKind {
    Poisson,
    Ks,
}

impl From<DistHint> for TestKind {
    fn from(h: DistHint) -> Self {
        match h {
            DistHint::Count => TestKind::Poisson,
            DistHint::Continuous => TestKind::Ks,
        }
    }
}

impl TestKind {
    pub fn hint(self) -> DistHint {
        match self {
            TestKind::Poisson => DistHint::Count,
            TestKind::Ks => DistHint::Continuous,
        }
    }
}

/// How windows that reach past the sample edge are tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum PaddingMode {
    /// Padded and out-of-sample cells are left out of the test.
    #[default]
    Mask,
    /// Padded cells enter the test as literal zeros.
    Literal,
}

/// Reduction of a temporal feature's per-position bits to one bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum TemporalCollapse {
    /// Set if significant at any position.
    #[default]
    Any,
    /// Set if significant at no fewer than half the positions.
    Majority,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EncodedFeature {
    pub name: String,
    pub feature: FeatureRef,
    pub test: TestKind,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConceptSpec {
    /// Scan window sizes, odd. Square sides for maps, lengths for temporal.
    pub window_sizes: Vec<usize>,
    pub alpha: f64,
    /// Map features (spatial then spatiotemporal) followed by temporal ones.
    pub features: Vec<EncodedFeature>,
    pub padding: PaddingMode,
    pub temporal_collapse: TemporalCollapse,
}

impl ConceptSpec {
    /// Order the dataset's features and pick each test from its hint.
    pub fn from_features(features: &[FeatureMeta], window_sizes: Vec<usize>, alpha: f64) -> Self {
        let mut out = Vec::with_capacity(features.len());
        for kind in [FeatureKind::Spatial, FeatureKind::Spatiotemporal, FeatureKind::Temporal] {
            for (index, meta) in features.iter().filter(|f| f.kind == kind).enumerate() {
                out.push(EncodedFeature {
                    name: meta.name.clone(),
                    feature: FeatureRef::new(kind, index),
                    test: meta.dist_hint.into(),
                });
            }
        }
        Self {
            window_sizes,
            alpha,
            features: out,
            padding: PaddingMode::Mask,
            temporal_collapse: TemporalCollapse::Any,
        }
    }

    pub fn validate(&self, sample_size: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.window_sizes.is_empty() {
            return Err(Error::InvalidParameter("no window sizes".to_string()));
        }
        for &w in &self.window_sizes {
            if w == 0 || w % 2 == 0 {
                return Err(Error::InvalidParameter(format!(
                    "window size {w} must be odd and positive"
                )));
            }
            if w > sample_size {
                return Err(Error::InvalidParameter(format!(
                    "window size {w} larger than sample size {sample_size}"
                )));
            }
        }
        let mut seen_temporal = false;
        for f in &self.features {
            match f.feature.kind {
                FeatureKind::Temporal => seen_temporal = true,
                _ if seen_temporal => {
                    return Err(Error::InvalidParameter(
                        "map features must precede temporal features".to_string(),
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn n_windows(&self) -> usize {
        self.window_sizes.len()
    }

    pub fn map_features(&self) -> &[EncodedFeature] {
        &self.features[..self.n_map_features()]
    }

    pub fn temporal_features(&self) -> &[EncodedFeature] {
        &self.features[self.n_map_features()..]
    }

    pub fn n_map_features(&self) -> usize {
        self.features
            .iter()
            .take_while(|f| f.feature.kind != FeatureKind::Temporal)
            .count()
    }

    pub fn n_temporal_features(&self) -> usize {
        self.features.len() - self.n_map_features()
    }
}

/// Global baselines, aligned with [`ConceptSpec::features`].
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalBaselines {
    pub baselines: Vec<BaselineDist>,
}

impl GlobalBaselines {
    pub fn fit(train: &[SampleWindow], spec: &ConceptSpec, compress_threshold: usize) -> Result<Self> {
        let baselines = spec
            .features
            .iter()
            .map(|f| {
                stats::fit_global_baseline(train, f.feature, &f.name, f.test.hint(), compress_threshold)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { baselines })
    }

    pub fn get(&self, i: usize, spec: &ConceptSpec) -> Result<&BaselineDist> {
        let name = &spec.features[i].name;
        match self.baselines.get(i) {
            Some(b) if &b.feature == name && b.scope == Scope::Global => Ok(b),
            _ => Err(Error::MissingBaseline(name.clone())),
        }
    }
}

/// Binary concept maps of one sample.
///
/// `spatial` is `[d][d][F][W][4]` over the map features, `temporal` is
/// `[F_t][W][4]`. Entries are 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptTensor {
    pub size: usize,
    pub n_map_features: usize,
    pub n_temporal_features: usize,
    pub n_windows: usize,
    pub spatial: Vec<u8>,
    pub temporal: Vec<u8>,
}

impl ConceptTensor {
    pub fn zeros(size: usize, n_map_features: usize, n_temporal_features: usize, n_windows: usize) -> Self {
        Self {
            size,
            n_map_features,
            n_temporal_features,
            n_windows,
            spatial: vec![0; size * size * n_map_features * n_windows * CHANNELS],
            temporal: vec![0; n_temporal_features * n_windows * CHANNELS],
        }
    }

    pub fn spatial_shape(&self) -> [usize; 5] {
        [self.size, self.size, self.n_map_features, self.n_windows, CHANNELS]
    }

    pub fn temporal_shape(&self) -> [usize; 3] {
        [self.n_temporal_features, self.n_windows, CHANNELS]
    }

    pub fn spatial_index(&self, row: usize, col: usize, feature: usize, window: usize, channel: usize) -> usize {
        (((row * self.size + col) * self.n_map_features + feature) * self.n_windows + window) * CHANNELS
            + channel
    }

    pub fn temporal_index(&self, feature: usize, window: usize, channel: usize) -> usize {
        (feature * self.n_windows + window) * CHANNELS + channel
    }

    pub fn get(&self, row: usize, col: usize, feature: usize, window: usize, channel: usize) -> u8 {
        self.spatial[self.spatial_index(row, col, feature, window, channel)]
    }

    /// `(feature, window, channel)` of a flat spatial index, ignoring the cell.
    pub fn describe_spatial(&self, flat: usize) -> (usize, usize, usize) {
        let channel = flat % CHANNELS;
        let window = (flat / CHANNELS) % self.n_windows;
        let feature = (flat / (CHANNELS * self.n_windows)) % self.n_map_features;
        (feature, window, channel)
    }

    pub fn count_ones(&self) -> usize {
        self.spatial.iter().chain(&self.temporal).filter(|&&b| b == 1).count()
    }
}

fn channel_bits(global: &TestOutcome, local: Option<&TestOutcome>) -> [bool; CHANNELS] {
    [
        global.is_higher(),
        global.is_lower(),
        local.is_some_and(TestOutcome::is_higher),
        local.is_some_and(TestOutcome::is_lower),
    ]
}

fn run_test(test: TestKind, values: &[f64], baseline: &BaselineDist, alpha: f64) -> Result<TestOutcome> {
    match test {
        TestKind::Poisson => {
            let sum: f64 = values.iter().sum();
            stats::poisson_lrt(sum, values.len(), baseline, alpha)
        }
        TestKind::Ks => stats::ks_test(values, baseline, alpha),
    }
}

/// A local baseline, or `None` when the sample has fewer than two usable
/// observations and local tests are skipped.
fn local_baseline(name: &str, test: TestKind, observations: &[f64]) -> Result<Option<BaselineDist>> {
    if observations.len() < 2 {
        return Ok(None);
    }
    BaselineDist::fit(name, Scope::Local, test.hint(), observations, usize::MAX).map(Some)
}

/// Values under a `w x w` window centred at `(row, col)` of a `d x d` map, in
/// row-major order. Mask mode drops padded and out-of-sample cells; literal
/// mode reads them as 0.
#[allow(clippy::too_many_arguments)]
fn window_values(
    map: &[f64],
    mask: &[bool],
    d: usize,
    row: usize,
    col: usize,
    w: usize,
    padding: PaddingMode,
    out: &mut Vec<f64>,
) {
    out.clear();
    let h = (w / 2) as isize;
    for dr in -h..=h {
        let r = row as isize + dr;
        for dc in -h..=h {
            let c = col as isize + dc;
            let inside = r >= 0 && r < d as isize && c >= 0 && c < d as isize;
            let cell = inside.then(|| r as usize * d + c as usize);
            match (padding, cell) {
                (PaddingMode::Mask, Some(i)) if mask[i] => out.push(map[i]),
                (PaddingMode::Mask, _) => {}
                (PaddingMode::Literal, Some(i)) => out.push(map[i]),
                (PaddingMode::Literal, None) => out.push(0.0),
            }
        }
    }
}

/// Encode one sample into binary concept maps.
pub fn concept_conv(sample: &SampleWindow, spec: &ConceptSpec, globals: &GlobalBaselines) -> Result<ConceptTensor> {
    spec.validate(sample.size)?;
    if globals.baselines.len() != spec.features.len() {
        let missing = spec
            .features
            .get(globals.baselines.len())
            .map_or_else(String::new, |f| f.name.clone());
        return Err(Error::MissingBaseline(missing));
    }
    let d = sample.size;
    let n_map = spec.n_map_features();
    let mut out = ConceptTensor::zeros(d, n_map, spec.n_temporal_features(), spec.n_windows());
    let literal = spec.padding == PaddingMode::Literal;
    let full_mask = vec![true; d * d];
    let mask: &[bool] = if literal { &full_mask } else { &sample.mask };
    let mut values = Vec::with_capacity(d * d);

    for (fi, feat) in spec.map_features().iter().enumerate() {
        let global = globals.get(fi, spec)?;
        let map = sample.spatial_map(feat.feature);
        let obs: Vec<f64> = map.iter().zip(mask).filter(|(_, &v)| v).map(|(&x, _)| x).collect();
        let local = local_baseline(&feat.name, feat.test, &obs)?;

        for (wi, &w) in spec.window_sizes.iter().enumerate() {
            for row in 0..d {
                for col in 0..d {
                    window_values(&map, mask, d, row, col, w, spec.padding, &mut values);
                    if values.is_empty() {
                        continue;
                    }
                    let g = run_test(feat.test, &values, global, spec.alpha)?;
                    let l = match &local {
                        Some(b) => Some(run_test(feat.test, &values, b, spec.alpha)?),
                        None => None,
                    };
                    for (ch, bit) in channel_bits(&g, l.as_ref()).into_iter().enumerate() {
                        if bit {
                            let i = out.spatial_index(row, col, fi, wi, ch);
                            out.spatial[i] = 1;
                        }
                    }
                }
            }
        }
    }

    for (ti, feat) in spec.temporal_features().iter().enumerate() {
        let global = globals.get(n_map + ti, spec)?;
        let series = sample.temporal_series(feat.feature.index);
        let local = local_baseline(&feat.name, feat.test, &series)?;
        let steps = series.len();

        for (wi, &w) in spec.window_sizes.iter().enumerate() {
            let mut hits = [0usize; CHANNELS];
            for pos in 0..steps {
                let h = w / 2;
                values.clear();
                for i in pos as isize - h as isize..=(pos + h) as isize {
                    if i >= 0 && (i as usize) < steps {
                        values.push(series[i as usize]);
                    } else if literal {
                        values.push(0.0);
                    }
                }
                let g = run_test(feat.test, &values, global, spec.alpha)?;
                let l = match &local {
                    Some(b) => Some(run_test(feat.test, &values, b, spec.alpha)?),
                    None => None,
                };
                for (ch, bit) in channel_bits(&g, l.as_ref()).into_iter().enumerate() {
                    hits[ch] += bit as usize;
                }
            }
            for (ch, &n) in hits.iter().enumerate() {
                let set = match spec.temporal_collapse {
                    TemporalCollapse::Any => n > 0,
                    TemporalCollapse::Majority => 2 * n >= steps && n > 0,
                };
                if set {
                    let i = out.temporal_index(ti, wi, ch);
                    out.temporal[i] = 1;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{DistHint, FeatureKind};

    fn count_sample(values: Vec<f32>, d: usize) -> SampleWindow {
        SampleWindow {
            id: 0,
            center: (4, 4),
            time: 0,
            size: d,
            history: 1,
            n_temporal: 0,
            n_spatial: 0,
            n_spatiotemporal: 1,
            spatial: vec![],
            spatiotemporal: values,
            temporal: vec![],
            mask: vec![true; d * d],
            label: 0,
        }
    }

    fn count_spec(windows: Vec<usize>) -> ConceptSpec {
        let feats = [FeatureMeta::new("taxi", FeatureKind::Spatiotemporal, DistHint::Count)];
        ConceptSpec::from_features(&feats, windows, 0.05)
    }

    fn rate_baseline(rate: f64) -> GlobalBaselines {
        GlobalBaselines {
            baselines: vec![BaselineDist {
                feature: "taxi".to_string(),
                scope: Scope::Global,
                kind: stats::BaselineKind::Poisson { rate },
            }],
        }
    }

    #[test]
    fn constant_field_at_global_mean_is_silent() {
        let s = count_sample(vec![4.0; 81], 9);
        let c = concept_conv(&s, &count_spec(vec![3, 5]), &rate_baseline(4.0)).unwrap();
        assert_eq!(c.spatial.len(), 81 * 2 * 4);
        assert_eq!(c.count_ones(), 0);
    }

    #[test]
    fn planted_hotspot_marks_centre() {
        let mut v = vec![2.0f32; 81];
        for r in 3..6 {
            for c in 3..6 {
                v[r * 9 + c] = 10.0;
            }
        }
        let s = count_sample(v, 9);
        let spec = count_spec(vec![3]);
        let c = concept_conv(&s, &spec, &rate_baseline(2.0)).unwrap();
        assert_eq!(c.get(4, 4, 0, 0, 0), 1);
        assert_eq!(c.get(4, 4, 0, 0, 1), 0);
        // hotspot also stands out against the rest of the sample
        assert_eq!(c.get(4, 4, 0, 0, 2), 1);
        assert_eq!(c.get(0, 0, 0, 0, 0), 0);
    }

    #[test]
    fn hotspot_bit_is_monotone_in_intensity() {
        let mut prev = 0;
        for level in [2.0f32, 3.0, 4.0, 6.0, 10.0, 20.0] {
            let mut v = vec![2.0f32; 81];
            for r in 3..6 {
                for c in 3..6 {
                    v[r * 9 + c] = level;
                }
            }
            let c = concept_conv(&count_sample(v, 9), &count_spec(vec![3]), &rate_baseline(2.0)).unwrap();
            let bit = c.get(4, 4, 0, 0, 0);
            assert!(bit >= prev);
            prev = bit;
        }
        assert_eq!(prev, 1);
    }

    #[test]
    fn shape_follows_features_and_windows() {
        let feats = [
            FeatureMeta::new("t", FeatureKind::Temporal, DistHint::Continuous),
            FeatureMeta::new("a", FeatureKind::Spatial, DistHint::Continuous),
            FeatureMeta::new("b", FeatureKind::Spatial, DistHint::Count),
            FeatureMeta::new("c", FeatureKind::Spatiotemporal, DistHint::Count),
        ];
        let spec = ConceptSpec::from_features(&feats, vec![3, 5], 0.05);
        assert_eq!(spec.n_map_features(), 3);
        let s = SampleWindow {
            id: 0,
            center: (0, 0),
            time: 1,
            size: 9,
            history: 2,
            n_temporal: 1,
            n_spatial: 2,
            n_spatiotemporal: 1,
            spatial: (0..162).map(|i| (i % 11) as f32).collect(),
            spatiotemporal: (0..162).map(|i| (i % 5) as f32).collect(),
            temporal: vec![1.0, 2.0],
            mask: vec![true; 81],
            label: 0,
        };
        let globals = GlobalBaselines::fit(core::slice::from_ref(&s), &spec, usize::MAX).unwrap();
        let c = concept_conv(&s, &spec, &globals).unwrap();
        assert_eq!(c.spatial_shape(), [9, 9, 3, 2, 4]);
        assert_eq!(c.temporal_shape(), [1, 2, 4]);
    }

    #[test]
    fn channels_are_exclusive() {
        let v: Vec<f32> = (0..81).map(|i| ((i * 37) % 13) as f32).collect();
        let c = concept_conv(&count_sample(v, 9), &count_spec(vec![3, 5]), &rate_baseline(5.0)).unwrap();
        for chunk in c.spatial.chunks(4) {
            assert!(chunk[0] + chunk[1] <= 1);
            assert!(chunk[2] + chunk[3] <= 1);
        }
    }

    #[test]
    fn errors() {
        let s = count_sample(vec![1.0; 81], 9);
        let empty = GlobalBaselines { baselines: vec![] };
        assert!(matches!(
            concept_conv(&s, &count_spec(vec![3]), &empty),
            Err(Error::MissingBaseline(n)) if n == "taxi"
        ));
        assert!(matches!(
            concept_conv(&s, &count_spec(vec![11]), &rate_baseline(1.0)),
            Err(Error::InvalidParameter(_))
        ));
        let mut spec = count_spec(vec![3]);
        spec.alpha = 1.5;
        assert!(concept_conv(&s, &spec, &rate_baseline(1.0)).is_err());
    }

    #[test]
    fn masked_cells_are_left_out() {
        // zeros only in padding: mask mode sees a flat field, literal mode a deficit
        let mut s = count_sample(vec![3.0; 81], 9);
        for r in 0..9 {
            for c in 0..4 {
                s.mask[r * 9 + c] = false;
                s.spatiotemporal[r * 9 + c] = 0.0;
            }
        }
        let mut spec = count_spec(vec![5]);
        let masked = concept_conv(&s, &spec, &rate_baseline(3.0)).unwrap();
        assert_eq!(masked.count_ones(), 0);
        spec.padding = PaddingMode::Literal;
        let literal = concept_conv(&s, &spec, &rate_baseline(3.0)).unwrap();
        assert!(literal.get(4, 4, 0, 0, 1) == 1);
    }
}
