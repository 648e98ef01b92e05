//! Concept aggregation: simplex-weighted fusion of the per-window-size concept
//! maps, then pooling over named geographic sub-regions around the target cell.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::encoder::{ConceptSpec, ConceptTensor, CHANNELS};
use crate::error::{Error, Result};
use crate::grid::FeatureKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum PoolMode {
    /// Region mean ("spatial" pooling).
    #[default]
    #[cfg_attr(feature = "serde", serde(alias = "spatial"))]
    Mean,
    Max,
    /// Every cell is its own region.
    None,
}

/// Assignment of window cells to pooling regions.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingPlan {
    pub size: usize,
    pub mode: PoolMode,
    pub ring_radii: Vec<f64>,
    pub sectors: usize,
    pub region_names: Vec<String>,
    /// Region of each cell, row-major over the `d x d` window.
    pub cell_region: Vec<usize>,
    region_sizes: Vec<usize>,
}

fn ring_name(i: usize, rings: usize) -> String {
    match (rings, i) {
        (3, 0) => "near".to_string(),
        (3, 1) => "middle".to_string(),
        (3, 2) => "far".to_string(),
        _ => format!("ring{i}"),
    }
}

fn sector_name(i: usize, sectors: usize) -> String {
    if sectors == 4 {
        ["NE", "NW", "SW", "SE"][i].to_string()
    } else {
        format!("s{i}")
    }
}

impl PoolingPlan {
    pub const DEFAULT_RING_RADII: [f64; 2] = [2.0, 3.5];

    /// The default centre + {near, middle, far} x {NE, NW, SW, SE} plan.
    pub fn default_for(size: usize, mode: PoolMode) -> Result<Self> {
        Self::new(size, mode, Self::DEFAULT_RING_RADII.to_vec(), 4)
    }

    /// Rings are split at the Euclidean `ring_radii` (upper bounds, inclusive),
    /// sectors counter-clockwise from east with north up. The centre cell is
    /// its own region and empty regions are dropped. In [`PoolMode::None`]
    /// every cell is a region.
    pub fn new(size: usize, mode: PoolMode, ring_radii: Vec<f64>, sectors: usize) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!("pooling window {size} must be odd")));
        }
        if sectors == 0 || ring_radii.windows(2).any(|w| !(w[0] < w[1])) || ring_radii.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::InvalidParameter(
                "ring radii must be positive and increasing, sectors >= 1".to_string(),
            ));
        }
        let h = (size / 2) as isize;
        if mode == PoolMode::None {
            let mut names = Vec::with_capacity(size * size);
            for r in -h..=h {
                for c in -h..=h {
                    names.push(format!("cell({r},{c})"));
                }
            }
            return Ok(Self {
                size,
                mode,
                ring_radii,
                sectors,
                region_names: names,
                cell_region: (0..size * size).collect(),
                region_sizes: vec![1; size * size],
            });
        }

        let rings = ring_radii.len() + 1;
        let raw_of = |dr: isize, dc: isize| -> usize {
            if dr == 0 && dc == 0 {
                return 0;
            }
            let dist = libm::sqrt((dr * dr + dc * dc) as f64);
            let ring = ring_radii.iter().position(|&r| dist <= r).unwrap_or(ring_radii.len());
            // north is up, so the y axis points against the row index
            let mut theta = libm::atan2(-dr as f64, dc as f64);
            if theta < 0.0 {
                theta += core::f64::consts::TAU;
            }
            let width = core::f64::consts::TAU / sectors as f64;
            let sector = (libm::floor(theta / width + 1e-9) as usize) % sectors;
            1 + ring * sectors + sector
        };
        let mut raw_cells = Vec::with_capacity(size * size);
        let mut used = vec![false; 1 + rings * sectors];
        for dr in -h..=h {
            for dc in -h..=h {
                let raw = raw_of(dr, dc);
                used[raw] = true;
                raw_cells.push(raw);
            }
        }
        let mut remap = vec![usize::MAX; used.len()];
        let mut names = Vec::new();
        for (raw, _) in used.iter().enumerate().filter(|(_, &u)| u) {
            remap[raw] = names.len();
            names.push(if raw == 0 {
                "center".to_string()
            } else {
                let ring = (raw - 1) / sectors;
                let sector = (raw - 1) % sectors;
                format!("{}-{}", ring_name(ring, rings), sector_name(sector, sectors))
            });
        }
        let cell_region: Vec<usize> = raw_cells.into_iter().map(|r| remap[r]).collect();
        let mut region_sizes = vec![0; names.len()];
        for &r in &cell_region {
            region_sizes[r] += 1;
        }
        Ok(Self {
            size,
            mode,
            ring_radii,
            sectors,
            region_names: names,
            cell_region,
            region_sizes,
        })
    }

    /// A plan from an explicit cell-to-region assignment.
    pub fn from_assignment(size: usize, mode: PoolMode, region_names: Vec<String>, cell_region: Vec<usize>) -> Result<Self> {
        if cell_region.len() != size * size {
            return Err(Error::DimensionMismatch {
                expected: size * size,
                found: cell_region.len(),
            });
        }
        let mut region_sizes = vec![0; region_names.len()];
        for &r in &cell_region {
            match region_sizes.get_mut(r) {
                Some(n) => *n += 1,
                None => return Err(Error::InvalidParameter(format!("cell assigned to unknown region {r}"))),
            }
        }
        if region_sizes.contains(&0) {
            return Err(Error::InvalidParameter("pooling region without cells".to_string()));
        }
        Ok(Self {
            size,
            mode,
            ring_radii: Vec::new(),
            sectors: 0,
            region_names,
            cell_region,
            region_sizes,
        })
    }

    pub fn n_regions(&self) -> usize {
        self.region_names.len()
    }

    pub fn region_size(&self, region: usize) -> usize {
        self.region_sizes[region]
    }

    pub fn cells_of(&self, region: usize) -> impl Iterator<Item = usize> + '_ {
        self.cell_region
            .iter()
            .enumerate()
            .filter(move |(_, &r)| r == region)
            .map(|(c, _)| c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FusionGranularity {
    /// One weight map shared by all features of the same kind.
    #[default]
    PerKind,
    PerFeature,
}

/// Softmax-parameterised fusion weights.
///
/// `logits` holds `[map_block][cell][window]` followed by
/// `[temporal_block][window]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    pub size: usize,
    pub n_windows: usize,
    pub granularity: FusionGranularity,
    /// Block of each map feature.
    pub map_block: Vec<usize>,
    /// Block of each temporal feature.
    pub temporal_block: Vec<usize>,
    pub n_map_blocks: usize,
    pub n_temporal_blocks: usize,
    pub logits: Vec<f64>,
}

impl FusionWeights {
    /// Uniform weights (all logits zero).
    pub fn uniform(spec: &ConceptSpec, size: usize, granularity: FusionGranularity) -> Self {
        let mut map_block = Vec::new();
        let mut kinds: Vec<FeatureKind> = Vec::new();
        for f in spec.map_features() {
            let block = match granularity {
                FusionGranularity::PerFeature => map_block.len(),
                FusionGranularity::PerKind => match kinds.iter().position(|&k| k == f.feature.kind) {
                    Some(b) => b,
                    None => {
                        kinds.push(f.feature.kind);
                        kinds.len() - 1
                    }
                },
            };
            map_block.push(block);
        }
        let n_map_blocks = map_block.iter().max().map_or(0, |m| m + 1);
        let n_temp = spec.n_temporal_features();
        let temporal_block: Vec<usize> = match granularity {
            FusionGranularity::PerFeature => (0..n_temp).collect(),
            FusionGranularity::PerKind => vec![0; n_temp],
        };
        let n_temporal_blocks = temporal_block.iter().max().map_or(0, |m| m + 1);
        let w = spec.n_windows();
        Self {
            size,
            n_windows: w,
            granularity,
            map_block,
            temporal_block,
            n_map_blocks,
            n_temporal_blocks,
            logits: vec![0.0; n_map_blocks * size * size * w + n_temporal_blocks * w],
        }
    }

    fn map_offset(&self, block: usize, cell: usize) -> usize {
        (block * self.size * self.size + cell) * self.n_windows
    }

    fn temporal_offset(&self, block: usize) -> usize {
        self.n_map_blocks * self.size * self.size * self.n_windows + block * self.n_windows
    }

    /// Realised weights for every logit group, same layout as `logits`.
    pub fn weights(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.logits.len()];
        for (src, dst) in self.logits.chunks(self.n_windows).zip(out.chunks_mut(self.n_windows)) {
            softmax_into(src, dst);
        }
        out
    }

    pub fn map_weights<'a>(&self, weights: &'a [f64], block: usize, cell: usize) -> &'a [f64] {
        let o = self.map_offset(block, cell);
        &weights[o..o + self.n_windows]
    }

    pub fn temporal_weights<'a>(&self, weights: &'a [f64], block: usize) -> &'a [f64] {
        let o = self.temporal_offset(block);
        &weights[o..o + self.n_windows]
    }

    fn check(&self, c: &ConceptTensor) -> Result<()> {
        let ok = c.size == self.size
            && c.n_windows == self.n_windows
            && c.n_map_features == self.map_block.len()
            && c.n_temporal_features == self.temporal_block.len();
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.map_block.len() * self.n_windows * self.size * self.size,
                found: c.n_map_features * c.n_windows * c.size * c.size,
            })
        }
    }
}

fn softmax_into(src: &[f64], dst: &mut [f64]) {
    let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = libm::exp(s - max);
        z += *d;
    }
    dst.iter_mut().for_each(|d| *d /= z);
}

/// Fused maps: `map` is `[cell][feature][channel]`, `temporal` is
/// `[feature][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedConcepts {
    pub size: usize,
    pub n_map_features: usize,
    pub n_temporal_features: usize,
    pub map: Vec<f64>,
    pub temporal: Vec<f64>,
}

impl FusedConcepts {
    pub fn at(&self, cell: usize, feature: usize, channel: usize) -> f64 {
        self.map[(cell * self.n_map_features + feature) * CHANNELS + channel]
    }
}

/// Weighted sum of the window-size channels with the realised weights.
pub fn fuse_channels(c: &ConceptTensor, w: &FusionWeights) -> Result<FusedConcepts> {
    w.check(c)?;
    let weights = w.weights();
    Ok(fuse_with(c, w, &weights))
}

fn fuse_with(c: &ConceptTensor, w: &FusionWeights, weights: &[f64]) -> FusedConcepts {
    let d2 = c.size * c.size;
    let nf = c.n_map_features;
    let mut map = vec![0.0; d2 * nf * CHANNELS];
    for cell in 0..d2 {
        for f in 0..nf {
            let cw = w.map_weights(weights, w.map_block[f], cell);
            for ch in 0..CHANNELS {
                let mut acc = 0.0;
                for (wi, &wt) in cw.iter().enumerate() {
                    let bit = c.spatial[(((cell * nf) + f) * c.n_windows + wi) * CHANNELS + ch];
                    acc += bit as f64 * wt;
                }
                map[(cell * nf + f) * CHANNELS + ch] = acc;
            }
        }
    }
    let nt = c.n_temporal_features;
    let mut temporal = vec![0.0; nt * CHANNELS];
    for f in 0..nt {
        let tw = w.temporal_weights(weights, w.temporal_block[f]);
        for ch in 0..CHANNELS {
            temporal[f * CHANNELS + ch] = tw
                .iter()
                .enumerate()
                .map(|(wi, &wt)| c.temporal[c.temporal_index(f, wi, ch)] as f64 * wt)
                .sum();
        }
    }
    FusedConcepts {
        size: c.size,
        n_map_features: nf,
        n_temporal_features: nt,
        map,
        temporal,
    }
}

/// Meaning of one entry of a pooled vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PooledIndex {
    /// Position in [`ConceptSpec::features`].
    pub feature: usize,
    /// `None` for temporal features.
    pub region: Option<usize>,
    pub channel: usize,
}

/// Layout of pooled vectors: `[map_feature][region][channel]` then
/// `[temporal_feature][channel]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PooledLayout {
    pub n_map_features: usize,
    pub n_regions: usize,
    pub n_temporal_features: usize,
}

impl PooledLayout {
    pub fn new(spec: &ConceptSpec, plan: &PoolingPlan) -> Self {
        Self {
            n_map_features: spec.n_map_features(),
            n_regions: plan.n_regions(),
            n_temporal_features: spec.n_temporal_features(),
        }
    }

    pub fn map_len(&self) -> usize {
        self.n_map_features * self.n_regions * CHANNELS
    }

    pub fn dim(&self) -> usize {
        self.map_len() + self.n_temporal_features * CHANNELS
    }

    pub fn describe(&self, i: usize) -> PooledIndex {
        if i < self.map_len() {
            PooledIndex {
                feature: i / (self.n_regions * CHANNELS),
                region: Some((i / CHANNELS) % self.n_regions),
                channel: i % CHANNELS,
            }
        } else {
            let j = i - self.map_len();
            PooledIndex {
                feature: self.n_map_features + j / CHANNELS,
                region: None,
                channel: j % CHANNELS,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledConceptVector {
    pub values: Vec<f64>,
    pub label: u8,
}

/// What a forward pool pass records for the backward pass: the winning cell of
/// every max-pooled entry.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PoolTape {
    argmax: Vec<usize>,
}

/// Pool fused maps over the plan's regions.
pub fn pool(fused: &FusedConcepts, plan: &PoolingPlan) -> (Vec<f64>, PoolTape) {
    let q = plan.n_regions();
    let nf = fused.n_map_features;
    let mut out = vec![0.0; nf * q * CHANNELS + fused.temporal.len()];
    let mut tape = PoolTape::default();
    match plan.mode {
        PoolMode::Mean | PoolMode::None => {
            for (cell, &region) in plan.cell_region.iter().enumerate() {
                for f in 0..nf {
                    for ch in 0..CHANNELS {
                        out[(f * q + region) * CHANNELS + ch] += fused.at(cell, f, ch);
                    }
                }
            }
            for f in 0..nf {
                for region in 0..q {
                    let n = plan.region_size(region) as f64;
                    for ch in 0..CHANNELS {
                        out[(f * q + region) * CHANNELS + ch] /= n;
                    }
                }
            }
        }
        PoolMode::Max => {
            tape.argmax = vec![usize::MAX; nf * q * CHANNELS];
            for (cell, &region) in plan.cell_region.iter().enumerate() {
                for f in 0..nf {
                    for ch in 0..CHANNELS {
                        let i = (f * q + region) * CHANNELS + ch;
                        let v = fused.at(cell, f, ch);
                        // cells are visited in increasing order, so ties keep the first
                        if tape.argmax[i] == usize::MAX || v > out[i] {
                            out[i] = v;
                            tape.argmax[i] = cell;
                        }
                    }
                }
            }
        }
    }
    let map_len = nf * q * CHANNELS;
    out[map_len..].copy_from_slice(&fused.temporal);
    (out, tape)
}

/// Fusion followed by pooling, the full aggregation forward pass.
pub fn aggregate(c: &ConceptTensor, w: &FusionWeights, plan: &PoolingPlan) -> Result<(Vec<f64>, PoolTape)> {
    w.check(c)?;
    if plan.size != c.size {
        return Err(Error::DimensionMismatch {
            expected: plan.size,
            found: c.size,
        });
    }
    let weights = w.weights();
    Ok(pool(&fuse_with(c, w, &weights), plan))
}

/// Same as [`aggregate`] with precomputed realised weights.
pub fn aggregate_with(c: &ConceptTensor, w: &FusionWeights, weights: &[f64], plan: &PoolingPlan) -> (Vec<f64>, PoolTape) {
    pool(&fuse_with(c, w, weights), plan)
}

/// Accumulate into `grad_logits` the gradient of a loss with respect to the
/// fusion logits, given its gradient `upstream` with respect to the pooled
/// vector of `c`.
pub fn pooling_gradient(
    c: &ConceptTensor,
    w: &FusionWeights,
    weights: &[f64],
    plan: &PoolingPlan,
    tape: &PoolTape,
    upstream: &[f64],
    grad_logits: &mut [f64],
) {
    let q = plan.n_regions();
    let nf = c.n_map_features;
    let nw = c.n_windows;
    let d2 = c.size * c.size;
    let map_len = nf * q * CHANNELS;

    // gradient with respect to the fused maps
    let mut g_fused = vec![0.0; d2 * nf * CHANNELS];
    match plan.mode {
        PoolMode::Mean | PoolMode::None => {
            for (cell, &region) in plan.cell_region.iter().enumerate() {
                let n = plan.region_size(region) as f64;
                for f in 0..nf {
                    for ch in 0..CHANNELS {
                        g_fused[(cell * nf + f) * CHANNELS + ch] = upstream[(f * q + region) * CHANNELS + ch] / n;
                    }
                }
            }
        }
        PoolMode::Max => {
            for f in 0..nf {
                for region in 0..q {
                    for ch in 0..CHANNELS {
                        let i = (f * q + region) * CHANNELS + ch;
                        let cell = tape.argmax[i];
                        g_fused[(cell * nf + f) * CHANNELS + ch] += upstream[i];
                    }
                }
            }
        }
    }

    let mut g_w = vec![0.0; nw];
    for cell in 0..d2 {
        for block in 0..w.n_map_blocks {
            g_w.iter_mut().for_each(|g| *g = 0.0);
            let mut any = false;
            for f in (0..nf).filter(|&f| w.map_block[f] == block) {
                for ch in 0..CHANNELS {
                    let g = g_fused[(cell * nf + f) * CHANNELS + ch];
                    if g == 0.0 {
                        continue;
                    }
                    for (wi, gw) in g_w.iter_mut().enumerate() {
                        let bit = c.spatial[((cell * nf + f) * nw + wi) * CHANNELS + ch];
                        if bit != 0 {
                            *gw += g;
                            any = true;
                        }
                    }
                }
            }
            if any {
                let o = w.map_offset(block, cell);
                softmax_backward(&weights[o..o + nw], &g_w, &mut grad_logits[o..o + nw]);
            }
        }
    }

    for block in 0..w.n_temporal_blocks {
        g_w.iter_mut().for_each(|g| *g = 0.0);
        for f in (0..c.n_temporal_features).filter(|&f| w.temporal_block[f] == block) {
            for ch in 0..CHANNELS {
                let g = upstream[map_len + f * CHANNELS + ch];
                for (wi, gw) in g_w.iter_mut().enumerate() {
                    *gw += g * c.temporal[c.temporal_index(f, wi, ch)] as f64;
                }
            }
        }
        let o = w.temporal_offset(block);
        softmax_backward(&weights[o..o + nw], &g_w, &mut grad_logits[o..o + nw]);
    }
}

fn softmax_backward(weights: &[f64], g_weights: &[f64], g_logits: &mut [f64]) {
    let dot: f64 = weights.iter().zip(g_weights).map(|(w, g)| w * g).sum();
    for ((gl, &w), &g) in g_logits.iter_mut().zip(weights).zip(g_weights) {
        *gl += w * (g - dot);
    }
}

/// Stateful wrapper that keeps the last forward pass for its backward pass.
#[derive(Debug, Clone)]
pub struct PoolingLayer {
    pub plan: PoolingPlan,
    recorded: Option<(ConceptTensor, Vec<f64>, PoolTape)>,
}

impl PoolingLayer {
    pub fn new(plan: PoolingPlan) -> Self {
        Self { plan, recorded: None }
    }

    pub fn forward(&mut self, c: &ConceptTensor, w: &FusionWeights) -> Result<PooledConceptVector> {
        let (values, tape) = aggregate(c, w, &self.plan)?;
        self.recorded = Some((c.clone(), w.weights(), tape));
        Ok(PooledConceptVector { values, label: 0 })
    }

    /// Gradient of the fusion logits for the recorded pass.
    pub fn backward(&self, w: &FusionWeights, upstream: &[f64]) -> Result<Vec<f64>> {
        let (c, weights, tape) = self.recorded.as_ref().ok_or(Error::NoForwardPass)?;
        let mut grad = vec![0.0; w.logits.len()];
        pooling_gradient(c, w, weights, &self.plan, tape, upstream, &mut grad);
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{DistHint, FeatureMeta};
    use approx::assert_abs_diff_eq;

    fn spec2() -> ConceptSpec {
        let feats = [
            FeatureMeta::new("a", FeatureKind::Spatial, DistHint::Continuous),
            FeatureMeta::new("b", FeatureKind::Spatiotemporal, DistHint::Count),
            FeatureMeta::new("t", FeatureKind::Temporal, DistHint::Continuous),
        ];
        ConceptSpec::from_features(&feats, vec![3, 5], 0.05)
    }

    #[test]
    fn default_plan_is_a_partition_with_thirteen_regions() {
        let plan = PoolingPlan::default_for(9, PoolMode::Mean).unwrap();
        assert_eq!(plan.n_regions(), 13);
        assert_eq!(plan.cell_region.len(), 81);
        let total: usize = (0..13).map(|r| plan.region_size(r)).sum();
        assert_eq!(total, 81);
        assert!((0..13).all(|r| plan.region_size(r) > 0));
        assert_eq!(plan.region_names[0], "center");
        assert_eq!(plan.cell_region[40], 0);
        // rotating the window a quarter turn maps each sector onto the next
        let sizes: Vec<usize> = (0..13).map(|r| plan.region_size(r)).collect();
        for ring in 0..3 {
            let s = &sizes[1 + ring * 4..1 + ring * 4 + 4];
            assert!(s.iter().all(|&x| x == s[0]), "{s:?}");
        }
    }

    #[test]
    fn sectors_follow_compass() {
        let plan = PoolingPlan::default_for(9, PoolMode::Mean).unwrap();
        let name = |r: usize, c: usize| plan.region_names[plan.cell_region[r * 9 + c]].clone();
        assert_eq!(name(3, 5), "near-NE");
        assert_eq!(name(3, 3), "near-NW");
        assert_eq!(name(5, 3), "near-SW");
        assert_eq!(name(5, 5), "near-SE");
        assert_eq!(name(0, 8), "far-NE");
        assert_eq!(name(4, 7), "middle-NE");
    }

    #[test]
    fn small_windows_drop_empty_regions() {
        let plan = PoolingPlan::default_for(3, PoolMode::Mean).unwrap();
        assert_eq!(plan.n_regions(), 5);
        let none = PoolingPlan::default_for(9, PoolMode::None).unwrap();
        assert_eq!(none.n_regions(), 81);
    }

    #[test]
    fn degenerate_weights_select_one_window() {
        let spec = spec2();
        let mut c = ConceptTensor::zeros(9, 2, 1, 2);
        for (i, b) in c.spatial.iter_mut().enumerate() {
            *b = ((i * 7) % 3 == 0) as u8;
        }
        let mut w = FusionWeights::uniform(&spec, 9, FusionGranularity::PerKind);
        for pair in w.logits.chunks_mut(2) {
            pair[0] = 40.0;
        }
        let fused = fuse_channels(&c, &w).unwrap();
        for cell in 0..81 {
            for f in 0..2 {
                for ch in 0..4 {
                    let expect = c.get(cell / 9, cell % 9, f, 0, ch) as f64;
                    assert_abs_diff_eq!(fused.at(cell, f, ch), expect, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn uniform_weights_average() {
        let spec = spec2();
        let mut c = ConceptTensor::zeros(9, 2, 1, 2);
        let i = c.spatial_index(2, 3, 1, 0, 2);
        c.spatial[i] = 1;
        for ch in 0..4 {
            let a = c.spatial_index(5, 5, 0, 0, ch);
            let b = c.spatial_index(5, 5, 0, 1, ch);
            c.spatial[a] = 1;
            c.spatial[b] = 1;
        }
        let w = FusionWeights::uniform(&spec, 9, FusionGranularity::PerKind);
        let fused = fuse_channels(&c, &w).unwrap();
        assert_eq!(fused.at(2 * 9 + 3, 1, 2), 0.5);
        for ch in 0..4 {
            assert_eq!(fused.at(5 * 9 + 5, 0, ch), 1.0);
        }
    }

    #[test]
    fn weights_lie_on_simplex() {
        let spec = spec2();
        let mut w = FusionWeights::uniform(&spec, 9, FusionGranularity::PerFeature);
        for (i, l) in w.logits.iter_mut().enumerate() {
            *l = ((i * 31) % 17) as f64 - 8.0;
        }
        for group in w.weights().chunks(2) {
            assert!(group.iter().all(|&x| x > 0.0));
            assert_abs_diff_eq!(group.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mean_pool_counts_active_cells() {
        let plan = PoolingPlan::default_for(9, PoolMode::Mean).unwrap();
        let region = 1;
        let cells: Vec<usize> = plan.cells_of(region).collect();
        let mut fused = FusedConcepts {
            size: 9,
            n_map_features: 1,
            n_temporal_features: 0,
            map: vec![0.0; 81 * 4],
            temporal: vec![],
        };
        for &cell in cells.iter().take(2) {
            fused.map[cell * 4] = 1.0;
        }
        let (v, _) = pool(&fused, &plan);
        assert_eq!(v[region * 4], 2.0 / cells.len() as f64);
    }

    #[test]
    fn max_pool_and_zero_input() {
        let mut fused = FusedConcepts {
            size: 9,
            n_map_features: 1,
            n_temporal_features: 1,
            map: vec![0.0; 81 * 4],
            temporal: vec![0.0; 4],
        };
        for mode in [PoolMode::Mean, PoolMode::Max, PoolMode::None] {
            let plan = PoolingPlan::default_for(9, mode).unwrap();
            let (v, _) = pool(&fused, &plan);
            assert!(v.iter().all(|&x| x == 0.0));
        }
        let plan = PoolingPlan::default_for(9, PoolMode::Max).unwrap();
        for region in 0..plan.n_regions() {
            let cell = plan.cells_of(region).next().unwrap();
            fused.map[cell * 4 + 3] = 1.0;
        }
        let (v, _) = pool(&fused, &plan);
        for region in 0..plan.n_regions() {
            assert_eq!(v[region * 4 + 3], 1.0);
        }
        let none = PoolingPlan::default_for(9, PoolMode::None).unwrap();
        assert_eq!(pool(&fused, &none).0.len(), 81 * 4 + 4);
    }

    #[test]
    fn mean_gradient_spreads_evenly() {
        let spec = spec2();
        let plan = PoolingPlan::default_for(9, PoolMode::Mean).unwrap();
        // far sectors hold 11 cells each
        let region = plan.region_names.iter().position(|n| n == "far-SW").unwrap();
        assert_eq!(plan.region_size(region), 11);
        let mut c = ConceptTensor::zeros(9, 2, 1, 2);
        for cell in plan.cells_of(region) {
            let i = c.spatial_index(cell / 9, cell % 9, 0, 0, 0);
            c.spatial[i] = 1;
        }
        let w = FusionWeights::uniform(&spec, 9, FusionGranularity::PerKind);
        let weights = w.weights();
        let (v, tape) = aggregate(&c, &w, &plan).unwrap();
        assert_eq!(v[region * 4], 0.5);
        let mut up = vec![0.0; v.len()];
        up[region * 4] = 1.0;
        let mut g = vec![0.0; w.logits.len()];
        pooling_gradient(&c, &w, &weights, &plan, &tape, &up, &mut g);
        // d(pooled)/d(weight_0) = 1/11 per cell, times the softmax Jacobian at 0.5/0.5
        for cell in plan.cells_of(region) {
            assert_abs_diff_eq!(g[cell * 2], 0.25 / 11.0, epsilon = 1e-15);
            assert_abs_diff_eq!(g[cell * 2 + 1], -0.25 / 11.0, epsilon = 1e-15);
        }
        assert_eq!(g.iter().filter(|&&x| x != 0.0).count(), 22);
    }

    #[test]
    fn max_gradient_goes_to_argmax() {
        let spec = spec2();
        let plan = PoolingPlan::default_for(9, PoolMode::Max).unwrap();
        let mut c = ConceptTensor::zeros(9, 2, 1, 2);
        // cell 0 has both windows active (fused 1.0), cell 1 one window (0.5)
        for wi in 0..2 {
            let i = c.spatial_index(0, 1, 0, wi, 0);
            c.spatial[i] = 1;
        }
        let i = c.spatial_index(1, 1, 0, 0, 0);
        c.spatial[i] = 1;
        let mut w = FusionWeights::uniform(&spec, 9, FusionGranularity::PerKind);
        w.logits[10 * 2] = 0.3;
        let weights = w.weights();
        let (v, tape) = aggregate(&c, &w, &plan).unwrap();
        let region = plan.cell_region[10];
        assert_eq!(plan.cell_region[1], region);
        assert_eq!(v[region * 4], 1.0);
        let mut up = vec![0.0; v.len()];
        up[region * 4] = 1.0;
        let mut g = vec![0.0; w.logits.len()];
        pooling_gradient(&c, &w, &weights, &plan, &tape, &up, &mut g);
        // the winning cell has a constant fused value, so nothing flows anywhere
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn backward_needs_forward() {
        let spec = spec2();
        let w = FusionWeights::uniform(&spec, 9, FusionGranularity::PerKind);
        let layer = PoolingLayer::new(PoolingPlan::default_for(9, PoolMode::Mean).unwrap());
        assert_eq!(layer.backward(&w, &[]), Err(Error::NoForwardPass));
    }
}
