//! Seeded synthetic study fields with a planted, auditable event rule.
//!
//! The first spatiotemporal feature is a Poisson count driver. At each
//! interval a cell becomes a hotspot centre with a fixed probability; every
//! cell within the hotspot radius then draws its count at the background rate
//! times the multiplier. The label at `(t + 1, cell)` is 1 exactly when `cell`
//! was a hotspot centre at `t`. A multiplier of 1 or less plants nothing.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::{DistHint, FeatureKind, FeatureMeta, GridDataset, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum PatternKind {
    /// Hotspots anywhere on the grid.
    Hotspot,
    /// Hotspots only in the western half; the spatial features are shifted up
    /// there so the two regimes are distinguishable.
    Regimes,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SynthPattern {
    pub kind: PatternKind,
    pub background_rate: f64,
    pub multiplier: f64,
    pub hotspot_prob: f64,
    /// Chebyshev radius of the elevated block around a hotspot centre.
    pub hotspot_radius: usize,
}

impl Default for SynthPattern {
    fn default() -> Self {
        Self {
            kind: PatternKind::Hotspot,
            background_rate: 1.0,
            multiplier: 8.0,
            hotspot_prob: 0.03,
            hotspot_radius: 1,
        }
    }
}

impl SynthPattern {
    pub fn validate(&self) -> Result<()> {
        if !(self.background_rate > 0.0 && self.background_rate.is_finite()) {
            return Err(Error::InvalidParameter("background rate must be positive".into()));
        }
        if !(self.multiplier > 0.0 && self.multiplier.is_finite()) {
            return Err(Error::InvalidParameter("multiplier must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.hotspot_prob) {
            return Err(Error::InvalidParameter("hotspot probability outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        let region = match self.kind {
            PatternKind::Hotspot => "any cell",
            PatternKind::Regimes => "cells with col < cols/2",
        };
        format!(
            "event at (t+1, cell) iff cell was a hotspot centre at t; hotspot centres drawn i.i.d. with p={} over {}; \
             counts of feature 'event_driver' ~ Poisson({}) off-hotspot and Poisson({}) within Chebyshev radius {} of a centre",
            self.hotspot_prob,
            region,
            self.background_rate,
            self.background_rate * self.multiplier,
            self.hotspot_radius
        )
    }

    fn eligible(&self, spec: &GridSpec, col: usize) -> bool {
        match self.kind {
            PatternKind::Hotspot => true,
            PatternKind::Regimes => col < spec.cols / 2,
        }
    }
}

/// Audit record of how a synthetic dataset was generated.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroundTruth {
    pub seed: u64,
    pub rule: String,
    pub pattern: SynthPattern,
    /// Hotspot centres planted over intervals `0..T-1`, i.e. the positive labels.
    pub planted: usize,
}

pub fn synth_generate(seed: u64, spec: &GridSpec, pattern: &SynthPattern) -> Result<(GridDataset, GroundTruth)> {
    spec.validate()?;
    pattern.validate()?;
    if spec.n_spatiotemporal == 0 {
        return Err(Error::InvalidSpec("synthetic patterns need a spatiotemporal count feature".into()));
    }
    let (m, n, t_len) = (spec.rows, spec.cols, spec.intervals);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let active = pattern.multiplier > 1.0;

    let mut centres = vec![false; t_len * m * n];
    for t in 0..t_len {
        for r in 0..m {
            for c in 0..n {
                let u: f64 = rng.random();
                centres[(t * m + r) * n + c] = active && pattern.eligible(spec, c) && u < pattern.hotspot_prob;
            }
        }
    }

    let rad = pattern.hotspot_radius as isize;
    let mut elevated = vec![false; t_len * m * n];
    for t in 0..t_len {
        for r in 0..m {
            for c in 0..n {
                if !centres[(t * m + r) * n + c] {
                    continue;
                }
                for dr in -rad..=rad {
                    for dc in -rad..=rad {
                        let (rr, cc) = (r as isize + dr, c as isize + dc);
                        if rr >= 0 && cc >= 0 && (rr as usize) < m && (cc as usize) < n {
                            elevated[(t * m + rr as usize) * n + cc as usize] = true;
                        }
                    }
                }
            }
        }
    }

    let poisson = |rate: f64| Poisson::new(rate).map_err(|e| Error::InvalidParameter(format!("{e}")));
    let background = poisson(pattern.background_rate)?;
    let hot = poisson(pattern.background_rate * pattern.multiplier)?;
    let fst = spec.n_spatiotemporal;
    let mut spatiotemporal = vec![0.0f32; spec.spatiotemporal_len()];
    for cell in 0..t_len * m * n {
        for f in 0..fst {
            let dist = if f == 0 && elevated[cell] { &hot } else { &background };
            spatiotemporal[cell * fst + f] = dist.sample(&mut rng) as f32;
        }
    }

    let fs = spec.n_spatial;
    let mut spatial = vec![0.0f32; spec.spatial_len()];
    for r in 0..m {
        for c in 0..n {
            let shift = match pattern.kind {
                PatternKind::Regimes if c < n / 2 => 1.0,
                _ => 0.0,
            };
            for f in 0..fs {
                let z: f64 = StandardNormal.sample(&mut rng);
                spatial[(r * n + c) * fs + f] = (z + shift) as f32;
            }
        }
    }

    let temporal: Vec<f32> = (0..spec.temporal_len())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z as f32
        })
        .collect();

    let mut labels = vec![0u8; spec.labels_len()];
    for t in 0..t_len - 1 {
        for cell in 0..m * n {
            labels[(t + 1) * m * n + cell] = centres[t * m * n + cell] as u8;
        }
    }
    let planted = centres[..(t_len - 1) * m * n].iter().filter(|&&b| b).count();

    let mut features = Vec::with_capacity(spec.n_features());
    for i in 0..spec.n_temporal {
        features.push(FeatureMeta::new(format!("temperature{i}"), FeatureKind::Temporal, DistHint::Continuous));
    }
    for i in 0..fs {
        features.push(FeatureMeta::new(format!("land_use{i}"), FeatureKind::Spatial, DistHint::Continuous));
    }
    features.push(FeatureMeta::new("event_driver", FeatureKind::Spatiotemporal, DistHint::Count));
    for i in 1..fst {
        features.push(FeatureMeta::new(format!("taxi{i}"), FeatureKind::Spatiotemporal, DistHint::Count));
    }

    let ds = GridDataset::new(spec.clone(), temporal, spatial, spatiotemporal, labels, features)?;
    Ok((
        ds,
        GroundTruth {
            seed,
            rule: pattern.describe(),
            pattern: pattern.clone(),
            planted,
        },
    ))
}
