//! Prototype projection, case explanations and similarity maps.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::encoder::CHANNEL_NAMES;
use crate::error::{Error, Result};
use crate::model::{check_dim, similarity, PrototypeModel, N_CLASSES};

pub const DEFAULT_TOP_N: usize = 10;
pub const DEFAULT_PERCENTILE: f64 = 1.0;

/// Where a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SampleMeta {
    pub id: usize,
    pub time: usize,
    pub center: (usize, usize),
}

/// One named entry of a pooled vector.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConceptLabel {
    pub index: usize,
    pub feature: String,
    /// `None` for temporal features.
    pub region: Option<String>,
    pub channel: String,
    pub strength: f64,
}

impl fmt::Display for ConceptLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.region {
            Some(region) => write!(f, "{}: {}, {}, strength {:.4}", self.feature, self.channel, region, self.strength),
            None => write!(f, "{}: {}, strength {:.4}", self.feature, self.channel, self.strength),
        }
    }
}

/// The `top_n` largest nonzero entries of a pooled vector, strongest first.
/// Ties keep layout order.
pub fn top_concepts(model: &PrototypeModel, values: &[f64], top_n: usize) -> Vec<ConceptLabel> {
    let layout = model.layout();
    let mut idx: Vec<usize> = (0..values.len()).filter(|&i| values[i] > 0.0).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(top_n);
    idx.into_iter()
        .map(|i| {
            let d = layout.describe(i);
            ConceptLabel {
                index: i,
                feature: model.spec.features[d.feature].name.clone(),
                region: d.region.map(|r| model.plan.region_names[r].clone()),
                channel: CHANNEL_NAMES[d.channel].into(),
                strength: values[i],
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProjectedPrototype {
    pub k: usize,
    pub class: u8,
    /// Position of the source in the encodings passed to [`project`].
    pub position: usize,
    pub source: SampleMeta,
    pub similarity: f64,
    pub top_concepts: Vec<ConceptLabel>,
    pub head: [f64; N_CLASSES],
}

/// For every prototype, the encoding with the highest similarity. Ties go to
/// the lowest sample id.
pub fn project(
    model: &PrototypeModel,
    encodings: &[Vec<f64>],
    meta: &[SampleMeta],
    top_n: usize,
) -> Result<Vec<ProjectedPrototype>> {
    if encodings.is_empty() {
        return Err(Error::Empty("training encodings".into()));
    }
    if encodings.len() != meta.len() {
        return Err(Error::DimensionMismatch {
            expected: encodings.len(),
            found: meta.len(),
        });
    }
    for e in encodings {
        check_dim(model, e)?;
    }
    let eps = model.hyper.eps_sim;
    (0..model.k())
        .map(|k| {
            let p = model.prototype(k);
            let mut best = (0, f64::NEG_INFINITY);
            for (i, e) in encodings.iter().enumerate() {
                let s = similarity(e, p, eps)?;
                if s > best.1 || (s == best.1 && meta[i].id < meta[best.0].id) {
                    best = (i, s);
                }
            }
            Ok(ProjectedPrototype {
                k,
                class: model.class_of[k],
                position: best.0,
                source: meta[best.0],
                similarity: best.1,
                top_concepts: top_concepts(model, &encodings[best.0], top_n),
                head: [model.head_coef(0, k), model.head_coef(1, k)],
            })
        })
        .collect()
}

/// A copy of `model` whose prototypes are overwritten by their projections.
pub fn hard_project(model: &PrototypeModel, projections: &[ProjectedPrototype], encodings: &[Vec<f64>]) -> Result<PrototypeModel> {
    if projections.len() != model.k() {
        return Err(Error::DimensionMismatch {
            expected: model.k(),
            found: projections.len(),
        });
    }
    let mut out = model.clone();
    let d = model.dim;
    for p in projections {
        let src = encodings.get(p.position).ok_or_else(|| Error::Empty("projection source".into()))?;
        check_dim(model, src)?;
        out.prototypes[p.k * d..(p.k + 1) * d].copy_from_slice(src);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Contribution {
    pub k: usize,
    pub class: u8,
    pub similarity: f64,
    pub coefficients: [f64; N_CLASSES],
    /// `similarity * coefficient` per class.
    pub contributions: [f64; N_CLASSES],
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CaseReport {
    pub concepts: Vec<ConceptLabel>,
    /// Sorted by contribution towards the event class, largest first.
    pub contributions: Vec<Contribution>,
    pub bias: [f64; N_CLASSES],
    pub logits: [f64; N_CLASSES],
    pub probabilities: [f64; N_CLASSES],
    pub predicted: u8,
}

impl CaseReport {
    /// Bias plus every contribution; equals `logits` up to summation order.
    pub fn reconstructed_logits(&self) -> [f64; N_CLASSES] {
        let mut z = self.bias;
        for c in &self.contributions {
            z[0] += c.contributions[0];
            z[1] += c.contributions[1];
        }
        z
    }
}

pub fn explain_case(model: &PrototypeModel, encoding: &[f64], top_n: usize) -> Result<CaseReport> {
    let pred = model.forward(encoding)?;
    let mut contributions: Vec<Contribution> = pred
        .similarities
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let coefficients = [model.head_coef(0, k), model.head_coef(1, k)];
            Contribution {
                k,
                class: model.class_of[k],
                similarity: s,
                coefficients,
                contributions: [s * coefficients[0], s * coefficients[1]],
            }
        })
        .collect();
    contributions.sort_by(|a, b| {
        b.contributions[1]
            .partial_cmp(&a.contributions[1])
            .unwrap_or(Ordering::Equal)
            .then(a.k.cmp(&b.k))
    });
    Ok(CaseReport {
        concepts: top_concepts(model, encoding, top_n),
        contributions,
        bias: model.bias,
        logits: pred.logits,
        probabilities: pred.probabilities,
        predicted: pred.class,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimilarityMap {
    pub k: usize,
    pub rows: usize,
    pub cols: usize,
    /// `[rows][cols]`
    pub counts: Vec<u32>,
    /// `[7][rows][cols]`, Monday first.
    pub weekday: Vec<u32>,
}

impl SimilarityMap {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn at(&self, row: usize, col: usize) -> u32 {
        self.counts[row * self.cols + col]
    }
}

/// Number of samples kept for a percentile; at least one.
pub fn percentile_count(n: usize, percentile: f64) -> usize {
    let k = libm::ceil(percentile / 100.0 * n as f64) as usize;
    k.clamp(1, n)
}

/// Per prototype, where and on which weekday its `percentile`% most similar
/// samples occur. Ranking ties go to the lowest sample id, so the result does
/// not depend on sample order.
pub fn similarity_maps(
    model: &PrototypeModel,
    encodings: &[Vec<f64>],
    meta: &[SampleMeta],
    grid: (usize, usize),
    epoch_weekday: u8,
    percentile: f64,
) -> Result<Vec<SimilarityMap>> {
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::InvalidParameter("percentile must lie in (0, 100]".into()));
    }
    if encodings.is_empty() {
        return Err(Error::Empty("samples".into()));
    }
    if encodings.len() != meta.len() {
        return Err(Error::DimensionMismatch {
            expected: encodings.len(),
            found: meta.len(),
        });
    }
    let (rows, cols) = grid;
    for m in meta {
        if m.center.0 >= rows || m.center.1 >= cols {
            return Err(Error::InvalidParameter("sample centre outside the grid".into()));
        }
    }
    let keep = percentile_count(encodings.len(), percentile);
    let eps = model.hyper.eps_sim;
    (0..model.k())
        .map(|k| {
            let p = model.prototype(k);
            let mut scored: Vec<(f64, usize)> = encodings
                .iter()
                .enumerate()
                .map(|(i, e)| similarity(e, p, eps).map(|s| (s, i)))
                .collect::<Result<_>>()?;
            scored.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap_or(Ordering::Equal)
                    .then(meta[a.1].id.cmp(&meta[b.1].id))
            });
            let mut counts = vec![0u32; rows * cols];
            let mut weekday = vec![0u32; 7 * rows * cols];
            for &(_, i) in &scored[..keep] {
                let (r, c) = meta[i].center;
                let day = (epoch_weekday as usize + meta[i].time) % 7;
                counts[r * cols + c] += 1;
                weekday[(day * rows + r) * cols + c] += 1;
            }
            Ok(SimilarityMap {
                k,
                rows,
                cols,
                counts,
                weekday,
            })
        })
        .collect()
}
