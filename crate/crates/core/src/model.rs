//! Concept prototype layer, linear head and the regularised training loss.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::aggregate::{self, FusionWeights, PoolingPlan, PooledLayout};
use crate::encoder::{ConceptSpec, ConceptTensor};
use crate::error::{Error, Result};
use crate::optim::AdamConfig;

pub const N_CLASSES: usize = 2;

/// How the diversity term treats prototype pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum DiversityMode {
    /// `-(1/K²)·min_{i≠j} ‖p_i − p_j‖²`: push the closest pair apart.
    #[default]
    MaxMin,
    /// `min_{i≠j} -(1/K²)‖p_i − p_j‖²`: push the farthest pair apart.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct Hyperparams {
    pub prototypes: usize,
    pub eps_sim: f64,
    pub lambda_diversity: f64,
    pub lambda_separation: f64,
    pub lambda_cluster: f64,
    pub diversity: DiversityMode,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Scale of the uniform jitter added to initial prototypes.
    pub init_jitter: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            prototypes: 8,
            eps_sim: 1e-4,
            lambda_diversity: 0.05,
            lambda_separation: 0.08,
            lambda_cluster: 0.8,
            diversity: DiversityMode::MaxMin,
            adam: AdamConfig::default(),
            batch_size: 64,
            patience: 5,
            max_epochs: 50,
            seed: 0,
            init_jitter: 1e-2,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.into()));
        if self.prototypes < 2 {
            return bad("need at least 2 prototypes");
        }
        if !(self.eps_sim > 0.0) {
            return bad("eps_sim must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        let lambdas = [self.lambda_diversity, self.lambda_separation, self.lambda_cluster];
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return bad("regulariser weights must be finite and non-negative");
        }
        if !(self.adam.lr > 0.0) || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("invalid Adam settings");
        }
        Ok(())
    }

    /// Prototypes assigned to class 0 come first; class 1 gets `K / 2`.
    pub fn class_split(&self) -> Vec<u8> {
        let k = self.prototypes;
        let pos = k / 2;
        (0..k).map(|i| (i >= k - pos) as u8).collect()
    }
}

/// Inverse squared distance, stabilised by `eps`.
pub fn similarity(c: &[f64], p: &[f64], eps: f64) -> Result<f64> {
    if c.len() != p.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: c.len(),
        });
    }
    Ok(1.0 / (sq_dist(c, p) + eps))
}

/// Gradient of [`similarity`] with respect to the prototype.
pub fn similarity_grad(c: &[f64], p: &[f64], eps: f64) -> Vec<f64> {
    let s = 1.0 / (sq_dist(c, p) + eps);
    c.iter().zip(p).map(|(ci, pi)| 2.0 * (ci - pi) * s * s).collect()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub similarities: Vec<f64>,
    pub logits: [f64; N_CLASSES],
    pub probabilities: [f64; N_CLASSES],
    pub class: u8,
}

fn softmax2(z: [f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let m = z[0].max(z[1]);
    let e = [libm::exp(z[0] - m), libm::exp(z[1] - m)];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

/// `-log softmax(z)[y]`, computed stably.
fn cross_entropy(z: [f64; N_CLASSES], y: usize) -> f64 {
    let m = z[0].max(z[1]);
    let lse = m + libm::log(libm::exp(z[0] - m) + libm::exp(z[1] - m));
    lse - z[y]
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeModel {
    pub spec: ConceptSpec,
    pub plan: PoolingPlan,
    pub fusion: FusionWeights,
    pub dim: usize,
    /// `[K][D]`
    pub prototypes: Vec<f64>,
    pub class_of: Vec<u8>,
    /// `[class][K]`
    pub head: Vec<f64>,
    pub bias: [f64; N_CLASSES],
    pub hyper: Hyperparams,
    pub epoch: usize,
}

impl PrototypeModel {
    /// A model with the given prototypes, the default head (+1 towards the
    /// prototype's own class, -0.5 towards the other) and zero bias.
    pub fn new(
        spec: ConceptSpec,
        plan: PoolingPlan,
        fusion: FusionWeights,
        hyper: Hyperparams,
        prototypes: Vec<f64>,
    ) -> Result<Self> {
        hyper.validate()?;
        let dim = PooledLayout::new(&spec, &plan).dim();
        let k = hyper.prototypes;
        if prototypes.len() != k * dim {
            return Err(Error::DimensionMismatch {
                expected: k * dim,
                found: prototypes.len(),
            });
        }
        let class_of = hyper.class_split();
        let mut head = vec![0.0; N_CLASSES * k];
        for (j, &cls) in class_of.iter().enumerate() {
            for class in 0..N_CLASSES {
                head[class * k + j] = if cls as usize == class { 1.0 } else { -0.5 };
            }
        }
        Ok(Self {
            spec,
            plan,
            fusion,
            dim,
            prototypes,
            class_of,
            head,
            bias: [0.0; N_CLASSES],
            hyper,
            epoch: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.class_of.len()
    }

    pub fn layout(&self) -> PooledLayout {
        PooledLayout::new(&self.spec, &self.plan)
    }

    pub fn prototype(&self, k: usize) -> &[f64] {
        &self.prototypes[k * self.dim..(k + 1) * self.dim]
    }

    pub fn head_coef(&self, class: usize, k: usize) -> f64 {
        self.head[class * self.k() + k]
    }

    pub fn similarities(&self, c: &[f64]) -> Result<Vec<f64>> {
        (0..self.k())
            .map(|k| similarity(c, self.prototype(k), self.hyper.eps_sim))
            .collect()
    }

    pub fn logits_from(&self, sims: &[f64]) -> [f64; N_CLASSES] {
        let k = self.k();
        let mut z = self.bias;
        for (class, zc) in z.iter_mut().enumerate() {
            for (j, s) in sims.iter().enumerate() {
                *zc += self.head[class * k + j] * s;
            }
        }
        z
    }

    /// Classify a pooled concept vector.
    pub fn forward(&self, c: &[f64]) -> Result<Prediction> {
        let similarities = self.similarities(c)?;
        let logits = self.logits_from(&similarities);
        let probabilities = softmax2(logits);
        let class = (probabilities[1] > probabilities[0]) as u8;
        Ok(Prediction {
            similarities,
            logits,
            probabilities,
            class,
        })
    }

    /// Pool a concept tensor with the model's current fusion weights.
    pub fn pool(&self, c: &ConceptTensor) -> Result<Vec<f64>> {
        aggregate::aggregate(c, &self.fusion, &self.plan).map(|(v, _)| v)
    }

    pub fn predict(&self, c: &ConceptTensor) -> Result<Prediction> {
        self.forward(&self.pool(c)?)
    }

    /// Smallest squared distance between two distinct prototypes.
    pub fn min_prototype_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.k() {
            for j in i + 1..self.k() {
                best = best.min(sq_dist(self.prototype(i), self.prototype(j)));
            }
        }
        best
    }

    pub fn is_finite(&self) -> bool {
        self.prototypes.iter().chain(&self.head).chain(&self.bias).chain(&self.fusion.logits).all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossParts {
    pub cross_entropy: f64,
    pub diversity: f64,
    pub separation: f64,
    pub cluster: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub prototypes: Vec<f64>,
    pub head: Vec<f64>,
    pub bias: [f64; N_CLASSES],
    pub fusion: Vec<f64>,
}

impl Gradients {
    pub fn zeros(model: &PrototypeModel) -> Self {
        Self {
            prototypes: vec![0.0; model.prototypes.len()],
            head: vec![0.0; model.head.len()],
            bias: [0.0; N_CLASSES],
            fusion: vec![0.0; model.fusion.logits.len()],
        }
    }
}

fn check_label(y: u8) -> Result<usize> {
    if (y as usize) < N_CLASSES {
        Ok(y as usize)
    } else {
        Err(Error::UnknownLabel(y))
    }
}

/// Index pair of the prototypes selected by the diversity term.
fn diversity_pair(model: &PrototypeModel) -> (usize, usize, f64) {
    let mut best = (0, 1, sq_dist(model.prototype(0), model.prototype(1)));
    for i in 0..model.k() {
        for j in i + 1..model.k() {
            let d = sq_dist(model.prototype(i), model.prototype(j));
            let better = match model.hyper.diversity {
                DiversityMode::MaxMin => d < best.2,
                DiversityMode::Literal => d > best.2,
            };
            if better {
                best = (i, j, d);
            }
        }
    }
    best
}

/// Closest prototype among those whose class membership matches `own`.
fn nearest(model: &PrototypeModel, c: &[f64], y: u8, own: bool) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for k in 0..model.k() {
        if (model.class_of[k] == y) != own {
            continue;
        }
        let d = sq_dist(c, model.prototype(k));
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((k, d));
        }
    }
    best
}

/// Loss on pooled vectors. When `grads` is given, accumulates gradients for
/// prototypes, head and bias, and writes the gradient with respect to each
/// input vector into `input_grads`.
pub fn loss_pooled(
    model: &PrototypeModel,
    batch: &[(&[f64], u8)],
    mut grads: Option<(&mut Gradients, &mut Vec<Vec<f64>>)>,
) -> Result<LossParts> {
    if batch.is_empty() {
        return Err(Error::Empty("loss batch".into()));
    }
    let n = batch.len() as f64;
    let k = model.k();
    let dim = model.dim;
    let h = &model.hyper;
    let kk = (k * k) as f64;
    let mut parts = LossParts::default();

    let (pi, pj, pair_d) = diversity_pair(model);
    parts.diversity = -pair_d / kk;

    if let Some((g, inputs)) = grads.as_mut() {
        inputs.clear();
        inputs.resize(batch.len(), vec![0.0; dim]);
        let scale = h.lambda_diversity * -2.0 / kk;
        for d in 0..dim {
            let diff = model.prototypes[pi * dim + d] - model.prototypes[pj * dim + d];
            g.prototypes[pi * dim + d] += scale * diff;
            g.prototypes[pj * dim + d] -= scale * diff;
        }
    }

    for (b, &(c, y)) in batch.iter().enumerate() {
        if c.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: c.len(),
            });
        }
        let y = check_label(y)?;
        let sims = model.similarities(c)?;
        let z = model.logits_from(&sims);
        parts.cross_entropy += cross_entropy(z, y) / n;

        let sep = nearest(model, c, y as u8, false);
        let clst = nearest(model, c, y as u8, true);
        if let Some((_, d)) = sep {
            parts.separation -= d / n;
        }
        if let Some((_, d)) = clst {
            parts.cluster += d / n;
        }

        let Some((g, inputs)) = grads.as_mut() else {
            continue;
        };
        let gc = &mut inputs[b];
        let p = softmax2(z);
        let dz = [(p[0] - (y == 0) as u8 as f64) / n, (p[1] - (y == 1) as u8 as f64) / n];
        for class in 0..N_CLASSES {
            g.bias[class] += dz[class];
            for j in 0..k {
                g.head[class * k + j] += dz[class] * sims[j];
            }
        }
        for j in 0..k {
            let ds = dz[0] * model.head[j] + dz[1] * model.head[k + j];
            // d sim / d p = 2(c - p) s², d sim / d c = -2(c - p) s²
            let coef = ds * 2.0 * sims[j] * sims[j];
            let pj = model.prototype(j);
            for d in 0..dim {
                let diff = c[d] - pj[d];
                g.prototypes[j * dim + d] += coef * diff;
                gc[d] -= coef * diff;
            }
        }
        // Sep pushes away (negative sign), Clst pulls in.
        for (hit, lambda) in [(sep, -h.lambda_separation), (clst, h.lambda_cluster)] {
            if let Some((j, _)) = hit {
                let coef = lambda * 2.0 / n;
                let pj = model.prototype(j);
                for d in 0..dim {
                    let diff = c[d] - pj[d];
                    g.prototypes[j * dim + d] -= coef * diff;
                    gc[d] += coef * diff;
                }
            }
        }
    }

    parts.total = parts.cross_entropy
        + h.lambda_diversity * parts.diversity
        + h.lambda_separation * parts.separation
        + h.lambda_cluster * parts.cluster;
    Ok(parts)
}

/// Full loss over concept tensors, back-propagating through pooling and
/// channel fusion when `grads` is given.
pub fn loss(model: &PrototypeModel, batch: &[(&ConceptTensor, u8)], grads: Option<&mut Gradients>) -> Result<LossParts> {
    let weights = model.fusion.weights();
    let mut pooled = Vec::with_capacity(batch.len());
    let mut tapes = Vec::with_capacity(batch.len());
    for (c, _) in batch {
        if c.size != model.plan.size {
            return Err(Error::DimensionMismatch {
                expected: model.plan.size,
                found: c.size,
            });
        }
        let (v, tape) = aggregate::aggregate_with(c, &model.fusion, &weights, &model.plan);
        if v.len() != model.dim {
            return Err(Error::DimensionMismatch {
                expected: model.dim,
                found: v.len(),
            });
        }
        pooled.push(v);
        tapes.push(tape);
    }
    let items: Vec<(&[f64], u8)> = pooled.iter().zip(batch).map(|(v, (_, y))| (v.as_slice(), *y)).collect();
    match grads {
        None => loss_pooled(model, &items, None),
        Some(g) => {
            let mut input_grads = Vec::new();
            let parts = loss_pooled(model, &items, Some((&mut *g, &mut input_grads)))?;
            for (((c, _), tape), up) in batch.iter().zip(&tapes).zip(&input_grads) {
                aggregate::pooling_gradient(c, &model.fusion, &weights, &model.plan, tape, up, &mut g.fusion);
            }
            Ok(parts)
        }
    }
}

/// Validate that a pooled vector fits the model.
pub fn check_dim(model: &PrototypeModel, c: &[f64]) -> Result<()> {
    if c.len() == model.dim {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "encoding has {} entries, model expects {}",
            c.len(),
            model.dim
        )))
    }
}
