//! Initialisation, mini-batch Adam training with early stopping, and
//! evaluation metrics.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aggregate::{self, FusionGranularity, FusionWeights, PoolingPlan};
use crate::encoder::{ConceptSpec, ConceptTensor};
use crate::error::{Error, Result};
use crate::model::{self, Gradients, Hyperparams, LossParts, PrototypeModel};
use crate::optim::Adam;

/// A concept tensor with its binary label.
pub type Example<'a> = (&'a ConceptTensor, u8);

/// Seeded model initialisation: prototypes are randomly chosen pooled training
/// encodings of their class (distinct where possible) plus a small uniform
/// jitter; fusion weights start uniform.
pub fn init_model(
    spec: ConceptSpec,
    plan: PoolingPlan,
    granularity: FusionGranularity,
    hyper: Hyperparams,
    train: &[Example<'_>],
) -> Result<PrototypeModel> {
    hyper.validate()?;
    for class in [0u8, 1] {
        if !train.iter().any(|(_, y)| *y == class) {
            return Err(Error::EmptyClass(class));
        }
    }
    let fusion = FusionWeights::uniform(&spec, plan.size, granularity);
    let weights = fusion.weights();
    let pooled: Vec<Vec<f64>> = train
        .iter()
        .map(|(c, _)| aggregate::aggregate_with(c, &fusion, &weights, &plan).0)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let classes = hyper.class_split();
    let mut prototypes = Vec::with_capacity(classes.len() * pooled.first().map_or(0, Vec::len));
    for class in [0u8, 1] {
        let want = classes.iter().filter(|&&c| c == class).count();
        let mut members: Vec<usize> = (0..train.len()).filter(|&i| train[i].1 == class).collect();
        members.shuffle(&mut rng);
        let mut chosen: Vec<usize> = Vec::with_capacity(want);
        for &i in &members {
            if chosen.len() == want {
                break;
            }
            if !chosen.iter().any(|&j| pooled[j] == pooled[i]) {
                chosen.push(i);
            }
        }
        let mut cycle = members.iter().cycle();
        while chosen.len() < want {
            chosen.push(*cycle.next().expect("class has members"));
        }
        for i in chosen {
            for &v in &pooled[i] {
                prototypes.push(v + hyper.init_jitter * (2.0 * rng.random::<f64>() - 1.0));
            }
        }
    }
    PrototypeModel::new(spec, plan, fusion, hyper, prototypes)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Metrics {
    pub cross_entropy: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n: usize,
}

impl Metrics {
    /// Binary metrics with the event class (1) as positive.
    pub fn from_predictions(labels: &[u8], predicted: &[u8], cross_entropy: f64) -> Self {
        let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
        for (&y, &p) in labels.iter().zip(predicted) {
            match (y, p) {
                (1, 1) => tp += 1,
                (0, 1) => fp += 1,
                (1, 0) => fn_ += 1,
                _ => tn += 1,
            }
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            cross_entropy,
            accuracy: ratio(tp + tn, labels.len()),
            precision,
            recall,
            f1,
            n: labels.len(),
        }
    }
}

pub fn evaluate(model: &PrototypeModel, samples: &[Example<'_>]) -> Result<Metrics> {
    let mut labels = Vec::with_capacity(samples.len());
    let mut predicted = Vec::with_capacity(samples.len());
    let mut ce = 0.0;
    for (c, y) in samples {
        if *y > 1 {
            return Err(Error::UnknownLabel(*y));
        }
        let p = model.predict(c)?;
        ce -= libm::log(p.probabilities[*y as usize].max(f64::MIN_POSITIVE));
        labels.push(*y);
        predicted.push(p.class);
    }
    let n = samples.len().max(1) as f64;
    Ok(Metrics::from_predictions(&labels, &predicted, ce / n))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: LossParts,
    pub validation: Metrics,
    pub min_prototype_distance: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PrototypeModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Mini-batch Adam on all parameter groups with early stopping on validation
/// loss. `on_step` sees the model after every optimiser step. Returns the
/// snapshot with the lowest validation loss.
pub fn train(
    mut model: PrototypeModel,
    train: &[Example<'_>],
    validation: &[Example<'_>],
    mut on_step: impl FnMut(&PrototypeModel),
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    for class in [0u8, 1] {
        if !train.iter().any(|(_, y)| *y == class) {
            return Err(Error::EmptyClass(class));
        }
    }
    let h = model.hyper.clone();
    let mut adam_p = Adam::new(h.adam, model.prototypes.len());
    let mut adam_w = Adam::new(h.adam, model.head.len());
    let mut adam_b = Adam::new(h.adam, model::N_CLASSES);
    let mut adam_f = Adam::new(h.adam, model.fusion.logits.len());
    let monitor = if validation.is_empty() { train } else { validation };

    let mut best: Option<(f64, PrototypeModel)> = None;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut batch: Vec<Example<'_>> = Vec::with_capacity(h.batch_size);

    for epoch in 1..=h.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(h.seed ^ ((epoch as u64) << 32));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(h.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train[i]));
            let mut g = Gradients::zeros(&model);
            let parts = model::loss(&model, &batch, Some(&mut g))?;
            if !parts.total.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            epoch_loss += parts.total * chunk.len() as f64;
            adam_p.step(&mut model.prototypes, &g.prototypes);
            adam_w.step(&mut model.head, &g.head);
            adam_b.step(&mut model.bias, &g.bias);
            adam_f.step(&mut model.fusion.logits, &g.fusion);
            if !model.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            on_step(&model);
        }
        model.epoch = epoch;

        let val_loss = model::loss(&model, monitor, None)?;
        if !val_loss.total.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            validation_loss: val_loss,
            validation: evaluate(&model, monitor)?,
            min_prototype_distance: model.min_prototype_distance(),
        });

        if best.as_ref().is_none_or(|(b, _)| val_loss.total < *b) {
            best = Some((val_loss.total, model.clone()));
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= h.patience {
                break;
            }
        }
    }

    let model = best.map(|(_, m)| m).unwrap_or(model);
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}
