//! Mini-batch Adam training with validation-accuracy model selection and early stopping.

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::Segment;
use crate::checkpoint::{Checkpoint, TrainMeta};
use crate::error::{Error, Result};
use crate::head::argmax;
use crate::model::{GradTape, Model};
use crate::nn::init::sub_seed;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Epochs without a strict validation-accuracy improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Reduce per-example gradients in index order (bit-reproducible across thread counts).
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            patience: 10,
            max_epochs: 500,
            seed: 0,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size >= 1
            && self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.adam_beta1)
            && (0.0..1.0).contains(&self.adam_beta2)
            && self.adam_eps > 0.0
            && self.patience >= 1
            && self.max_epochs >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training configuration: {self:?}")))
        }
    }
}

/// Adam first and second moments per parameter tensor, plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Tensor<T>> = params.into_iter().map(Tensor::zeros_like).collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
        }
    }

    pub fn for_model(model: &Model<T>) -> Self {
        Self::new(model.named_tensors().into_iter().map(|(_, t)| t))
    }
}

/// One bias-corrected Adam update over a list of parameter tensors.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        p.check_same_shape(g, "adam gradient")?;
        p.check_same_shape(m, "adam moment")?;
    }
    state.t += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let bc1 = T::from_f64(1.0 - b1.powi(state.t as i32));
    let bc2 = T::from_f64(1.0 - b2.powi(state.t as i32));
    let (b1, b2) = (T::from_f64(b1), T::from_f64(b2));
    let lr = T::from_f64(cfg.learning_rate);
    let eps = T::from_f64(cfg.adam_eps);
    let one = T::one();
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Adam update of every model parameter.
pub fn adam_step_model<T: Scalar>(
    model: &mut Model<T>,
    grads: &GradTape<T>,
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    let g: Vec<&Tensor<T>> = grads.named_tensors().into_iter().map(|(_, t)| t).collect();
    let mut p = model.tensors_mut();
    adam_step(&mut p, &g, state, cfg)
}

/// Strictly-greater early stopping on a metric to maximize.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<f64>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Records one epoch's metric; returns whether it is a new best.
    pub fn observe(&mut self, metric: f64) -> bool {
        let improved = self.best.is_none_or(|b| metric > b);
        if improved {
            self.best = Some(metric);
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub history: History,
}

fn check_labels(segments: &[Segment], n_classes: usize, seg_len: usize, what: &str) -> Result<()> {
    if segments.is_empty() {
        return Err(Error::Empty(format!("{what} set has no segments")));
    }
    for s in segments {
        if s.label >= n_classes {
            return Err(Error::LabelOutOfRange {
                label: s.label,
                n_classes,
            });
        }
        if s.samples.len() != seg_len {
            return Err(Error::Shape(format!(
                "{what} segment {} has {} samples, model expects {seg_len}",
                s.id(),
                s.samples.len()
            )));
        }
    }
    Ok(())
}

/// Mean loss and mean gradient over a batch.
pub fn batch_gradient(model: &Model<f32>, batch: &[&Segment], deterministic: bool) -> Result<(f64, GradTape<f32>)> {
    let one = |s: &&Segment| -> Result<(f64, GradTape<f32>)> {
        let x = model.segment_tensor(&s.samples)?;
        let (loss, _, g) = model.loss_and_grad(&x, s.label)?;
        Ok((loss as f64, g))
    };
    let (loss, mut grads) = if deterministic {
        let parts: Vec<(f64, GradTape<f32>)> = batch.par_iter().map(one).collect::<Result<_>>()?;
        let mut acc = model.zeros_like();
        let mut loss = 0.0;
        for (l, g) in &parts {
            loss += l;
            acc.accumulate(g)?;
        }
        (loss, acc)
    } else {
        batch
            .par_iter()
            .map(one)
            .try_fold(
                || (0.0, model.zeros_like()),
                |(l, mut acc), r| {
                    let (li, gi) = r?;
                    acc.accumulate(&gi)?;
                    Ok::<_, Error>((l + li, acc))
                },
            )
            .try_reduce(
                || (0.0, model.zeros_like()),
                |(la, mut a), (lb, b)| {
                    a.accumulate(&b)?;
                    Ok((la + lb, a))
                },
            )?
    };
    let n = batch.len() as f64;
    grads.scale(1.0 / n as f32);
    Ok((loss / n, grads))
}

/// Segment-level predictions (argmax of logits) in input order.
pub fn predict_segments(model: &Model<f32>, segments: &[Segment]) -> Result<Vec<Vec<f32>>> {
    segments
        .par_iter()
        .map(|s| Ok(model.forward(&model.segment_tensor(&s.samples)?)?.into_data()))
        .collect()
}

pub fn segment_accuracy(model: &Model<f32>, segments: &[Segment]) -> Result<f64> {
    let logits = predict_segments(model, segments)?;
    let correct = logits
        .iter()
        .zip(segments)
        .filter(|(l, s)| argmax(l) == s.label)
        .count();
    Ok(correct as f64 / segments.len() as f64)
}

/// Trains `model`, keeping the parameters with the best segment-level validation accuracy.
pub fn train(
    mut model: Model<f32>,
    classes: &[String],
    train_set: &[Segment],
    valid_set: &[Segment],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n_classes = model.n_classes();
    if classes.len() != n_classes {
        return Err(Error::Config(format!(
            "{} class names for a {n_classes}-class model",
            classes.len()
        )));
    }
    check_labels(train_set, n_classes, model.seg_len(), "training")?;
    check_labels(valid_set, n_classes, model.seg_len(), "validation")?;

    let mut adam = AdamState::for_model(&model);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = History::default();
    let mut best: Option<Checkpoint> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Segment> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grads) = batch_gradient(&model, &batch, cfg.deterministic)?;
            loss_sum += loss * batch.len() as f64;
            adam_step_model(&mut model, &grads, &mut adam, cfg)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let valid_accuracy = segment_accuracy(&model, valid_set)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            valid_accuracy,
        });
        let improved = stopper.observe(valid_accuracy);
        info!("epoch {epoch}: train loss {train_loss:.5}, valid accuracy {valid_accuracy:.4}{}", if improved { " *" } else { "" });
        if improved {
            history.best_epoch = epoch;
            best = Some(Checkpoint {
                model: model.clone(),
                classes: classes.to_vec(),
                meta: TrainMeta {
                    epoch,
                    valid_accuracy,
                    seed: cfg.seed,
                },
            });
        }
        if stopper.should_stop() {
            history.stopped_early = true;
            break;
        }
    }
    let best = best.expect("at least one epoch ran");
    Ok(TrainOutcome { best, history })
}
