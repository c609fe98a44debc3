//! Adam and the mini-batch maximum-likelihood training loop.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::LabeledSample;
use crate::error::{Error, Result};
use crate::gaussian::{AffineMap, QUALITY_DIMS};
use crate::model::{init_head, HeadConfig, HeadModel, Variant};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Drives per-epoch shuffling and dropout masks.
    pub seed: u64,
    pub variant: Variant,
    pub affine: AffineMap,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            variant: Variant::Full,
            affine: AffineMap::quality_scale(QUALITY_DIMS),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate {} must be non-negative", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas ({}, {}) must lie in [0, 1)", self.beta1, self.beta2));
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        Ok(())
    }
}

/// First and second moment estimates for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::InvalidInput(format!(
            "adam shapes disagree: params {}, grads {}, state {}/{}",
            params.len(),
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NumericFailure(format!("non-finite gradient for parameter {i}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
}

impl TrainTrace {
    /// One line per epoch: `epoch train_loss val_loss seconds`, tab-separated,
    /// `-` when there is no validation set.
    pub fn to_table(&self) -> String {
        let mut out = String::from("epoch\ttrain_loss\tval_loss\tseconds\n");
        for r in &self.records {
            let val = r.val_loss.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
            let _ = writeln!(out, "{}\t{:.6}\t{}\t{:.3}", r.epoch, r.train_loss, val, r.seconds);
        }
        out
    }
}

fn check_dataset(data: &[LabeledSample], input_dim: usize, what: &str) -> Result<()> {
    if let Some((i, s)) = data.iter().enumerate().find(|(_, s)| s.feature_dim() != input_dim) {
        return Err(Error::Schema(format!(
            "{what} sample {i} has {} features, the head expects {input_dim}",
            s.feature_dim()
        )));
    }
    Ok(())
}

/// Mean per-sample loss of `model` on `data`, with dropout off.
pub fn mean_loss(model: &HeadModel, data: &[LabeledSample], map: &AffineMap) -> Result<f64> {
    let variant = model.config().variant;
    let mut total = 0.0;
    for s in data {
        let raw = model.forward_cached(&s.features, false, 0)?.output;
        total += variant.loss_and_grad(&raw, &s.labels, map)?.0;
    }
    Ok(total / data.len() as f64)
}

/// Trains a freshly initialised head.
pub fn train(
    data: &[LabeledSample],
    val: Option<&[LabeledSample]>,
    head_cfg: &HeadConfig,
    cfg: &TrainConfig,
) -> Result<(HeadModel, TrainTrace)> {
    let model = init_head(head_cfg)?;
    train_model(model, data, val, cfg)
}

/// Continues training `model` for `cfg.epochs` epochs with fresh optimizer state.
pub fn train_model(
    mut model: HeadModel,
    data: &[LabeledSample],
    val: Option<&[LabeledSample]>,
    cfg: &TrainConfig,
) -> Result<(HeadModel, TrainTrace)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    if model.config().variant != cfg.variant {
        return Err(Error::InvalidConfig(format!(
            "head variant {} differs from training variant {}",
            model.config().variant,
            cfg.variant
        )));
    }
    if cfg.affine.dim() != model.config().label_dims {
        return Err(Error::InvalidConfig("affine map dimension differs from label dimension".into()));
    }
    let input_dim = model.config().input_dim;
    check_dataset(data, input_dim, "training")?;
    if let Some(v) = val {
        check_dataset(v, input_dim, "validation")?;
    }

    let variant = cfg.variant;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(model.params().len());
    let mut grads = vec![0.0; model.params().len()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = TrainTrace::default();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            let abort = |message: String| Error::TrainingAborted {
                epoch,
                batch: batch_idx,
                message,
            };
            for &i in batch {
                let sample = &data[i];
                let dropout_seed: u64 = rng.gen();
                let cache = model.forward_cached(&sample.features, true, dropout_seed)?;
                let (loss, d_out) = variant
                    .loss_and_grad(&cache.output, &sample.labels, &cfg.affine)
                    .map_err(|e| abort(format!("sample {i}: {e}")))?;
                if !loss.is_finite() {
                    return Err(abort(format!("loss is {loss} on sample {i}")));
                }
                batch_loss += loss;
                model.backward(&cache, &d_out, &mut grads)?;
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            if let Some(p) = grads.iter().position(|g| !g.is_finite()) {
                return Err(abort(format!("non-finite gradient in {}", model.block_name(p))));
            }
            adam_step(model.params_mut(), &grads, &mut state, cfg).map_err(|e| abort(e.to_string()))?;
            epoch_loss += batch_loss;
        }
        let train_loss = epoch_loss / data.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::TrainingAborted {
                epoch,
                batch: 0,
                message: format!("epoch loss is {train_loss}"),
            });
        }
        let val_loss = match val {
            Some(v) if !v.is_empty() => Some(mean_loss(&model, v, &cfg.affine)?),
            _ => None,
        };
        trace.records.push(EpochRecord {
            epoch: epoch + 1,
            train_loss,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok((model, trace))
}
