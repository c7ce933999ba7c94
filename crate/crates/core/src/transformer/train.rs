//! Mini-batch training with adaptive moment estimation, early stopping on
//! validation MSE, and deterministic parallelism: samples in a batch run
//! concurrently, but every per-sample computation is sequential and
//! gradients merge in slot order, so results are bit-identical for a fixed
//! seed regardless of thread count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::trace::{Standardizer, Trace};

use super::layers::GradSet;
use super::tensor::Tensor;
use super::{time_features, Informer, TransformerConfig, TIME_FEATURES};

/// A trained forecaster plus the standardizer fit on its training split.
pub struct TrainedModel {
    pub model: Informer,
    pub standardizer: Standardizer,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epoch_train_loss: Vec<f64>,
    pub epoch_val_mse: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(model: &Informer) -> Self {
        Self {
            m: model
                .params
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.rows, t.cols))
                .collect(),
            v: model
                .params
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.rows, t.cols))
                .collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn step(&mut self, model: &mut Informer, grads: &GradSet, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (pid, grad) in grads.tensors.iter().enumerate() {
            let m = &mut self.m[pid];
            let v = &mut self.v[pid];
            let theta = &mut model.params.tensors[pid];
            for i in 0..grad.data.len() {
                let g = grad.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * g;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m.data[i] / bc1;
                let v_hat = v.data[i] / bc2;
                theta.data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// One training sample: window start index into a standardized series.
struct SampleSet<'a> {
    values: &'a [f64],
    feats: &'a Tensor,
    config: &'a TransformerConfig,
}

impl SampleSet<'_> {
    fn count(&self) -> usize {
        (self.values.len() + 1).saturating_sub(self.config.seq_len + self.config.pred_len)
    }

    fn slices(&self, start: usize) -> (&[f64], Tensor, Tensor, &[f64]) {
        let cfg = self.config;
        let x_enc = &self.values[start..start + cfg.seq_len];
        let target = &self.values[start + cfg.seq_len..start + cfg.seq_len + cfg.pred_len];
        let t_enc = Tensor::from_fn(cfg.seq_len, TIME_FEATURES, |i, j| {
            self.feats.at(start + i, j)
        });
        let dec_start = start + cfg.seq_len - cfg.label_len;
        let t_dec = Tensor::from_fn(cfg.dec_len(), TIME_FEATURES, |i, j| {
            self.feats.at(dec_start + i, j)
        });
        (x_enc, t_enc, t_dec, target)
    }
}

/// Trains a forecaster on standardized sliding windows (stride 1) of the
/// training split, early-stopping on validation MSE.
pub fn train(
    train_split: &Trace,
    val_split: &Trace,
    config: &TransformerConfig,
) -> Result<(TrainedModel, TrainReport)> {
    config.validate()?;
    let window_span = config.seq_len + config.pred_len;
    if train_split.len() < window_span + 1 {
        return Err(Error::InvalidArgument(format!(
            "training split of {} ticks cannot host {window_span}-tick windows",
            train_split.len()
        )));
    }

    let standardizer = Standardizer::fit(train_split)?;
    let z_train = standardizer.apply(train_split.values());
    let z_val = standardizer.apply(val_split.values());

    let feats_train = time_features(&train_split.timestamps(0, train_split.len()));
    let feats_val = time_features(&val_split.timestamps(0, val_split.len()));

    let train_set = SampleSet {
        values: &z_train,
        feats: &feats_train,
        config,
    };
    let val_set = SampleSet {
        values: &z_val,
        feats: &feats_val,
        config,
    };

    let mut model = Informer::new(config.clone())?;
    let mut adam = Adam::new(&model);
    let mut report = TrainReport::default();

    let mut best_val = f64::INFINITY;
    let mut best_params: Option<Vec<Tensor>> = None;
    let mut bad_epochs = 0usize;
    let mut sample_counter: u64 = 0;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_set.count()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle_rng.set_stream(1 + epoch as u64);
        order.shuffle(&mut shuffle_rng);

        let mut batches = order.chunks(config.batch_size).collect::<Vec<_>>();
        if let Some(cap) = config.max_batches_per_epoch {
            batches.truncate(cap);
        }

        let mut epoch_loss = 0.0;
        let mut epoch_samples = 0usize;
        for batch in batches {
            let base = sample_counter;
            let results: Vec<Result<(f64, GradSet)>> = batch
                .par_iter()
                .enumerate()
                .map(|(slot, &start)| {
                    let (x_enc, t_enc, t_dec, target) = train_set.slices(start);
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                    rng.set_stream(0x1000_0000 + base + slot as u64);
                    let mut grads = GradSet::zeros_like(&model.params);
                    let loss = model.loss_and_grads(
                        x_enc,
                        &t_enc,
                        &t_dec,
                        target,
                        Some(&mut rng),
                        &mut grads,
                    )?;
                    Ok((loss, grads))
                })
                .collect();
            sample_counter += batch.len() as u64;

            let mut total = GradSet::zeros_like(&model.params);
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, grads) = r?;
                if !loss.is_finite() {
                    return Err(Error::Diverged(format!(
                        "loss {loss} at step {}",
                        adam.t + 1
                    )));
                }
                batch_loss += loss;
                total.merge(&grads);
            }
            let inv = 1.0 / batch.len() as f64;
            for t in &mut total.tensors {
                t.scale(inv);
            }
            adam.step(&mut model, &total, config.learning_rate);
            epoch_loss += batch_loss;
            epoch_samples += batch.len();
        }
        report
            .epoch_train_loss
            .push(epoch_loss / epoch_samples.max(1) as f64);

        let val_mse = evaluate_mse(&model, &val_set)?;
        report.epoch_val_mse.push(val_mse);
        if val_mse < best_val {
            best_val = val_mse;
            best_params = Some(model.params.tensors.clone());
            report.best_epoch = epoch;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= config.patience {
                report.stopped_early = true;
                break;
            }
        }
    }

    if let Some(best) = best_params {
        model.params.tensors = best;
    }
    Ok((TrainedModel { model, standardizer }, report))
}

/// MSE over non-overlapping-target windows (stride = pred_len), inference
/// mode. Windows run in parallel; error accumulation is in window order.
fn evaluate_mse(model: &Informer, set: &SampleSet<'_>) -> Result<f64> {
    let cfg = set.config;
    let count = set.count();
    if count == 0 {
        return Err(Error::InvalidArgument(
            "validation split too short for one window".into(),
        ));
    }
    let starts: Vec<usize> = (0..count).step_by(cfg.pred_len).collect();
    let per_window: Vec<Result<f64>> = starts
        .par_iter()
        .map(|&start| {
            let (x_enc, t_enc, t_dec, target) = set.slices(start);
            let preds = model.forward(x_enc, &t_enc, &t_dec)?;
            Ok(preds
                .iter()
                .zip(target)
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>())
        })
        .collect();
    let mut total = 0.0;
    for w in per_window {
        total += w?;
    }
    Ok(total / (starts.len() * cfg.pred_len) as f64)
}

impl TrainedModel {
    /// Standardize, one forward pass, invert standardization.
    /// `timestamps` covers the window plus the horizon
    /// (`seq_len + pred_len` entries).
    pub fn predict(
        &self,
        window: &[f64],
        timestamps: &[chrono::NaiveDateTime],
    ) -> Result<Vec<f64>> {
        let z = self.standardizer.apply(window);
        let (t_enc, t_dec) = super::window_time_features(&self.model.config, timestamps)?;
        let preds = self.model.forward(&z, &t_enc, &t_dec)?;
        Ok(self.standardizer.invert(&preds))
    }

    /// Forward pass on an already-standardized window; the benchmark scores
    /// on the standardized scale.
    pub fn predict_standardized(
        &self,
        z_window: &[f64],
        t_enc: &Tensor,
        t_dec: &Tensor,
    ) -> Result<Vec<f64>> {
        self.model.forward(z_window, t_enc, t_dec)
    }
}
