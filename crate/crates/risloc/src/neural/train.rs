//! Adam-based training loop with MSE loss, plateau LR scheduling and
//! best-validation checkpointing, plus normalized inference.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::{Duration, Instant};

use super::layers::mse_loss;
use super::model::{Model, ModelConfig};
use crate::channel::ReflectionMatrix;
use crate::dataset::{
    batches, denormalize_target, featurize, fit_norm_stats, normalize_features, normalize_target,
    Dataset, NormStats,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub scheduler_factor: f64,
    pub scheduler_patience: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            batch: 32,
            epochs: 25,
            scheduler_factor: 0.8,
            scheduler_patience: 10,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config("lr must be > 0".into()));
        }
        if !(0.0 < self.scheduler_factor && self.scheduler_factor < 1.0) {
            return Err(Error::Config("scheduler_factor must lie in (0,1)".into()));
        }
        if self.scheduler_patience < 1 {
            return Err(Error::Config("scheduler_patience must be >= 1".into()));
        }
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::Config("batch and epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Adam over the model's canonical parameter order.
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    pub fn new(param_count: usize, cfg: &TrainConfig) -> Self {
        Adam {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            epsilon: cfg.adam_epsilon,
        }
    }

    pub fn step(&mut self, model: &mut Model, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut i = 0;
        model.for_each_param(|p, g| {
            m[i] = b1 * m[i] + (1.0 - b1) * *g;
            v[i] = b2 * v[i] + (1.0 - b2) * *g * *g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
            i += 1;
        });
    }
}

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// epochs without validation improvement.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub lr: f64,
    factor: f64,
    patience: usize,
    best: f64,
    stagnant: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        PlateauScheduler {
            lr,
            factor,
            patience,
            best: f64::INFINITY,
            stagnant: 0,
        }
    }

    /// Feed one validation loss; returns the learning rate to use next.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.stagnant = 0;
        } else {
            self.stagnant += 1;
            if self.stagnant >= self.patience {
                self.lr *= self.factor;
                self.stagnant = 0;
            }
        }
        self.lr
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Provenance needed to replay the same physical setup at inference.
    pub scene_fingerprint: String,
    pub schedule_seed: u64,
    pub schedule_levels: usize,
}

/// Trained model plus everything inference needs.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub model: Model,
    pub norm_stats: NormStats,
    pub meta: TrainMeta,
    pub history: Vec<EpochRecord>,
}

fn assemble(dataset: &Dataset, idx: &[usize], stats: &NormStats) -> (Array2<f64>, Array2<f64>) {
    let d = dataset.samples[0].features.len();
    let mut x = Array2::zeros((idx.len(), d));
    let mut y = Array2::zeros((idx.len(), 2));
    for (row, &i) in idx.iter().enumerate() {
        let mut f = dataset.samples[i].features.clone();
        normalize_features(&mut f, stats);
        for (j, &v) in f.iter().enumerate() {
            x[[row, j]] = v;
        }
        let t = normalize_target(&dataset.samples[i].target, stats);
        y[[row, 0]] = t[0];
        y[[row, 1]] = t[1];
    }
    (x, y)
}

fn eval_mse<R: Rng>(
    model: &mut Model,
    x: &Array2<f64>,
    y: &Array2<f64>,
    rng: &mut R,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0.0;
    let n = x.nrows();
    let chunk = 256;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let xb = x.slice(ndarray::s![start..end, ..]).to_owned();
        let yb = y.slice(ndarray::s![start..end, ..]).to_owned();
        let out = model.forward(&xb, false, rng)?;
        let (loss, _) = mse_loss(&out, &yb);
        total += loss * (end - start) as f64;
        count += (end - start) as f64;
        start = end;
    }
    Ok(total / count)
}

/// Train a fresh model on the dataset's splits. Normalization statistics are
/// fitted on the training split only. Deterministic under the config seed.
pub fn train(
    model_config: &ModelConfig,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<ModelBundle> {
    cfg.validate()?;
    let expected = 2 * dataset.pilots_t * (dataset.tiles_k + 1);
    if model_config.input_dim != expected {
        return Err(Error::ArtifactMismatch(format!(
            "model input_dim {} but dataset features are {}",
            model_config.input_dim, expected
        )));
    }
    let stats = fit_norm_stats(dataset)?;
    let (x_train, y_train) = assemble(dataset, &dataset.train_idx, &stats);
    let (x_val, y_val) = assemble(dataset, &dataset.val_idx, &stats);

    let mut model = Model::new(model_config.clone(), cfg.seed)?;
    let mut adam = Adam::new(model.param_count(), cfg);
    let mut scheduler = PlateauScheduler::new(cfg.lr, cfg.scheduler_factor, cfg.scheduler_patience);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xAD4A)); // dropout + shuffle stream

    let n_train = dataset.train_idx.len();
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_params = model.export_params();
    let mut lr = cfg.lr;

    for epoch in 1..=cfg.epochs {
        // Fisher-Yates shuffle of the training order
        for i in (1..n_train).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut seen = 0.0;
        for (batch_no, chunk) in batches(&order, cfg.batch).enumerate() {
            let xb = ndarray::Array2::from_shape_fn((chunk.len(), x_train.ncols()), |(r, c)| {
                x_train[[chunk[r], c]]
            });
            let yb =
                ndarray::Array2::from_shape_fn((chunk.len(), 2), |(r, c)| y_train[[chunk[r], c]]);
            let out = model.forward(&xb, true, &mut rng)?;
            let (loss, dout) = mse_loss(&out, &yb);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "NaN loss at epoch {epoch}, batch {batch_no}, grad norm {}",
                    model.grad_norm()
                )));
            }
            model.zero_grads();
            model.backward(&dout);
            adam.step(&mut model, lr);
            epoch_loss += loss * chunk.len() as f64;
            seen += chunk.len() as f64;
        }
        let train_mse = epoch_loss / seen;
        let val_mse = eval_mse(&mut model, &x_val, &y_val, &mut rng)?;
        if !val_mse.is_finite() {
            return Err(Error::Numeric(format!(
                "NaN validation loss at epoch {epoch}"
            )));
        }
        if val_mse < best_val {
            best_val = val_mse;
            best_epoch = epoch;
            best_params = model.export_params();
        }
        lr = scheduler.observe(val_mse);
        history.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
            lr,
        });
    }

    model.import_params(&best_params)?;
    Ok(ModelBundle {
        model,
        norm_stats: stats,
        meta: TrainMeta {
            epochs_run: cfg.epochs,
            best_epoch,
            best_val_loss: best_val,
            scene_fingerprint: dataset.scene_fingerprint.clone(),
            schedule_seed: dataset.schedule_seed,
            schedule_levels: dataset.schedule_levels,
        },
        history,
    })
}

/// Featurize, normalize, run the network in eval mode and denormalize the
/// output. Returns the position estimate and the wall-clock latency.
pub fn predict(
    bundle: &mut ModelBundle,
    y: &[Complex64],
    beta: &ReflectionMatrix,
) -> Result<([f64; 2], Duration)> {
    let start = Instant::now();
    let mut f = featurize(y, beta)?;
    if f.len() != bundle.model.config.input_dim {
        return Err(Error::ArtifactMismatch(format!(
            "sample has {} features, bundle wants {}",
            f.len(),
            bundle.model.config.input_dim
        )));
    }
    normalize_features(&mut f, &bundle.norm_stats);
    let flat = Array2::from_shape_vec((1, f.len()), f.into_iter().collect()).expect("shape");
    let mut rng = ChaCha8Rng::seed_from_u64(0); // unused in eval mode
    let out = bundle.model.forward(&flat, false, &mut rng)?;
    let p = denormalize_target(&[out[[0, 0]], out[[0, 1]]], &bundle.norm_stats);
    Ok((p, start.elapsed()))
}
