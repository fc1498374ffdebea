//! Mini-batch Adam training with early stopping on validation Wing
//! loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{wing_loss, MlpModel, ModelKind, WingLossParams, HIDDEN_DIMS};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplicative per-epoch learning-rate decay. Wing loss keeps a
    /// finite gradient at the optimum, so a constant step size leaves
    /// Adam oscillating with amplitude on the order of the learning
    /// rate; decay below 1 anneals that away.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub dropout_rate: f64,
    pub hidden_dims: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            lr_decay: 1.0,
            batch_size: 128,
            max_epochs: 200,
            early_stop_patience: 20,
            dropout_rate: 0.1,
            hidden_dims: HIDDEN_DIMS.to_vec(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch of the returned checkpoint.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Targets outside the output scale, clamped before training.
    pub clamped_targets: usize,
    pub stopped_early: bool,
}

/// Floor below which a feature's standard deviation is treated as
/// degenerate (the feature is constant on the training set).
const STD_FLOOR: f64 = 1e-9;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Mean inference-mode Wing loss over a normalized-target set.
fn validation_loss(model: &MlpModel, set: &[(Vec<f64>, f64)]) -> Result<f64> {
    let mut total = 0.0;
    for (x, t) in set {
        let pred = model.predict(x)? / model.output_scale;
        total += wing_loss(pred, *t, &model.wing).0;
    }
    Ok(total / set.len() as f64)
}

/// Trains one sub-network. Samples pair raw features with residual
/// targets in physical units; targets are divided by `output_scale`
/// and clamped to (-0.999, 0.999) before fitting. Feature z-scoring
/// statistics are frozen from the training split and stored in the
/// returned model. Deterministic per `config.seed`.
pub fn train(
    train_set: &[(Vec<f64>, f64)],
    val_set: &[(Vec<f64>, f64)],
    kind: ModelKind,
    output_scale: f64,
    wing: WingLossParams,
    config: &TrainConfig,
) -> Result<(MlpModel, TrainLog)> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be nonempty".into()));
    }
    if config.batch_size == 0 || config.max_epochs == 0 || config.learning_rate <= 0.0 {
        return Err(Error::InvalidConfiguration(
            "batch size, epoch count, and learning rate must be positive".into(),
        ));
    }
    if !(config.lr_decay > 0.0 && config.lr_decay <= 1.0) {
        return Err(Error::InvalidConfiguration(format!(
            "lr_decay must lie in (0, 1], got {}",
            config.lr_decay
        )));
    }
    let input_dim = train_set[0].0.len();
    for (x, _) in train_set.iter().chain(val_set) {
        if x.len() != input_dim {
            return Err(Error::InvalidArgument(format!(
                "inconsistent feature length: {} vs {}",
                x.len(),
                input_dim
            )));
        }
    }

    let mut dims = Vec::with_capacity(config.hidden_dims.len() + 2);
    dims.push(input_dim);
    dims.extend_from_slice(&config.hidden_dims);
    dims.push(1);
    let mut model =
        MlpModel::new(kind, &dims, config.dropout_rate, output_scale, wing, config.seed);

    // Freeze z-scoring from the training split.
    let n = train_set.len() as f64;
    for j in 0..input_dim {
        let mean = train_set.iter().map(|(x, _)| x[j]).sum::<f64>() / n;
        let var = train_set.iter().map(|(x, _)| (x[j] - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        model.feature_mean[j] = mean;
        model.feature_std[j] = if std < STD_FLOOR { 1.0 } else { std };
    }

    // Normalize and clamp targets.
    let mut clamped = 0usize;
    let mut prep = |set: &[(Vec<f64>, f64)]| -> Vec<(Vec<f64>, f64)> {
        set.iter()
            .map(|(x, t)| {
                let scaled = t / output_scale;
                if scaled.abs() > 0.999 {
                    clamped += 1;
                }
                (x.clone(), scaled.clamp(-0.999, 0.999))
            })
            .collect()
    };
    let train_norm = prep(train_set);
    let val_norm = prep(val_set);

    let num_params: usize = model.param_slices_mut().iter().map(|s| s.len()).sum();
    let mut adam_m = vec![0.0; num_params];
    let mut adam_v = vec![0.0; num_params];
    let mut step = 0u64;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5u64.rotate_left(32));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));

    let mut log = TrainLog {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        clamped_targets: clamped,
        stopped_early: false,
    };
    let mut best_model = model.clone();
    let mut epochs_since_best = 0usize;
    let mut order: Vec<usize> = (0..train_norm.len()).collect();

    for epoch in 1..=config.max_epochs {
        let epoch_lr = config.learning_rate * config.lr_decay.powi(epoch as i32 - 1);
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(Vec<f64>, f64)> =
                chunk.iter().map(|&i| train_norm[i].clone()).collect();
            let (loss, grads) = model.backward(&batch, Some(&mut dropout_rng))?;
            epoch_loss += loss * batch.len() as f64;

            step += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
            let grad_slices = grads.slices();
            let mut offset = 0usize;
            let mut params = model.param_slices_mut();
            for (slice, gslice) in params.iter_mut().zip(&grad_slices) {
                for (i, (p, g)) in slice.iter_mut().zip(gslice.iter()).enumerate() {
                    let k = offset + i;
                    adam_m[k] = ADAM_BETA1 * adam_m[k] + (1.0 - ADAM_BETA1) * g;
                    adam_v[k] = ADAM_BETA2 * adam_v[k] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = adam_m[k] / bc1;
                    let v_hat = adam_v[k] / bc2;
                    *p -= epoch_lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
                offset += slice.len();
            }
        }
        let train_loss = epoch_loss / train_norm.len() as f64;
        let val_loss = validation_loss(&model, &val_norm)?;
        log.epochs.push(EpochStats { epoch, train_loss, val_loss });

        if val_loss < log.best_val_loss {
            log.best_val_loss = val_loss;
            log.best_epoch = epoch;
            best_model = model.clone();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= config.early_stop_patience {
                log.stopped_early = true;
                break;
            }
        }
    }

    Ok((best_model, log))
}
