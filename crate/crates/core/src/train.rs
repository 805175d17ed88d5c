//! Epoch loop, early stopping with best-checkpoint restore, and evaluation
//! metrics.

use crate::checkpoint::Checkpoint;
use crate::data::{Split, WindowedDataset};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{windows_to_sequence, Mode, Model, ModelKind, Topology};
use crate::optim::{
    clip_gradients, ClipPolicy, Optimizer, OptimizerKind, PlateauScheduler, IMPROVEMENT_EPS,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Hyperparameters for one training run. Defaults live here and every one
/// is config-overridable.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout_p: f64,
    pub clip_threshold: f64,
    pub clip_enabled: bool,
    pub patience: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub model: ModelKind,
    pub hidden: Vec<usize>,
    pub window_len: usize,
    pub shuffle: bool,
    pub momentum: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.005,
            dropout_p: 0.2,
            clip_threshold: 5.0,
            clip_enabled: true,
            patience: 10,
            seed: 42,
            optimizer: OptimizerKind::Adam,
            model: ModelKind::Lstm,
            hidden: vec![32, 16],
            window_len: 12,
            shuffle: false,
            momentum: 0.9,
            plateau_factor: 0.5,
            plateau_patience: 3,
            min_lr: 1e-5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Usage(
                "epochs, batch_size, and patience must all be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Usage(format!(
                "dropout_p must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if self.clip_enabled && self.clip_threshold <= 0.0 {
            return Err(Error::Usage("clip_threshold must be positive".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Usage("learning_rate must be positive".into()));
        }
        self.topology().validate()
    }

    pub fn topology(&self) -> Topology {
        Topology {
            kind: self.model,
            input_size: 1,
            window_len: self.window_len,
            hidden: self.hidden.clone(),
        }
    }

    pub fn build_model(&self, rng: &mut impl Rng) -> Result<Model> {
        Model::new(&self.topology(), self.dropout_p, rng)
    }

    pub fn clip_policy(&self) -> Result<ClipPolicy> {
        if self.clip_enabled {
            ClipPolicy::new(self.clip_threshold)
        } else {
            Ok(ClipPolicy::disabled())
        }
    }
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    /// Smallest clip scale applied during the epoch (1.0 if never clipped).
    pub clip_scale_min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    pub n: usize,
}

impl MetricsReport {
    pub fn from_residuals(predictions: &[f64], targets: &[f64]) -> Result<Self> {
        if predictions.is_empty() || predictions.len() != targets.len() {
            return Err(Error::Usage("metrics need a non-empty prediction/target pairing".into()));
        }
        let n = predictions.len();
        let mut abs_sum = 0.0;
        let mut sq_sum = 0.0;
        for (p, y) in predictions.iter().zip(targets) {
            let r = p - y;
            abs_sum += r.abs();
            sq_sum += r * r;
        }
        let mae = abs_sum / n as f64;
        let mse = sq_sum / n as f64;
        Ok(MetricsReport {
            mae,
            mse,
            rmse: mse.sqrt(),
            n,
        })
    }
}

/// Which space metrics are computed in; `Original` denormalizes first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Normalized,
    Original,
}

impl Space {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "normalized" => Ok(Space::Normalized),
            "original" => Ok(Space::Original),
            other => Err(Error::Usage(format!(
                "unknown space '{other}' (expected normalized or original)"
            ))),
        }
    }
}

const EVAL_BATCH: usize = 512;

/// Runs the model over one split and returns predictions with their targets.
pub fn predict_split(
    model: &mut Model,
    ds: &WindowedDataset,
    split: Split,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let range = ds.split_range(split)?;
    if range.is_empty() {
        return Err(Error::Usage(format!("{} split is empty", split.as_str())));
    }
    // Inference consumes no randomness; any rng satisfies the signature.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut preds = Vec::with_capacity(range.len());
    let mut targets = Vec::with_capacity(range.len());
    let mut i = range.start;
    while i < range.end {
        let end = (i + EVAL_BATCH).min(range.end);
        let windows: Vec<&[f64]> = ds.windows[i..end].iter().map(|w| w.as_slice()).collect();
        let seq = windows_to_sequence(&windows, ds.window_len)?;
        let out = model.forward(&seq, Mode::Infer, &mut rng)?;
        preds.extend_from_slice(out.data());
        targets.extend_from_slice(&ds.labels[i..end]);
        i = end;
    }
    Ok((preds, targets))
}

use rand::SeedableRng;

/// MAE, MSE, and RMSE of the model on one split, in the requested space.
pub fn evaluate(
    model: &mut Model,
    ds: &WindowedDataset,
    split: Split,
    space: Space,
) -> Result<MetricsReport> {
    let (mut preds, mut targets) = predict_split(model, ds, split)?;
    if space == Space::Original {
        let stats = ds
            .norm
            .ok_or_else(|| Error::State("dataset has no normalization stats".into()))?;
        for v in preds.iter_mut().chain(targets.iter_mut()) {
            *v = stats.denormalize(*v);
        }
    }
    MetricsReport::from_residuals(&preds, &targets)
}

/// One full pass over the train split: per batch, forward → MSE → BPTT →
/// clip → optimizer step → zero grads. Returns the mean sample loss and the
/// smallest clip scale seen.
pub fn train_epoch(
    model: &mut Model,
    optimizer: &mut Optimizer,
    ds: &WindowedDataset,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<(f64, f64)> {
    let range = ds.split_range(Split::Train)?;
    let mut order: Vec<usize> = range.collect();
    if config.shuffle {
        order.shuffle(rng);
    }
    let policy = config.clip_policy()?;
    let mut loss_sum = 0.0;
    let mut sample_count = 0usize;
    let mut clip_scale_min = 1.0f64;

    for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
        let windows: Vec<&[f64]> = chunk.iter().map(|&i| ds.windows[i].as_slice()).collect();
        let mut target = Matrix::zeros(1, chunk.len());
        for (b, &i) in chunk.iter().enumerate() {
            target.set(0, b, ds.labels[i]);
        }
        let seq = windows_to_sequence(&windows, ds.window_len)?;
        let pred = model.forward(&seq, Mode::Train, rng)?;
        let loss = model.bptt(&pred, &target)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss {loss} at epoch {epoch}, batch {batch_no} — aborting epoch"
            )));
        }
        let mut params = model.params_mut();
        let scale = clip_gradients(&mut params, &policy)?;
        clip_scale_min = clip_scale_min.min(scale);
        optimizer.step(&mut params)?;
        model.zero_grad();

        loss_sum += loss * chunk.len() as f64;
        sample_count += chunk.len();
    }
    Ok((loss_sum / sample_count as f64, clip_scale_min))
}

/// Trains with early stopping and returns the checkpoint with the smallest
/// validation loss (not the last one) plus the full epoch history.
pub fn fit(
    model: &mut Model,
    ds: &WindowedDataset,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Checkpoint, Vec<EpochRecord>)> {
    fit_with_validator(model, ds, config, rng, |m, d| {
        evaluate(m, d, Split::Validation, Space::Normalized).map(|r| r.mse)
    })
}

/// `fit` with a pluggable validation-loss source, so the stopping rule can
/// be exercised against a scripted trajectory.
pub fn fit_with_validator(
    model: &mut Model,
    ds: &WindowedDataset,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut validator: impl FnMut(&mut Model, &WindowedDataset) -> Result<f64>,
) -> Result<(Checkpoint, Vec<EpochRecord>)> {
    config.validate()?;
    let stats = ds
        .norm
        .ok_or_else(|| Error::State("fit requires a normalized dataset".into()))?;
    let params = model.params_mut();
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, &params);
    optimizer.momentum = config.momentum;
    drop(params);

    let mut plateau =
        PlateauScheduler::new(config.plateau_factor, config.plateau_patience, config.min_lr)?;
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut stale_epochs = 0usize;

    for epoch in 1..=config.epochs {
        let (train_loss, clip_scale_min) =
            train_epoch(model, &mut optimizer, ds, config, rng, epoch).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}: {msg}")),
                other => other,
            })?;
        let val_loss = validator(model, ds)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr: optimizer.learning_rate,
            clip_scale_min,
        });

        let improved = match &best {
            None => true,
            Some(b) => val_loss < b.best_val_loss - IMPROVEMENT_EPS,
        };
        if improved {
            best = Some(Checkpoint::from_model(model, stats, config, epoch, val_loss));
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= config.patience {
                break;
            }
        }
        optimizer.learning_rate = plateau.observe(val_loss, optimizer.learning_rate);
    }
    let best = best.expect("at least one epoch ran");
    Ok((best, history))
}

/// Serializes the history as plot-ready CSV: epoch,train_loss,val_loss,lr.
pub fn history_to_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,lr\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.train_loss, r.val_loss, r.lr
        ));
    }
    out
}
