//! Parameter updates, global gradient clipping, and plateau-based learning
//! rate reduction.

use crate::error::{Error, Result};
use crate::linalg::{l2_norm, Matrix};
use crate::nn::Parameter;

/// Global L2-norm clipping policy.
#[derive(Debug, Clone, Copy)]
pub struct ClipPolicy {
    pub threshold: f64,
    pub enabled: bool,
}

impl ClipPolicy {
    pub fn new(threshold: f64) -> Result<Self> {
        if threshold <= 0.0 {
            return Err(Error::Usage(format!(
                "clip threshold must be positive, got {threshold}"
            )));
        }
        Ok(ClipPolicy {
            threshold,
            enabled: true,
        })
    }

    pub fn disabled() -> Self {
        ClipPolicy {
            threshold: f64::INFINITY,
            enabled: false,
        }
    }
}

/// Rescales all gradients by τ/‖g‖ when the global norm exceeds τ, keeping
/// the update in the original gradient direction. Returns the applied scale
/// (1.0 when untouched).
pub fn clip_gradients(params: &mut [&mut Parameter], policy: &ClipPolicy) -> Result<f64> {
    for p in params.iter() {
        if !p.grad.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient in parameter '{}'",
                p.name
            )));
        }
    }
    if !policy.enabled {
        return Ok(1.0);
    }
    let grads: Vec<&Matrix> = params.iter().map(|p| &p.grad).collect();
    let norm = l2_norm(&grads)?;
    if norm <= policy.threshold {
        return Ok(1.0);
    }
    let scale = policy.threshold / norm;
    for p in params.iter_mut() {
        p.grad.scale_in_place(scale);
    }
    Ok(scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Usage(format!(
                "unknown optimizer '{other}' (expected sgd or adam)"
            ))),
        }
    }
}

enum Slot {
    Sgd { momentum_buf: Matrix },
    Adam { m: Matrix, v: Matrix },
}

/// Optimizer state: one accumulator slot per parameter, a step counter, and
/// the current learning rate.
pub struct Optimizer {
    kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    slots: Vec<Slot>,
    shapes: Vec<(usize, usize)>,
    step: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &[&mut Parameter]) -> Self {
        let slots = params
            .iter()
            .map(|p| {
                let (r, c) = p.value.shape();
                match kind {
                    OptimizerKind::Sgd => Slot::Sgd {
                        momentum_buf: Matrix::zeros(r, c),
                    },
                    OptimizerKind::Adam => Slot::Adam {
                        m: Matrix::zeros(r, c),
                        v: Matrix::zeros(r, c),
                    },
                }
            })
            .collect();
        let shapes = params.iter().map(|p| p.value.shape()).collect();
        Optimizer {
            kind,
            learning_rate,
            momentum: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            slots,
            shapes,
            step: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// In-place parameter update from the accumulated gradients. Gradients
    /// are left untouched; the caller zeroes them.
    pub fn step(&mut self, params: &mut [&mut Parameter]) -> Result<()> {
        if params.len() != self.slots.len() {
            return Err(Error::State(format!(
                "optimizer initialized for {} parameters, got {}",
                self.slots.len(),
                params.len()
            )));
        }
        for (p, shape) in params.iter().zip(&self.shapes) {
            if p.value.shape() != *shape {
                return Err(Error::State(format!(
                    "optimizer state shape mismatch for parameter '{}'",
                    p.name
                )));
            }
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                let mu = self.momentum;
                for (p, slot) in params.iter_mut().zip(&mut self.slots) {
                    let Slot::Sgd { momentum_buf } = slot else {
                        unreachable!()
                    };
                    let value = p.value.data_mut();
                    for ((w, g), v) in value
                        .iter_mut()
                        .zip(p.grad.data())
                        .zip(momentum_buf.data_mut())
                    {
                        *v = mu * *v + g;
                        *w -= lr * *v;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
                let bc1 = 1.0 - b1.powi(self.step as i32);
                let bc2 = 1.0 - b2.powi(self.step as i32);
                for (p, slot) in params.iter_mut().zip(&mut self.slots) {
                    let Slot::Adam { m, v } = slot else { unreachable!() };
                    let value = p.value.data_mut();
                    for (((w, g), mi), vi) in value
                        .iter_mut()
                        .zip(p.grad.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *mi = b1 * *mi + (1.0 - b1) * g;
                        *vi = b2 * *vi + (1.0 - b2) * g * g;
                        let m_hat = *mi / bc1;
                        let v_hat = *vi / bc2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// epochs without validation improvement, never dropping below `min_lr`.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    best: Option<f64>,
    stale_epochs: usize,
}

/// Improvement tolerance shared with early stopping: a loss counts as an
/// improvement only when it beats the best by more than this.
pub const IMPROVEMENT_EPS: f64 = 1e-9;

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize, min_lr: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&factor) || factor <= 0.0 {
            return Err(Error::Usage(format!(
                "plateau factor must be in (0, 1), got {factor}"
            )));
        }
        if patience == 0 {
            return Err(Error::Usage("plateau patience must be >= 1".into()));
        }
        Ok(PlateauScheduler {
            factor,
            patience,
            min_lr,
            best: None,
            stale_epochs: 0,
        })
    }

    /// Feeds one epoch's validation loss; returns the learning rate to use next.
    pub fn observe(&mut self, val_loss: f64, current_lr: f64) -> f64 {
        let improved = match self.best {
            None => true,
            Some(best) => val_loss < best - IMPROVEMENT_EPS,
        };
        if improved {
            self.best = Some(val_loss);
            self.stale_epochs = 0;
            return current_lr;
        }
        self.stale_epochs += 1;
        if self.stale_epochs >= self.patience {
            self.stale_epochs = 0;
            (current_lr * self.factor).max(self.min_lr)
        } else {
            current_lr
        }
    }
}

/// Applies the plateau rule over a whole validation-loss history, returning
/// the final learning rate.
pub fn reduce_lr_on_plateau(
    initial_lr: f64,
    val_loss_history: &[f64],
    factor: f64,
    patience: usize,
    min_lr: f64,
) -> Result<f64> {
    let mut sched = PlateauScheduler::new(factor, patience, min_lr)?;
    let mut lr = initial_lr;
    for &v in val_loss_history {
        lr = sched.observe(v, lr);
    }
    Ok(lr)
}
