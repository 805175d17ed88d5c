//! Finite-difference verification of every hand-derived backward pass.
//!
//! Central differences with a small step are compared entry-by-entry against
//! the analytic gradients. Keep systems under ~500 parameters so the sweep
//! stays fast.

use crate::error::Result;
use crate::linalg::Matrix;
use crate::nn::{
    mse, windows_to_sequence, Activation, DenseLayer, DenseNet, Mode, Model, ModelKind, Parameter,
    RnnCell, Topology,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_FD_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Anything whose loss is differentiable w.r.t. a flat list of parameters.
pub trait GradSystem {
    fn params_mut(&mut self) -> Vec<&mut Parameter>;
    /// Loss at the current parameter values, with no side effects on grads.
    fn loss(&mut self) -> Result<f64>;
    /// Forward + backward: leaves analytic gradients in every parameter.
    fn compute_grads(&mut self) -> Result<f64>;
}

/// Relative error with a floor that keeps near-zero gradient pairs from
/// amplifying finite-difference noise.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_error <= self.tolerance)
    }

    pub fn max_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }
}

/// Per-parameter maximum relative error between analytic and
/// central-difference gradients.
pub fn gradient_check(
    system: &mut impl GradSystem,
    tolerance: f64,
    step: f64,
) -> Result<GradCheckReport> {
    system.compute_grads()?;
    let analytic: Vec<(String, Vec<f64>)> = system
        .params_mut()
        .iter()
        .map(|p| (p.name.clone(), p.grad.data().to_vec()))
        .collect();

    let mut entries = Vec::with_capacity(analytic.len());
    for (i, (name, grads)) in analytic.iter().enumerate() {
        let mut max_rel = 0.0f64;
        for j in 0..grads.len() {
            let orig = {
                let mut ps = system.params_mut();
                let v = ps[i].value.data()[j];
                ps[i].value.data_mut()[j] = v + step;
                v
            };
            let loss_plus = system.loss()?;
            {
                let mut ps = system.params_mut();
                ps[i].value.data_mut()[j] = orig - step;
            }
            let loss_minus = system.loss()?;
            {
                let mut ps = system.params_mut();
                ps[i].value.data_mut()[j] = orig;
            }
            let numeric = (loss_plus - loss_minus) / (2.0 * step);
            max_rel = max_rel.max(relative_error(grads[j], numeric));
        }
        entries.push(GradCheckEntry {
            name: name.clone(),
            max_rel_error: max_rel,
        });
    }
    Ok(GradCheckReport { tolerance, entries })
}

/// A forecasting model frozen onto one input/target pair.
pub struct ModelSystem {
    pub model: Model,
    x_seq: Vec<Matrix>,
    target: Matrix,
}

impl ModelSystem {
    pub fn new(model: Model, x_seq: Vec<Matrix>, target: Matrix) -> Self {
        ModelSystem {
            model,
            x_seq,
            target,
        }
    }
}

impl GradSystem for ModelSystem {
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.model.params_mut()
    }

    fn loss(&mut self) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pred = self.model.forward(&self.x_seq, Mode::Infer, &mut rng)?;
        mse(&pred, &self.target)
    }

    fn compute_grads(&mut self) -> Result<f64> {
        self.model.zero_grad();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pred = self.model.forward(&self.x_seq, Mode::Train, &mut rng)?;
        self.model.bptt(&pred, &self.target)
    }
}

/// Minimal RNN regressor (vanilla cell + linear head) so the vanilla-cell
/// backward derivation is checkable in isolation.
pub struct RnnRegressor {
    pub cell: RnnCell,
    pub head: DenseLayer,
    x_seq: Vec<Matrix>,
    target: Matrix,
}

impl RnnRegressor {
    pub fn new(hidden: usize, x_seq: Vec<Matrix>, target: Matrix, rng: &mut impl Rng) -> Self {
        RnnRegressor {
            cell: RnnCell::new("rnn0", 1, hidden, rng),
            head: DenseLayer::new("head", hidden, 1, Activation::Linear, rng),
            x_seq,
            target,
        }
    }

    fn forward(&mut self, record: bool) -> Result<Matrix> {
        let batch = self.x_seq[0].cols();
        let mut h = Matrix::zeros(self.cell.hidden_size(), batch);
        for x in &self.x_seq {
            h = self.cell.forward(&h, x, record)?;
        }
        self.head.forward(&h, record)
    }
}

impl GradSystem for RnnRegressor {
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut ps = self.cell.params_mut();
        ps.extend(self.head.params_mut());
        ps
    }

    fn loss(&mut self) -> Result<f64> {
        let pred = self.forward(false)?;
        mse(&pred, &self.target)
    }

    fn compute_grads(&mut self) -> Result<f64> {
        for p in self.params_mut() {
            p.zero_grad();
        }
        self.cell.clear_tape();
        self.head.clear_tape();
        let pred = self.forward(true)?;
        let loss = mse(&pred, &self.target)?;
        let n = pred.data().len() as f64;
        let d_pred = pred.sub(&self.target)?.scale(2.0 / n);
        let mut dh = self.head.backward(&d_pred)?;
        for _ in 0..self.x_seq.len() {
            let (dh_prev, _dx) = self.cell.backward(&dh)?;
            dh = dh_prev;
        }
        Ok(loss)
    }
}

fn random_case(window_len: usize, batch: usize, rng: &mut impl Rng) -> (Vec<Matrix>, Matrix) {
    let windows: Vec<Vec<f64>> = (0..batch)
        .map(|_| (0..window_len).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let refs: Vec<&[f64]> = windows.iter().map(|w| w.as_slice()).collect();
    let x_seq = windows_to_sequence(&refs, window_len).expect("shape");
    let mut target = Matrix::zeros(1, batch);
    for b in 0..batch {
        target.set(0, b, rng.random_range(-1.0..1.0));
    }
    (x_seq, target)
}

/// Stacked-LSTM check instance: 2 layers, ~200 parameters, T = 5.
pub fn lstm_check_system(seed: u64) -> ModelSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topology = Topology {
        kind: ModelKind::Lstm,
        input_size: 1,
        window_len: 5,
        hidden: vec![4, 3],
    };
    let model = Model::new(&topology, 0.0, &mut rng).expect("valid topology");
    let (x_seq, target) = random_case(5, 2, &mut rng);
    ModelSystem::new(model, x_seq, target)
}

/// Dense-baseline check instance; `activation` selects the hidden-layer
/// nonlinearity (linear stays exact under finite differences).
pub fn dense_check_system(seed: u64, activation: Activation) -> ModelSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = DenseNet::with_activation(1, 8, &[8, 6], 0.0, activation, &mut rng);
    let model = Model::Baseline(net);
    let (x_seq, target) = random_case(8, 2, &mut rng);
    ModelSystem::new(model, x_seq, target)
}

/// Vanilla-RNN check instance, T = 6.
pub fn rnn_check_system(seed: u64) -> RnnRegressor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x_seq, target) = random_case(6, 2, &mut rng);
    RnnRegressor::new(6, x_seq, target, &mut rng)
}
