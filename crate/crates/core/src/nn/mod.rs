//! Layers with explicit forward passes and hand-derived backward passes:
//! dense, vanilla RNN cell, LSTM cell, dropout, and the assembled models.

mod dense;
mod dropout;
mod lstm;
mod model;
mod probe;
mod rnn;

pub use dense::{Activation, DenseLayer};
pub use dropout::dropout_forward;
pub use lstm::LstmCell;
pub use model::{mse, roll_forward, windows_to_sequence, DenseNet, Model, ModelKind, StackedLstm, Topology};
pub use probe::{gradient_norm_profile, spectral_norm, CellKind};
pub use rnn::RnnCell;

use crate::linalg::Matrix;
use rand::Rng;

/// A weight matrix paired with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Hidden state h and cell state c of one LSTM layer at one time step.
#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Matrix,
    pub c: Matrix,
}

impl LstmState {
    pub fn zeros(hidden: usize, batch: usize) -> Self {
        LstmState {
            h: Matrix::zeros(hidden, batch),
            c: Matrix::zeros(hidden, batch),
        }
    }
}

/// Forward-pass mode: `Train` records tapes and applies dropout, `Infer` does neither.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Uniform init in ±1/√fan_in.
pub(crate) fn uniform_init(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Matrix {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("init shape")
}
