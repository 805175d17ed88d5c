use crate::error::{Error, Result};
use crate::linalg::{concat_rows, hadamard, matmul, tanh, tanh_prime_from_output, Matrix};
use crate::nn::{uniform_init, Parameter};
use rand::Rng;

struct RnnTape {
    hx: Matrix,
    h: Matrix,
}

/// Vanilla recurrent cell: h_t = tanh(W·[h_prev; x]) with a fused weight
/// matrix of shape (hidden, hidden+input). Kept for the gradient-propagation
/// comparison against the LSTM cell.
pub struct RnnCell {
    pub weights: Parameter,
    hidden: usize,
    input: usize,
    tape: Vec<RnnTape>,
}

impl RnnCell {
    pub fn new(name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        RnnCell {
            weights: Parameter::new(
                format!("{name}.w"),
                uniform_init(hidden, hidden + input, hidden + input, rng),
            ),
            hidden,
            input,
            tape: Vec::new(),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn forward(&mut self, h_prev: &Matrix, x: &Matrix, record_tape: bool) -> Result<Matrix> {
        if x.rows() != self.input || h_prev.rows() != self.hidden {
            return Err(Error::Dimension {
                op: "rnn_forward",
                lhs: (self.hidden + self.input, x.cols()),
                rhs: (h_prev.rows() + x.rows(), x.cols()),
            });
        }
        let hx = concat_rows(h_prev, x)?;
        let h = tanh(&matmul(&self.weights.value, &hx)?);
        if record_tape {
            self.tape.push(RnnTape { hx, h: h.clone() });
        }
        Ok(h)
    }

    /// Backward through the most recent step; returns (dh_prev, dx).
    pub fn backward(&mut self, dh: &Matrix) -> Result<(Matrix, Matrix)> {
        let t = self
            .tape
            .pop()
            .ok_or_else(|| Error::State(format!("{}: backward without forward", self.weights.name)))?;
        let dz = hadamard(dh, &tanh_prime_from_output(&t.h))?;
        self.weights
            .grad
            .add_in_place(&matmul(&dz, &t.hx.transpose())?)?;
        let dhx = matmul(&self.weights.value.transpose(), &dz)?;
        Ok((
            dhx.slice_rows(0, self.hidden),
            dhx.slice_rows(self.hidden, self.hidden + self.input),
        ))
    }

    pub fn clear_tape(&mut self) {
        self.tape.clear();
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weights]
    }
}
