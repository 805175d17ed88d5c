use crate::error::{Error, Result};
use crate::linalg::{
    concat_rows, hadamard, matmul, sigmoid, sigmoid_prime_from_output, tanh,
    tanh_prime_from_output, Matrix,
};
use crate::nn::{uniform_init, LstmState, Parameter};
use rand::Rng;

/// Cached forward intermediates for one cell application, consumed by backward.
struct LstmTape {
    hx: Matrix, // concat(h_prev, x), shape (hidden+input, batch)
    i: Matrix,
    f: Matrix,
    o: Matrix,
    g: Matrix,
    c_prev: Matrix,
    c: Matrix,
}

/// LSTM cell with one fused gate weight matrix of shape (4·hidden, hidden+input).
///
/// Gate row-block order is fixed as i, f, o, g. The cell computes
/// i,f,o = σ, g = tanh of the corresponding rows of W·[h_prev; x] + b, then
/// c_t = f⊙c_prev + i⊙g and h_t = o⊙tanh(c_t).
pub struct LstmCell {
    pub weights: Parameter, // (4*hidden, hidden+input)
    pub bias: Parameter,    // (4*hidden, 1)
    hidden: usize,
    input: usize,
    tape: Vec<LstmTape>,
}

impl LstmCell {
    /// Weights uniform in ±1/√(hidden+input); forget-gate bias 1.0, other biases 0.
    pub fn new(name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let weights = Parameter::new(
            format!("{name}.w"),
            uniform_init(4 * hidden, hidden + input, hidden + input, rng),
        );
        let mut bias_value = Matrix::zeros(4 * hidden, 1);
        for r in hidden..2 * hidden {
            bias_value.set(r, 0, 1.0);
        }
        LstmCell {
            weights,
            bias: Parameter::new(format!("{name}.b"), bias_value),
            hidden,
            input,
            tape: Vec::new(),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn forward(&mut self, prev: &LstmState, x: &Matrix, record_tape: bool) -> Result<LstmState> {
        if x.rows() != self.input {
            return Err(Error::Dimension {
                op: "lstm_forward",
                lhs: (self.input, x.cols()),
                rhs: x.shape(),
            });
        }
        if prev.h.rows() != self.hidden || prev.h.shape() != prev.c.shape() {
            return Err(Error::Dimension {
                op: "lstm_forward",
                lhs: (self.hidden, x.cols()),
                rhs: prev.h.shape(),
            });
        }
        let hx = concat_rows(&prev.h, x)?;
        let z = matmul(&self.weights.value, &hx)?.add_col_broadcast(&self.bias.value)?;
        let h = self.hidden;
        let i = sigmoid(&z.slice_rows(0, h));
        let f = sigmoid(&z.slice_rows(h, 2 * h));
        let o = sigmoid(&z.slice_rows(2 * h, 3 * h));
        let g = tanh(&z.slice_rows(3 * h, 4 * h));

        let c = hadamard(&f, &prev.c)?.add(&hadamard(&i, &g)?)?;
        let h_new = hadamard(&o, &tanh(&c))?;

        if record_tape {
            self.tape.push(LstmTape {
                hx,
                i,
                f,
                o,
                g,
                c_prev: prev.c.clone(),
                c: c.clone(),
            });
        }
        Ok(LstmState { h: h_new, c })
    }

    /// Backward through the most recent recorded forward step.
    ///
    /// Accumulates weight/bias gradients and returns (dh_prev, dc_prev, dx).
    pub fn backward(&mut self, dh: &Matrix, dc: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
        let t = self
            .tape
            .pop()
            .ok_or_else(|| Error::State(format!("{}: backward without forward", self.weights.name)))?;

        let tc = tanh(&t.c);
        // h_t = o ⊙ tanh(c_t)
        let d_o = hadamard(dh, &tc)?;
        let dzo = hadamard(&d_o, &sigmoid_prime_from_output(&t.o))?;
        let dc_total = dc.add(&hadamard(&hadamard(dh, &t.o)?, &tanh_prime_from_output(&tc))?)?;
        // c_t = f ⊙ c_prev + i ⊙ g
        let dzf = hadamard(
            &hadamard(&dc_total, &t.c_prev)?,
            &sigmoid_prime_from_output(&t.f),
        )?;
        let dzi = hadamard(
            &hadamard(&dc_total, &t.g)?,
            &sigmoid_prime_from_output(&t.i),
        )?;
        let dzg = hadamard(&hadamard(&dc_total, &t.i)?, &tanh_prime_from_output(&t.g))?;

        let dz = concat_rows(&concat_rows(&concat_rows(&dzi, &dzf)?, &dzo)?, &dzg)?;
        self.weights
            .grad
            .add_in_place(&matmul(&dz, &t.hx.transpose())?)?;
        self.bias.grad.add_in_place(&dz.row_sums())?;

        let dhx = matmul(&self.weights.value.transpose(), &dz)?;
        let dh_prev = dhx.slice_rows(0, self.hidden);
        let dx = dhx.slice_rows(self.hidden, self.hidden + self.input);
        let dc_prev = hadamard(&dc_total, &t.f)?;
        Ok((dh_prev, dc_prev, dx))
    }

    pub fn clear_tape(&mut self) {
        self.tape.clear();
    }

    pub fn tape_len(&self) -> usize {
        self.tape.len()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weights, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![&self.weights, &self.bias]
    }
}
