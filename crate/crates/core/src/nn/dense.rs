use crate::error::{Error, Result};
use crate::linalg::{matmul, Matrix};
use crate::nn::{uniform_init, Parameter};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
}

struct DenseTape {
    input: Matrix,
    pre: Matrix,
}

/// Fully connected layer: activation(W·x + b), bias broadcast over batch columns.
pub struct DenseLayer {
    pub weights: Parameter,
    pub bias: Parameter,
    activation: Activation,
    tape: Vec<DenseTape>,
}

impl DenseLayer {
    pub fn new(name: &str, input: usize, output: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        DenseLayer {
            weights: Parameter::new(format!("{name}.w"), uniform_init(output, input, input, rng)),
            bias: Parameter::new(format!("{name}.b"), Matrix::zeros(output, 1)),
            activation,
            tape: Vec::new(),
        }
    }

    pub fn input_size(&self) -> usize {
        self.weights.value.cols()
    }

    pub fn output_size(&self) -> usize {
        self.weights.value.rows()
    }

    pub fn forward(&mut self, x: &Matrix, record_tape: bool) -> Result<Matrix> {
        let pre = matmul(&self.weights.value, x)?.add_col_broadcast(&self.bias.value)?;
        let out = match self.activation {
            Activation::Linear => pre.clone(),
            Activation::Relu => pre.map(|v| v.max(0.0)),
        };
        if record_tape {
            self.tape.push(DenseTape {
                input: x.clone(),
                pre,
            });
        }
        Ok(out)
    }

    /// Consumes the most recent tape entry; accumulates into grads, returns dx.
    pub fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        let entry = self
            .tape
            .pop()
            .ok_or_else(|| Error::State(format!("{}: backward without forward", self.weights.name)))?;
        let dpre = match self.activation {
            Activation::Linear => dy.clone(),
            Activation::Relu => {
                let gate = entry.pre.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                crate::linalg::hadamard(dy, &gate)?
            }
        };
        self.weights
            .grad
            .add_in_place(&matmul(&dpre, &entry.input.transpose())?)?;
        self.bias.grad.add_in_place(&dpre.row_sums())?;
        matmul(&self.weights.value.transpose(), &dpre)
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

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_zero_bias_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = DenseLayer::new("d", 3, 2, Activation::Linear, &mut rng);
        layer.weights.value.fill(0.0);
        let x = Matrix::from_vec(3, 1, vec![1.0, -2.0, 3.0]).unwrap();
        let out = layer.forward(&x, false).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_weights_pass_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = DenseLayer::new("d", 2, 2, Activation::Linear, &mut rng);
        layer.weights.value = Matrix::identity(2);
        let x = Matrix::from_vec(2, 1, vec![0.5, -0.25]).unwrap();
        let out = layer.forward(&x, false).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn small_linear_oracle() {
        // W=[[1,1]], b=[0.5], x=[2,3]: 1*2 + 1*3 + 0.5 = 5.5.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = DenseLayer::new("d", 2, 1, Activation::Linear, &mut rng);
        layer.weights.value = Matrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        layer.bias.value = Matrix::from_vec(1, 1, vec![0.5]).unwrap();
        let x = Matrix::from_vec(2, 1, vec![2.0, 3.0]).unwrap();
        let out = layer.forward(&x, false).unwrap();
        assert_eq!(out.data(), &[5.5]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = DenseLayer::new("d", 3, 1, Activation::Linear, &mut rng);
        let x = Matrix::zeros(2, 1);
        assert!(matches!(
            layer.forward(&x, false),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = DenseLayer::new("d", 2, 1, Activation::Linear, &mut rng);
        let dy = Matrix::zeros(1, 1);
        assert!(matches!(layer.backward(&dy), Err(Error::State(_))));
    }
}
