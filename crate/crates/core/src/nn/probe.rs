//! Empirical gradient-propagation probe for recurrent cells.
//!
//! Backpropagation through a vanilla RNN multiplies by the recurrent weight
//! matrix at every step, so the per-step gradient norm grows or shrinks with
//! its largest singular value. The LSTM cell-state path multiplies by the
//! forget gate elementwise instead, which damps both failure modes. This
//! module measures that directly.

use crate::error::{Error, Result};
use crate::linalg::{l2_norm, matmul, Matrix};
use crate::nn::{LstmCell, LstmState, RnnCell};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Rnn,
    Lstm,
}

/// Largest singular value, estimated by power iteration on AᵀA.
pub fn spectral_norm(m: &Matrix, iterations: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v = Matrix::zeros(m.cols(), 1);
    for x in v.data_mut() {
        *x = rng.random_range(-1.0..1.0);
    }
    let mut sigma = 0.0;
    for _ in 0..iterations {
        let mv = matmul(m, &v).expect("shape");
        let mtmv = matmul(&m.transpose(), &mv).expect("shape");
        let norm = l2_norm(&[&mtmv]).expect("non-empty");
        if norm == 0.0 {
            return 0.0;
        }
        v = mtmv.scale(1.0 / norm);
        sigma = l2_norm(&[&matmul(m, &v).expect("shape")]).expect("non-empty");
    }
    sigma
}

/// Random orthogonal matrix via modified Gram-Schmidt on a seeded random
/// square matrix. Re-draws in the (measure-zero) near-singular case.
fn random_orthogonal(n: usize, rng: &mut impl Rng) -> Matrix {
    'draw: loop {
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
        for _ in 0..n {
            let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            for q in &cols {
                let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= dot * qi;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-8 {
                continue 'draw;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            cols.push(v);
        }
        let mut q = Matrix::zeros(n, n);
        for (j, col) in cols.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                q.set(i, j, v);
            }
        }
        return q;
    }
}

/// Overwrites the recurrent block (the first `hidden` columns) of a fused
/// weight matrix with stacked scaled orthogonal matrices so that every
/// singular value of the block — in particular the largest — equals `target`.
///
/// For a block of `k` stacked h×h orthogonal matrices scaled by s, BᵀB =
/// k·s²·I, so each matrix is scaled by target/√k.
fn set_recurrent_block(weights: &mut Matrix, hidden: usize, target: f64, rng: &mut impl Rng) {
    let stacks = weights.rows() / hidden;
    let s = target / (stacks as f64).sqrt();
    for b in 0..stacks {
        let q = random_orthogonal(hidden, rng);
        for r in 0..hidden {
            for c in 0..hidden {
                weights.set(b * hidden + r, c, s * q.get(r, c));
            }
        }
    }
}

// Inputs must be small enough that the state stays in tanh's linear region
// for the whole rollout even when the recurrence amplifies it; otherwise
// saturation damps the backward factor and masks the explosion.
const PROBE_HIDDEN: usize = 8;
const PROBE_INPUT_SCALE: f64 = 1e-6;

/// Runs a T-step rollout with the recurrent weight scaled to
/// `spectral_scale`, takes loss = ½‖h_T‖², and returns ‖∂loss/∂h_t‖ for
/// t = T…1 from one backward pass.
///
/// `forget_bias` only applies to the LSTM cell.
pub fn gradient_norm_profile(
    cell: CellKind,
    spectral_scale: f64,
    forget_bias: f64,
    steps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if steps < 2 {
        return Err(Error::Usage("gradient profile needs at least 2 steps".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Matrix> = (0..steps)
        .map(|_| {
            Matrix::from_vec(
                1,
                1,
                vec![rng.random_range(-PROBE_INPUT_SCALE..PROBE_INPUT_SCALE)],
            )
            .expect("shape")
        })
        .collect();

    let mut norms = Vec::with_capacity(steps);
    match cell {
        CellKind::Rnn => {
            let mut c = RnnCell::new("probe", 1, PROBE_HIDDEN, &mut rng);
            set_recurrent_block(&mut c.weights.value, PROBE_HIDDEN, spectral_scale, &mut rng);
            let mut h = Matrix::zeros(PROBE_HIDDEN, 1);
            for x in &inputs {
                h = c.forward(&h, x, true)?;
            }
            let mut dh = h; // d(½‖h_T‖²)/dh_T = h_T
            norms.push(l2_norm(&[&dh])?);
            for _ in 1..steps {
                let (dh_prev, _) = c.backward(&dh)?;
                dh = dh_prev;
                norms.push(l2_norm(&[&dh])?);
            }
        }
        CellKind::Lstm => {
            let mut c = LstmCell::new("probe", 1, PROBE_HIDDEN, &mut rng);
            set_recurrent_block(&mut c.weights.value, PROBE_HIDDEN, spectral_scale, &mut rng);
            for r in PROBE_HIDDEN..2 * PROBE_HIDDEN {
                c.bias.value.set(r, 0, forget_bias);
            }
            let mut state = LstmState::zeros(PROBE_HIDDEN, 1);
            for x in &inputs {
                state = c.forward(&state, x, true)?;
            }
            let mut dh = state.h;
            let mut dc = Matrix::zeros(PROBE_HIDDEN, 1);
            norms.push(l2_norm(&[&dh])?);
            for _ in 1..steps {
                let (dh_prev, dc_prev, _) = c.backward(&dh, &dc)?;
                dh = dh_prev;
                dc = dc_prev;
                norms.push(l2_norm(&[&dh])?);
            }
        }
    }
    Ok(norms)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = Matrix::from_vec(2, 2, vec![3.0, 0.0, 0.0, 0.5]).unwrap();
        let s = spectral_norm(&m, 100);
        assert!((s - 3.0).abs() < 1e-9, "s={s}");
    }

    #[test]
    fn recurrent_block_hits_target_singular_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // Both a square (rnn) and a 4-stacked (lstm) block.
        for stacks in [1usize, 4] {
            let mut w = crate::nn::uniform_init(8 * stacks, 10, 10, &mut rng);
            set_recurrent_block(&mut w, 8, 1.5, &mut rng);
            let mut block = Matrix::zeros(8 * stacks, 8);
            for r in 0..8 * stacks {
                for c in 0..8 {
                    block.set(r, c, w.get(r, c));
                }
            }
            assert!((spectral_norm(&block, 200) - 1.5).abs() < 1e-9);
        }
    }

    #[test]
    fn rnn_vanishes_below_unit_scale() {
        let norms = gradient_norm_profile(CellKind::Rnn, 0.5, 0.0, 30, 1).unwrap();
        assert_eq!(norms.len(), 30);
        let ratio = norms.last().unwrap() / norms.first().unwrap();
        assert!(ratio < 1e-3, "ratio={ratio}");
        for w in norms[5..].windows(2) {
            assert!(w[1] <= w[0], "norms must decay beyond step 5");
        }
    }

    #[test]
    fn rnn_explodes_above_unit_scale() {
        let norms = gradient_norm_profile(CellKind::Rnn, 1.5, 0.0, 30, 1).unwrap();
        let ratio = norms.last().unwrap() / norms.first().unwrap();
        assert!(ratio > 1e3, "ratio={ratio}");
    }

    #[test]
    fn lstm_with_forget_bias_stays_in_band() {
        for scale in [0.5, 1.5] {
            let norms = gradient_norm_profile(CellKind::Lstm, scale, 3.0, 30, 1).unwrap();
            let ratio = norms.last().unwrap() / norms.first().unwrap();
            assert!(
                (1e-3..=1e3).contains(&ratio),
                "scale={scale} ratio={ratio}"
            );
        }
    }

    #[test]
    fn too_few_steps_is_usage_error() {
        assert!(gradient_norm_profile(CellKind::Rnn, 1.0, 0.0, 1, 0).is_err());
    }
}
