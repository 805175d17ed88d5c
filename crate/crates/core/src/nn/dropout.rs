use crate::error::{Error, Result};
use crate::linalg::{hadamard, Matrix};
use crate::nn::Mode;
use rand::Rng;

/// Inverted dropout. In train mode each entry is zeroed with probability `p`
/// and survivors are scaled by 1/(1−p); in infer mode this is the identity.
/// Returns the output and the mask (already carrying the 1/(1−p) scale) so
/// the backward pass can reuse it.
pub fn dropout_forward(
    x: &Matrix,
    p: f64,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<(Matrix, Matrix)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Usage(format!(
            "dropout probability must be in [0, 1), got {p}"
        )));
    }
    if mode == Mode::Infer || p == 0.0 {
        return Ok((x.clone(), Matrix::filled(x.rows(), x.cols(), 1.0)));
    }
    let keep_scale = 1.0 / (1.0 - p);
    let mut mask = Matrix::zeros(x.rows(), x.cols());
    for v in mask.data_mut() {
        if rng.random::<f64>() >= p {
            *v = keep_scale;
        }
    }
    let out = hadamard(x, &mask)?;
    Ok((out, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn p_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::from_vec(2, 2, vec![1.0, -2.0, 3.0, -4.0]).unwrap();
        let (out, mask) = dropout_forward(&x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(out, x);
        assert!(mask.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn infer_mode_is_identity_for_any_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let (out, _) = dropout_forward(&x, 0.9, Mode::Infer, &mut rng).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn invalid_p_is_usage_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::zeros(1, 1);
        assert!(dropout_forward(&x, 1.0, Mode::Train, &mut rng).is_err());
        assert!(dropout_forward(&x, -0.1, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn sample_mean_preserved_at_half_rate() {
        // Law of large numbers: with p=0.5 over 1e5 ones, the inverted-dropout
        // output mean stays near 1.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Matrix::filled(100, 1000, 1.0);
        let (out, _) = dropout_forward(&x, 0.5, Mode::Train, &mut rng).unwrap();
        let mean = out.data().iter().sum::<f64>() / out.data().len() as f64;
        assert!((0.98..=1.02).contains(&mean), "mean={mean}");
    }

    #[test]
    fn surviving_entries_are_scaled() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Matrix::filled(10, 10, 2.0);
        let (out, _) = dropout_forward(&x, 0.25, Mode::Train, &mut rng).unwrap();
        for &v in out.data() {
            assert!(v == 0.0 || (v - 2.0 / 0.75).abs() < 1e-12);
        }
    }
}
