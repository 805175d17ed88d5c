//! Python bindings: a `Forecaster` class over the train/evaluate/predict
//! pipeline plus the gradient diagnostics.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use trafficast::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use trafficast::data::{
    build_windows, normalize, split, FitScope, NormScheme, Split, VolumeSeries,
};
use trafficast::error::Error;
use trafficast::gradcheck::{
    dense_check_system, gradient_check, lstm_check_system, rnn_check_system,
};
use trafficast::nn::{roll_forward, Activation, CellKind, ModelKind};
use trafficast::optim::OptimizerKind;
use trafficast::train::{evaluate, fit, Space, TrainConfig};

fn to_py_err(e: Error) -> PyErr {
    match &e {
        Error::Usage(_) | Error::Config { .. } => PyValueError::new_err(e.to_string()),
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn series_from_values(values: Vec<f64>) -> VolumeSeries {
    VolumeSeries {
        intersection_id: "python".into(),
        start: chrono::NaiveDateTime::parse_from_str("2024-01-01 00:00", "%Y-%m-%d %H:%M")
            .expect("static timestamp"),
        bin_minutes: 15,
        values,
    }
}

/// Stacked-LSTM (or dense baseline) next-bin forecaster.
#[pyclass]
struct Forecaster {
    config: TrainConfig,
    fractions: (f64, f64, f64),
    norm_scheme: NormScheme,
    norm_scope: FitScope,
    checkpoint: Option<Checkpoint>,
    dataset: Option<trafficast::data::WindowedDataset>,
}

#[pymethods]
impl Forecaster {
    #[new]
    #[pyo3(signature = (
        model = "lstm",
        hidden = vec![32, 16],
        window_len = 12,
        epochs = 50,
        batch_size = 32,
        learning_rate = 0.005,
        dropout = 0.2,
        clip_threshold = 5.0,
        patience = 10,
        seed = 42,
        optimizer = "adam",
        fractions = (0.8, 0.1, 0.1),
        norm_scheme = "zscore",
        norm_scope = "train_only",
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        model: &str,
        hidden: Vec<usize>,
        window_len: usize,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        dropout: f64,
        clip_threshold: f64,
        patience: usize,
        seed: u64,
        optimizer: &str,
        fractions: (f64, f64, f64),
        norm_scheme: &str,
        norm_scope: &str,
    ) -> PyResult<Self> {
        let config = TrainConfig {
            epochs,
            batch_size,
            learning_rate,
            dropout_p: dropout,
            clip_threshold,
            patience,
            seed,
            optimizer: OptimizerKind::parse(optimizer).map_err(to_py_err)?,
            model: ModelKind::parse(model).map_err(to_py_err)?,
            hidden,
            window_len,
            ..TrainConfig::default()
        };
        config.validate().map_err(to_py_err)?;
        Ok(Forecaster {
            config,
            fractions,
            norm_scheme: NormScheme::parse(norm_scheme).map_err(to_py_err)?,
            norm_scope: FitScope::parse(norm_scope).map_err(to_py_err)?,
            checkpoint: None,
            dataset: None,
        })
    }

    /// Trains on a raw value series and returns the history as a list of
    /// (epoch, train_loss, val_loss, lr) tuples.
    fn fit(&mut self, values: Vec<f64>) -> PyResult<Vec<(usize, f64, f64, f64)>> {
        let series = series_from_values(values);
        let mut ds = build_windows(&series, self.config.window_len).map_err(to_py_err)?;
        let (tr, va, te) = self.fractions;
        split(&mut ds, tr, va, te).map_err(to_py_err)?;
        normalize(&mut ds, self.norm_scheme, self.norm_scope).map_err(to_py_err)?;

        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut model = self.config.build_model(&mut rng).map_err(to_py_err)?;
        let (best, history) = fit(&mut model, &ds, &self.config, &mut rng).map_err(to_py_err)?;
        self.checkpoint = Some(best);
        self.dataset = Some(ds);
        Ok(history
            .iter()
            .map(|r| (r.epoch, r.train_loss, r.val_loss, r.lr))
            .collect())
    }

    /// MAE/MSE/RMSE of the best checkpoint on one split of the fitted data.
    #[pyo3(signature = (split = "test", space = "normalized"))]
    fn evaluate(&self, split: &str, space: &str) -> PyResult<std::collections::HashMap<String, f64>> {
        let ckpt = self
            .checkpoint
            .as_ref()
            .ok_or_else(|| PyRuntimeError::new_err("call fit() or load() first"))?;
        let ds = self
            .dataset
            .as_ref()
            .ok_or_else(|| PyRuntimeError::new_err("no dataset attached; call fit()"))?;
        let mut model = ckpt.build_model().map_err(to_py_err)?;
        let report = evaluate(
            &mut model,
            ds,
            Split::parse(split).map_err(to_py_err)?,
            Space::parse(space).map_err(to_py_err)?,
        )
        .map_err(to_py_err)?;
        Ok(std::collections::HashMap::from([
            ("mae".to_string(), report.mae),
            ("mse".to_string(), report.mse),
            ("rmse".to_string(), report.rmse),
            ("n".to_string(), report.n as f64),
        ]))
    }

    /// Predicts the next `horizon` bins from the series tail (raw values).
    /// Above horizon 1, predictions are fed back as inputs.
    #[pyo3(signature = (tail, horizon = 1))]
    fn predict(&self, tail: Vec<f64>, horizon: usize) -> PyResult<Vec<f64>> {
        let ckpt = self
            .checkpoint
            .as_ref()
            .ok_or_else(|| PyRuntimeError::new_err("call fit() or load() first"))?;
        let window_len = ckpt.config.window_len;
        if tail.len() < window_len {
            return Err(PyValueError::new_err(format!(
                "need at least {window_len} values, got {}",
                tail.len()
            )));
        }
        let normalized: Vec<f64> = tail.iter().map(|&v| ckpt.norm.normalize(v)).collect();
        let mut model = ckpt.build_model().map_err(to_py_err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(ckpt.config.seed);
        let preds = roll_forward(&mut model, &normalized, window_len, horizon, &mut rng)
            .map_err(to_py_err)?;
        Ok(preds.iter().map(|&p| ckpt.norm.denormalize(p)).collect())
    }

    /// 1-based epoch index of the best validation loss.
    #[getter]
    fn best_epoch(&self) -> Option<usize> {
        self.checkpoint.as_ref().map(|c| c.epoch)
    }

    #[getter]
    fn best_val_loss(&self) -> Option<f64> {
        self.checkpoint.as_ref().map(|c| c.best_val_loss)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let ckpt = self
            .checkpoint
            .as_ref()
            .ok_or_else(|| PyRuntimeError::new_err("nothing trained to save"))?;
        save_checkpoint(ckpt, &path).map_err(to_py_err)
    }

    /// Loads a checkpoint saved by `save()` or the CLI. The returned
    /// forecaster can predict immediately; attach data with fit() to
    /// evaluate on splits.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = load_checkpoint(&path).map_err(to_py_err)?;
        Ok(Forecaster {
            config: ckpt.config.clone(),
            fractions: (0.8, 0.1, 0.1),
            norm_scheme: ckpt.norm.scheme,
            norm_scope: ckpt.norm.fit_scope,
            checkpoint: Some(ckpt),
            dataset: None,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Forecaster(model='{}', hidden={:?}, window_len={}, trained={})",
            self.config.model.as_str(),
            self.config.hidden,
            self.config.window_len,
            self.checkpoint.is_some()
        )
    }
}

/// Per-step gradient norms ‖∂loss/∂h_t‖ for t = T..1 of a seeded rollout.
#[pyfunction]
#[pyo3(signature = (cell = "rnn", spectral_scale = 1.0, forget_bias = 0.0, steps = 30, seed = 1))]
fn gradient_norm_profile(
    cell: &str,
    spectral_scale: f64,
    forget_bias: f64,
    steps: usize,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let kind = match cell {
        "rnn" => CellKind::Rnn,
        "lstm" => CellKind::Lstm,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown cell '{other}' (expected rnn or lstm)"
            )))
        }
    };
    trafficast::nn::gradient_norm_profile(kind, spectral_scale, forget_bias, steps, seed)
        .map_err(to_py_err)
}

/// Max relative error between analytic and finite-difference gradients for
/// one seeded instance of the given layer family.
#[pyfunction]
#[pyo3(signature = (layer = "lstm", seed = 0, step = 1e-5))]
fn gradient_check_max_error(layer: &str, seed: u64, step: f64) -> PyResult<f64> {
    let report = match layer {
        "dense" => {
            let mut sys = dense_check_system(seed, Activation::Relu);
            gradient_check(&mut sys, 1.0, step)
        }
        "rnn" => {
            let mut sys = rnn_check_system(seed);
            gradient_check(&mut sys, 1.0, step)
        }
        "lstm" => {
            let mut sys = lstm_check_system(seed);
            gradient_check(&mut sys, 1.0, step)
        }
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown layer '{other}' (expected dense, rnn, or lstm)"
            )))
        }
    }
    .map_err(to_py_err)?;
    Ok(report.max_error())
}

/// MAE/MSE/RMSE of a prediction/target pairing.
#[pyfunction]
fn metrics(
    predictions: Vec<f64>,
    targets: Vec<f64>,
) -> PyResult<std::collections::HashMap<String, f64>> {
    let report = trafficast::train::MetricsReport::from_residuals(&predictions, &targets)
        .map_err(to_py_err)?;
    Ok(std::collections::HashMap::from([
        ("mae".to_string(), report.mae),
        ("mse".to_string(), report.mse),
        ("rmse".to_string(), report.rmse),
        ("n".to_string(), report.n as f64),
    ]))
}

#[pymodule]
fn trafficast_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Forecaster>()?;
    m.add_function(wrap_pyfunction!(gradient_norm_profile, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_check_max_error, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
