//! Run configuration: a flat key-value text file plus CLI-flag overrides.
//!
//! Every key has a default; unknown keys are rejected, and a bad file
//! reports every problem at once rather than stopping at the first.

use crate::data::{ColumnMap, FitScope, NormScheme, DEFAULT_BIN_MINUTES};
use crate::error::{Error, Result};
use crate::nn::ModelKind;
use crate::optim::OptimizerKind;
use crate::train::TrainConfig;
use std::path::{Path, PathBuf};

/// Environment variable consulted for the config path when `--config` is
/// not given.
pub const CONFIG_ENV_VAR: &str = "TRAFFICAST_CONFIG";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub series: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub intersection: Option<String>,
    pub bin_minutes: i64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub norm_scheme: NormScheme,
    pub norm_scope: FitScope,
    pub columns: ColumnMap,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            series: None,
            out_dir: PathBuf::from("out"),
            intersection: None,
            bin_minutes: DEFAULT_BIN_MINUTES,
            train_frac: 0.8,
            val_frac: 0.1,
            test_frac: 0.1,
            norm_scheme: NormScheme::Zscore,
            norm_scope: FitScope::TrainOnly,
            columns: ColumnMap::default(),
        }
    }
}

impl RunConfig {
    /// Applies `key = value` lines on top of `self`. Lines starting with `#`
    /// are comments. All problems are collected before reporting.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut problems = Vec::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                problems.push(format!("line {}: expected 'key = value'", line_no + 1));
                continue;
            };
            if let Err(e) = self.apply_key(k.trim(), v.trim()) {
                problems.push(format!("line {}: {}", line_no + 1, e));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config { problems })
        }
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Usage(format!("cannot read config file {}: {e}", path.display()))
        })?;
        self.apply_text(&text)
    }

    fn apply_key(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse()
                .map_err(|_| format!("bad value '{v}' for key '{key}'"))
        }
        match key {
            "series" => self.series = Some(PathBuf::from(value)),
            "out" => self.out_dir = PathBuf::from(value),
            "intersection" => self.intersection = Some(value.to_string()),
            "bin_minutes" => self.bin_minutes = num(key, value)?,
            "train_frac" => self.train_frac = num(key, value)?,
            "val_frac" => self.val_frac = num(key, value)?,
            "test_frac" => self.test_frac = num(key, value)?,
            "norm_scheme" => self.norm_scheme = NormScheme::parse(value).map_err(|e| e.to_string())?,
            "norm_scope" => self.norm_scope = FitScope::parse(value).map_err(|e| e.to_string())?,
            "col_intersection_id" => self.columns.intersection_id = value.to_string(),
            "col_timestamp" => self.columns.timestamp = value.to_string(),
            "col_direction" => self.columns.direction = value.to_string(),
            "col_vehicle_class" => self.columns.vehicle_class = value.to_string(),
            "col_volume" => self.columns.volume = value.to_string(),
            "epochs" => self.train.epochs = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "learning_rate" => self.train.learning_rate = num(key, value)?,
            "dropout_p" => self.train.dropout_p = num(key, value)?,
            "clip_threshold" => self.train.clip_threshold = num(key, value)?,
            "clip_enabled" => self.train.clip_enabled = num(key, value)?,
            "patience" => self.train.patience = num(key, value)?,
            "seed" => self.train.seed = num(key, value)?,
            "optimizer" => {
                self.train.optimizer = OptimizerKind::parse(value).map_err(|e| e.to_string())?
            }
            "model" => self.train.model = ModelKind::parse(value).map_err(|e| e.to_string())?,
            "hidden" => {
                self.train.hidden = value
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<usize>()
                            .map_err(|_| format!("bad hidden layer size '{s}'"))
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()?
            }
            "window_len" => self.train.window_len = num(key, value)?,
            "shuffle" => self.train.shuffle = num(key, value)?,
            "momentum" => self.train.momentum = num(key, value)?,
            "plateau_factor" => self.train.plateau_factor = num(key, value)?,
            "plateau_patience" => self.train.plateau_patience = num(key, value)?,
            "min_lr" => self.train.min_lr = num(key, value)?,
            other => return Err(format!("unknown config key '{other}'")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.bin_minutes <= 0 {
            return Err(Error::Usage("bin_minutes must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_validate() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.train_frac, 0.8);
        assert_eq!(cfg.train.window_len, 12);
    }

    #[test]
    fn file_overrides_defaults() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("epochs = 3\nhidden = 8,4\nmodel = baseline\n# comment\n\nseed = 7\n")
            .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.hidden, vec![8, 4]);
        assert_eq!(cfg.train.model, ModelKind::Baseline);
        assert_eq!(cfg.train.seed, 7);
    }

    #[test]
    fn all_bad_keys_reported_at_once() {
        let mut cfg = RunConfig::default();
        let err = cfg
            .apply_text("bogus = 1\nepochs = notanumber\nanother_bad = x\n")
            .unwrap_err();
        let Error::Config { problems } = err else {
            panic!("expected config error")
        };
        assert_eq!(problems.len(), 3);
        assert!(problems[0].contains("bogus"));
        assert!(problems[1].contains("notanumber"));
        assert!(problems[2].contains("another_bad"));
    }

    #[test]
    fn config_error_exits_as_usage() {
        let err = Error::Config {
            problems: vec!["x".into()],
        };
        assert_eq!(err.exit_code(), 2);
    }
}
