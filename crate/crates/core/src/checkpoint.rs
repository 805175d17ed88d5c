//! Self-describing binary checkpoint format.
//!
//! Layout: magic `TFCK`, u32 version, u64 payload length, payload, trailing
//! CRC32 of the payload. The payload holds the training config as key-value
//! text, the normalization statistics, the epoch index and best validation
//! loss, and every named parameter matrix with its shape. All integers and
//! the 64-bit floats are little-endian.

use crate::data::{FitScope, NormScheme, NormStats};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{Model, ModelKind};
use crate::optim::OptimizerKind;
use crate::train::TrainConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::Path;

const MAGIC: &[u8; 4] = b"TFCK";
const VERSION: u32 = 1;

/// Everything needed to rebuild a trained model: parameter values, the
/// normalization statistics they were trained under, the config, the epoch
/// the snapshot was taken at, and its validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<(String, Matrix)>,
    pub norm: NormStats,
    pub config: TrainConfig,
    pub epoch: usize,
    pub best_val_loss: f64,
}

impl Checkpoint {
    pub fn from_model(
        model: &Model,
        norm: NormStats,
        config: &TrainConfig,
        epoch: usize,
        best_val_loss: f64,
    ) -> Self {
        Checkpoint {
            params: model
                .params()
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
            norm,
            config: config.clone(),
            epoch,
            best_val_loss,
        }
    }

    /// Copies the stored values into an existing model, matching by name and
    /// shape in order.
    pub fn restore_into(&self, model: &mut Model) -> Result<()> {
        let mut params = model.params_mut();
        if params.len() != self.params.len() {
            return Err(Error::State(format!(
                "checkpoint has {} parameters but the model has {}",
                self.params.len(),
                params.len()
            )));
        }
        for (p, (name, value)) in params.iter_mut().zip(&self.params) {
            if &p.name != name {
                return Err(Error::State(format!(
                    "checkpoint parameter '{name}' does not match model parameter '{}'",
                    p.name
                )));
            }
            if p.value.shape() != value.shape() {
                return Err(Error::Dimension {
                    op: "restore_checkpoint",
                    lhs: p.value.shape(),
                    rhs: value.shape(),
                });
            }
            p.value = value.clone();
            p.zero_grad();
        }
        Ok(())
    }

    /// Builds a fresh model from the stored config and loads the weights.
    pub fn build_model(&self) -> Result<Model> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut model = self.config.build_model(&mut rng)?;
        self.restore_into(&mut model)?;
        Ok(model)
    }
}

fn config_to_kv(c: &TrainConfig) -> String {
    let hidden = c
        .hidden
        .iter()
        .map(|h| h.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let mut out = String::new();
    writeln!(out, "epochs = {}", c.epochs).unwrap();
    writeln!(out, "batch_size = {}", c.batch_size).unwrap();
    writeln!(out, "learning_rate = {}", c.learning_rate).unwrap();
    writeln!(out, "dropout_p = {}", c.dropout_p).unwrap();
    writeln!(out, "clip_threshold = {}", c.clip_threshold).unwrap();
    writeln!(out, "clip_enabled = {}", c.clip_enabled).unwrap();
    writeln!(out, "patience = {}", c.patience).unwrap();
    writeln!(out, "seed = {}", c.seed).unwrap();
    writeln!(out, "optimizer = {}", c.optimizer.as_str()).unwrap();
    writeln!(out, "model = {}", c.model.as_str()).unwrap();
    writeln!(out, "hidden = {hidden}").unwrap();
    writeln!(out, "window_len = {}", c.window_len).unwrap();
    writeln!(out, "shuffle = {}", c.shuffle).unwrap();
    writeln!(out, "momentum = {}", c.momentum).unwrap();
    writeln!(out, "plateau_factor = {}", c.plateau_factor).unwrap();
    writeln!(out, "plateau_patience = {}", c.plateau_patience).unwrap();
    writeln!(out, "min_lr = {}", c.min_lr).unwrap();
    out
}

fn config_from_kv(text: &str) -> Result<TrainConfig> {
    let mut c = TrainConfig::default();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Data(format!("bad config line '{line}'")))?;
        let (k, v) = (k.trim(), v.trim());
        let bad = |what: &str| Error::Data(format!("bad {what} value '{v}'"));
        match k {
            "epochs" => c.epochs = v.parse().map_err(|_| bad(k))?,
            "batch_size" => c.batch_size = v.parse().map_err(|_| bad(k))?,
            "learning_rate" => c.learning_rate = v.parse().map_err(|_| bad(k))?,
            "dropout_p" => c.dropout_p = v.parse().map_err(|_| bad(k))?,
            "clip_threshold" => c.clip_threshold = v.parse().map_err(|_| bad(k))?,
            "clip_enabled" => c.clip_enabled = v.parse().map_err(|_| bad(k))?,
            "patience" => c.patience = v.parse().map_err(|_| bad(k))?,
            "seed" => c.seed = v.parse().map_err(|_| bad(k))?,
            "optimizer" => c.optimizer = OptimizerKind::parse(v)?,
            "model" => c.model = ModelKind::parse(v)?,
            "hidden" => {
                c.hidden = v
                    .split(',')
                    .map(|s| s.trim().parse::<usize>().map_err(|_| bad("hidden")))
                    .collect::<Result<Vec<_>>>()?
            }
            "window_len" => c.window_len = v.parse().map_err(|_| bad(k))?,
            "shuffle" => c.shuffle = v.parse().map_err(|_| bad(k))?,
            "momentum" => c.momentum = v.parse().map_err(|_| bad(k))?,
            "plateau_factor" => c.plateau_factor = v.parse().map_err(|_| bad(k))?,
            "plateau_patience" => c.plateau_patience = v.parse().map_err(|_| bad(k))?,
            "min_lr" => c.min_lr = v.parse().map_err(|_| bad(k))?,
            other => return Err(Error::Data(format!("unknown config key '{other}'"))),
        }
    }
    Ok(c)
}

struct PayloadWriter {
    buf: Vec<u8>,
}

impl PayloadWriter {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.buf.extend_from_slice(b);
    }
}

struct PayloadReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> PayloadReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CheckpointTruncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}

fn encode_payload(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = PayloadWriter { buf: Vec::new() };
    w.bytes(config_to_kv(&ckpt.config).as_bytes());
    w.buf.push(match ckpt.norm.scheme {
        NormScheme::Zscore => 0,
        NormScheme::Minmax => 1,
    });
    w.buf.push(match ckpt.norm.fit_scope {
        FitScope::TrainOnly => 0,
        FitScope::WholeDataset => 1,
    });
    w.f64(ckpt.norm.center);
    w.f64(ckpt.norm.scale);
    w.u32(ckpt.epoch as u32);
    w.f64(ckpt.best_val_loss);
    w.u32(ckpt.params.len() as u32);
    for (name, value) in &ckpt.params {
        w.bytes(name.as_bytes());
        w.u32(value.rows() as u32);
        w.u32(value.cols() as u32);
        for &v in value.data() {
            w.f64(v);
        }
    }
    w.buf
}

fn decode_payload(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = PayloadReader { buf, pos: 0 };
    let config_text = String::from_utf8(r.bytes()?.to_vec())
        .map_err(|_| Error::Data("checkpoint config is not utf-8".into()))?;
    let config = config_from_kv(&config_text)?;
    let scheme = match r.take(1)?[0] {
        0 => NormScheme::Zscore,
        1 => NormScheme::Minmax,
        other => return Err(Error::Data(format!("unknown norm scheme tag {other}"))),
    };
    let fit_scope = match r.take(1)?[0] {
        0 => FitScope::TrainOnly,
        1 => FitScope::WholeDataset,
        other => return Err(Error::Data(format!("unknown fit scope tag {other}"))),
    };
    let center = r.f64()?;
    let scale = r.f64()?;
    let epoch = r.u32()? as usize;
    let best_val_loss = r.f64()?;
    let n_params = r.u32()? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name = String::from_utf8(r.bytes()?.to_vec())
            .map_err(|_| Error::Data("parameter name is not utf-8".into()))?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f64()?);
        }
        params.push((name, Matrix::from_vec(rows, cols, data)?));
    }
    if r.pos != buf.len() {
        return Err(Error::Data("trailing bytes in checkpoint payload".into()));
    }
    Ok(Checkpoint {
        params,
        norm: NormStats {
            center,
            scale,
            scheme,
            fit_scope,
        },
        config,
        epoch,
        best_val_loss,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let payload = encode_payload(ckpt);
    let crc = crc32fast::hash(&payload);
    let mut out = Vec::with_capacity(payload.len() + 20);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 4 || &bytes[0..4] != MAGIC {
        return Err(Error::CheckpointMagic);
    }
    if bytes.len() < 16 {
        return Err(Error::CheckpointTruncated);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: VERSION,
        });
    }
    let payload_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + payload_len + 4 {
        return Err(Error::CheckpointTruncated);
    }
    let payload = &bytes[16..16 + payload_len];
    let stored_crc = u32::from_le_bytes(
        bytes[16 + payload_len..16 + payload_len + 4]
            .try_into()
            .unwrap(),
    );
    if crc32fast::hash(payload) != stored_crc {
        return Err(Error::CheckpointChecksum);
    }
    decode_payload(payload)
}
