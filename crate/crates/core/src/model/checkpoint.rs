//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes   "MXLSTMCK"
//! version    u32 LE
//! header_len u32 LE
//! header     UTF-8, one `key=value` per line
//! params     param_count × f64 LE
//! optimizer  (only if has_optimizer=1) step u64 LE, then first and second
//!            moments, param_count × f64 LE each
//! ```
//!
//! Floats in the header use the shortest representation that parses back to
//! the same value, so a save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{Hyperparams, MxLstm, Normalization, Variant};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, OptimizerState};
use crate::pooling::GridSpec;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MXLSTMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: MxLstm,
    pub epochs_done: usize,
    pub loss_curve: Vec<f64>,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn from_trainer(t: &super::Trainer) -> Checkpoint {
        Checkpoint {
            model: t.model.clone(),
            epochs_done: t.epochs_done,
            loss_curve: t.loss_curve.clone(),
            optimizer: Some(t.optimizer.clone()),
        }
    }

    pub fn into_trainer(self) -> super::Trainer {
        let optimizer = self
            .optimizer
            .unwrap_or_else(|| OptimizerState::new(AdamConfig::default(), self.model.param_count()));
        super::Trainer {
            model: self.model,
            optimizer,
            epochs_done: self.epochs_done,
            loss_curve: self.loss_curve,
        }
    }
}

fn header(ck: &Checkpoint) -> String {
    let m = &ck.model;
    let h = &m.hyper;
    let mut kv: Vec<(&str, String)> = vec![
        ("variant", m.variant.name().to_string()),
        ("hidden", h.hidden.to_string()),
        ("grid_cells", h.grid.cells_per_side.to_string()),
        ("cell_size", h.grid.cell_size.to_string()),
        ("aperture", h.aperture.to_string()),
        ("vislet_radius", h.vislet_radius.to_string()),
        ("t_obs", h.t_obs.to_string()),
        ("t_pred", h.t_pred.to_string()),
        ("seed", m.seed.to_string()),
        ("norm_position", m.normalization.position.to_string()),
        ("norm_anchor", m.normalization.anchor.to_string()),
        ("epochs_done", ck.epochs_done.to_string()),
        (
            "loss_curve",
            ck.loss_curve.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
        ),
        ("param_count", m.params.len().to_string()),
        ("has_optimizer", (ck.optimizer.is_some() as u8).to_string()),
    ];
    if let Some(o) = &ck.optimizer {
        let c = o.config;
        kv.extend([
            ("adam_lr", c.learning_rate.to_string()),
            ("adam_beta1", c.beta1.to_string()),
            ("adam_beta2", c.beta2.to_string()),
            ("adam_epsilon", c.epsilon.to_string()),
            ("adam_l2", c.l2.to_string()),
            ("adam_clip", c.clip_norm.map_or("none".to_string(), |v| v.to_string())),
        ]);
    }
    kv.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes a checkpoint into a writer.
pub fn write_checkpoint<W: Write>(mut w: W, ck: &Checkpoint) -> Result<()> {
    let head = header(ck);
    let mut buf = Vec::with_capacity(32 + head.len() + ck.model.params.len() * 24);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(head.len() as u32).to_le_bytes());
    buf.extend_from_slice(head.as_bytes());
    put_f64s(&mut buf, &ck.model.params);
    if let Some(o) = &ck.optimizer {
        buf.extend_from_slice(&o.step.to_le_bytes());
        put_f64s(&mut buf, &o.first_moment);
        put_f64s(&mut buf, &o.second_moment);
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated: need {n} bytes at offset {}", self.at))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn field<T: std::str::FromStr>(kv: &BTreeMap<&str, &str>, key: &str) -> Result<T> {
    let raw = kv
        .get(key)
        .ok_or_else(|| Error::Checkpoint(format!("missing header field `{key}`")))?;
    raw.parse()
        .map_err(|_| Error::Checkpoint(format!("bad value `{raw}` for `{key}`")))
}

/// Deserializes a checkpoint.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, at: 0 };
    if c.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let head_len = c.u32()? as usize;
    let head = std::str::from_utf8(c.take(head_len)?).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
    let kv: BTreeMap<&str, &str> = head.lines().filter_map(|l| l.split_once('=')).collect();

    let variant: Variant = field::<String>(&kv, "variant")?.parse()?;
    let hyper = Hyperparams {
        hidden: field(&kv, "hidden")?,
        grid: GridSpec {
            cells_per_side: field(&kv, "grid_cells")?,
            cell_size: field(&kv, "cell_size")?,
        },
        aperture: field(&kv, "aperture")?,
        vislet_radius: field(&kv, "vislet_radius")?,
        t_obs: field(&kv, "t_obs")?,
        t_pred: field(&kv, "t_pred")?,
    };
    let mut model = MxLstm::zeros(variant, hyper)?;
    model.seed = field(&kv, "seed")?;
    model.normalization = Normalization {
        position: field(&kv, "norm_position")?,
        anchor: field(&kv, "norm_anchor")?,
    };
    let count: usize = field(&kv, "param_count")?;
    if count != model.params.len() {
        return Err(Error::Checkpoint(format!(
            "parameter count {count} does not match the architecture ({})",
            model.params.len()
        )));
    }
    model.params = c.f64s(count)?;
    let curve: String = field(&kv, "loss_curve")?;
    let loss_curve = curve
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| Error::Checkpoint(format!("bad loss value `{s}`"))))
        .collect::<Result<Vec<_>>>()?;
    let optimizer = if field::<u8>(&kv, "has_optimizer")? == 1 {
        let clip: String = field(&kv, "adam_clip")?;
        let config = AdamConfig {
            learning_rate: field(&kv, "adam_lr")?,
            beta1: field(&kv, "adam_beta1")?,
            beta2: field(&kv, "adam_beta2")?,
            epsilon: field(&kv, "adam_epsilon")?,
            l2: field(&kv, "adam_l2")?,
            clip_norm: if clip == "none" {
                None
            } else {
                Some(clip.parse().map_err(|_| Error::Checkpoint("bad adam_clip".into()))?)
            },
        };
        let step = c.u64()?;
        let first_moment = c.f64s(count)?;
        let second_moment = c.f64s(count)?;
        Some(OptimizerState {
            config,
            first_moment,
            second_moment,
            step,
        })
    } else {
        None
    };
    if c.at != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - c.at)));
    }
    Ok(Checkpoint {
        model,
        epochs_done: field(&kv, "epochs_done")?,
        loss_curve,
        optimizer,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(std::io::BufWriter::new(file), ck)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}
