//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"HPSR"  u32 version
//! key=value header lines, then an empty line
//! repeated: u32 name length, name bytes, u32 rank, rank × u64 dims,
//!           f32 values (row-major)
//! ```
//!
//! Records come in order: parameters, batch-norm buffers, then the Adam
//! moments as `adam.m.<name>` and `adam.v.<name>`. The header holds the
//! counts of each.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::config::{parse_lines, parse_value, KvSection};
use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::model::{HeadPosr, ModelConfig};
use crate::nn::{BufferStore, ParamStore};
use crate::tensor::Tensor;
use crate::train::{Adam, Metrics, TrainConfig};

pub const MAGIC: &[u8; 4] = b"HPSR";
pub const VERSION: u32 = 1;

/// Which weights a checkpoint holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    /// Lowest overall validation MAE; ties keep the earlier epoch.
    BestVal,
    Final,
    Initial,
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Selection::BestVal => "best_val",
            Selection::Final => "final",
            Selection::Initial => "initial",
        })
    }
}

impl FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "best_val" => Ok(Selection::BestVal),
            "final" => Ok(Selection::Final),
            "initial" => Ok(Selection::Initial),
            other => Err(Error::Format(format!("unknown selection {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub selection: Selection,
    /// Epoch the weights come from, if any training happened.
    pub epoch: Option<usize>,
    pub metrics: Option<Metrics>,
    pub params: ParamStore<f32>,
    pub buffers: BufferStore<f32>,
    pub optimizer: Option<Adam<f32>>,
}

impl Checkpoint {
    /// Captures a model's current weights.
    pub fn from_model(
        model: &HeadPosr<f32>,
        train: &TrainConfig,
        augment: &AugmentConfig,
        selection: Selection,
    ) -> Self {
        Checkpoint {
            model: model.config().clone(),
            train: train.clone(),
            augment: *augment,
            selection,
            epoch: None,
            metrics: None,
            params: model.params().clone(),
            buffers: model.buffers().clone(),
            optimizer: None,
        }
    }

    pub fn to_model(&self) -> Result<HeadPosr<f32>> {
        HeadPosr::from_parts(self.model.clone(), self.params.clone(), self.buffers.clone())
    }

    fn header(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        for (k, v) in self.model.entries() {
            put(&format!("model.{k}"), v);
        }
        for (k, v) in self.train.entries() {
            put(&format!("train.{k}"), v);
        }
        for (k, v) in self.augment.entries() {
            put(&format!("augment.{k}"), v);
        }
        put("selection", self.selection.to_string());
        if let Some(e) = self.epoch {
            put("epoch", e.to_string());
        }
        if let Some(m) = self.metrics {
            put("metrics.yaw", m.mae_yaw.to_string());
            put("metrics.pitch", m.mae_pitch.to_string());
            put("metrics.roll", m.mae_roll.to_string());
            put("metrics.mae", m.mae_overall.to_string());
            put("metrics.n", m.n_samples.to_string());
        }
        if let Some(opt) = &self.optimizer {
            put("adam.t", opt.t.to_string());
            put("adam.moments", opt.m.len().to_string());
        }
        put("params", self.params.len().to_string());
        put("buffers", self.buffers.len().to_string());
        s
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(self.header().as_bytes());
        out.push(b'\n');
        for (name, t) in self.params.iter().chain(self.buffers.iter()) {
            write_record(&mut out, name, t.shape(), t.data());
        }
        if let Some(opt) = &self.optimizer {
            for (name, m) in &opt.m {
                let shape = self
                    .params
                    .get(name)
                    .map(|t| t.shape().to_vec())
                    .unwrap_or(vec![m.len()]);
                write_record(&mut out, &format!("adam.m.{name}"), &shape, m);
                write_record(&mut out, &format!("adam.v.{name}"), &shape, &opt.v[name]);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("missing HPSR magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let end = bytes[r.pos..]
            .windows(2)
            .position(|w| w == b"\n\n")
            .ok_or_else(|| Error::Format("unterminated header".into()))?;
        let text = std::str::from_utf8(&bytes[r.pos..r.pos + end + 1])
            .map_err(|_| Error::Format("header is not UTF-8".into()))?;
        r.pos += end + 2;

        let mut model = ModelConfig::default();
        let mut train = TrainConfig::default();
        let mut augment = AugmentConfig::default();
        let mut selection = None;
        let mut epoch = None;
        let mut metric_fields: IndexMap<String, String> = IndexMap::new();
        let mut adam_t = None;
        let mut moments = 0usize;
        let (mut n_params, mut n_buffers) = (None, None);
        for l in parse_lines(text, Path::new("<checkpoint header>"))? {
            let (k, v) = (l.key.as_str(), l.value.as_str());
            let known = if let Some(k) = k.strip_prefix("model.") {
                model.set(k, v)?
            } else if let Some(k) = k.strip_prefix("train.") {
                train.set(k, v)?
            } else if let Some(k) = k.strip_prefix("augment.") {
                augment.set(k, v)?
            } else if let Some(k) = k.strip_prefix("metrics.") {
                metric_fields.insert(k.to_string(), v.to_string());
                true
            } else {
                match k {
                    "selection" => selection = Some(v.parse()?),
                    "epoch" => epoch = Some(parse_value(k, v)?),
                    "adam.t" => adam_t = Some(parse_value(k, v)?),
                    "adam.moments" => moments = parse_value(k, v)?,
                    "params" => n_params = Some(parse_value(k, v)?),
                    "buffers" => n_buffers = Some(parse_value(k, v)?),
                    _ => return Err(Error::Format(format!("unknown header key {k:?}"))),
                }
                true
            };
            if !known {
                return Err(Error::Format(format!("unknown header key {k:?}")));
            }
        }
        let metrics = if metric_fields.is_empty() {
            None
        } else {
            let get = |k: &str| -> Result<&str> {
                metric_fields
                    .get(k)
                    .map(String::as_str)
                    .ok_or_else(|| Error::Format(format!("header lacks metrics.{k}")))
            };
            Some(Metrics {
                mae_yaw: parse_value("metrics.yaw", get("yaw")?)?,
                mae_pitch: parse_value("metrics.pitch", get("pitch")?)?,
                mae_roll: parse_value("metrics.roll", get("roll")?)?,
                mae_overall: parse_value("metrics.mae", get("mae")?)?,
                n_samples: parse_value("metrics.n", get("n")?)?,
            })
        };
        let missing = |k: &str| Error::Format(format!("header lacks {k}"));
        let selection = selection.ok_or_else(|| missing("selection"))?;
        let n_params = n_params.ok_or_else(|| missing("params"))?;
        let n_buffers = n_buffers.ok_or_else(|| missing("buffers"))?;

        let mut params = ParamStore::new();
        for _ in 0..n_params {
            let (name, t) = r.record()?;
            params.insert(name, t.into_param())?;
        }
        let mut buffers = BufferStore::new();
        for _ in 0..n_buffers {
            let (name, t) = r.record()?;
            buffers.insert(name, t)?;
        }
        let optimizer = match adam_t {
            None => None,
            Some(t) => {
                let mut opt = Adam::new(train.adam);
                opt.t = t;
                for _ in 0..moments {
                    let (mname, m) = r.record()?;
                    let (vname, v) = r.record()?;
                    let name = mname
                        .strip_prefix("adam.m.")
                        .filter(|n| vname.strip_prefix("adam.v.") == Some(*n) && params.contains(n))
                        .ok_or_else(|| Error::Format(format!("unexpected optimizer records {mname}, {vname}")))?;
                    opt.m.insert(name.to_string(), m.to_vec());
                    opt.v.insert(name.to_string(), v.to_vec());
                }
                Some(opt)
            }
        };
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let ckpt = Checkpoint {
            model,
            train,
            augment,
            selection,
            epoch,
            metrics,
            params,
            buffers,
            optimizer,
        };
        ckpt.to_model()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

fn write_record(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated file: need {n} bytes at offset {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn record(&mut self) -> Result<(String, Tensor<f32>)> {
        let len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Format("tensor too large".into()))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::from_vec(&shape, data).map_err(|e| Error::Format(format!("tensor {name}: {e}")))?;
        Ok((name, t))
    }
}
