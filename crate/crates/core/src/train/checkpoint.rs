//! Versioned binary checkpoint.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "MFCK" | version u32 = 1
//! k, n, H, S, T, head width            6 × u32
//! lr_base, beta1, beta2, eps, wd       5 × f64
//! warmup, max_epochs, patience, batch  4 × u32
//! seed u64 | class weights 2 × f64 | schedule unit u8 (0 epoch, 1 step)
//! best_epoch u32 | loss log: u32 count, count × f64
//! tensor count u32, then per tensor: rank u32, rank × u32 dims, f64 data
//! ```
//!
//! Tensors follow [`MoeFusionModel::params`] order.

use std::fs;
use std::path::Path;

use super::{ScheduleUnit, TrainConfig};
use crate::classifier::HeadParams;
use crate::error::{Error, Result};
use crate::fusion::{Expert, GatingNetwork, MoeConfig, FUSED_LAYERS};
use crate::model::MoeFusionModel;
use crate::numkit::Tensor;

pub const MAGIC: &[u8; 4] = b"MFCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MoeFusionModel,
    pub train_config: TrainConfig,
    /// Epoch-mean training loss of every epoch that ran.
    pub loss_log: Vec<f64>,
    /// 0-based epoch whose parameters this checkpoint holds.
    pub best_epoch: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        let c = self.model.config();
        for v in [
            c.top_k,
            c.experts_per_layer,
            c.hidden_dim,
            c.feature_dim,
            c.frames,
            self.model.head_width(),
        ] {
            w.u32(v as u32);
        }
        let t = &self.train_config;
        for v in [t.lr_base, t.beta1, t.beta2, t.eps, t.weight_decay] {
            w.f64(v);
        }
        for v in [t.warmup_epochs, t.max_epochs, t.patience, t.batch_size] {
            w.u32(v as u32);
        }
        w.0.extend_from_slice(&t.seed.to_le_bytes());
        w.f64(t.class_weights[0]);
        w.f64(t.class_weights[1]);
        w.0.push(match t.schedule_unit {
            ScheduleUnit::Epoch => 0,
            ScheduleUnit::Step => 1,
        });
        w.u32(self.best_epoch as u32);
        w.u32(self.loss_log.len() as u32);
        self.loss_log.iter().for_each(|&v| w.f64(v));
        let params = self.model.params();
        w.u32(params.len() as u32);
        for p in params {
            w.u32(p.rank() as u32);
            p.shape().iter().for_each(|&d| w.u32(d as u32));
            p.data().iter().for_each(|&v| w.f64(v));
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            path,
        };
        if r.take(4)? != MAGIC {
            return Err(Error::format(path, "bad magic, not a checkpoint"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(
                path,
                format!("unsupported checkpoint version {version}"),
            ));
        }
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let [top_k, experts_per_layer, hidden_dim, feature_dim, frames, head_width] = dims;
        let config = MoeConfig {
            top_k,
            experts_per_layer,
            hidden_dim,
            feature_dim,
            frames,
        };
        let lr_base = r.f64()?;
        let beta1 = r.f64()?;
        let beta2 = r.f64()?;
        let eps = r.f64()?;
        let weight_decay = r.f64()?;
        let warmup_epochs = r.u32()? as usize;
        let max_epochs = r.u32()? as usize;
        let patience = r.u32()? as usize;
        let batch_size = r.u32()? as usize;
        let seed = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let class_weights = [r.f64()?, r.f64()?];
        let schedule_unit = match r.take(1)?[0] {
            0 => ScheduleUnit::Epoch,
            1 => ScheduleUnit::Step,
            other => return Err(Error::format(path, format!("bad schedule unit {other}"))),
        };
        let train_config = TrainConfig {
            lr_base,
            beta1,
            beta2,
            eps,
            weight_decay,
            warmup_epochs,
            max_epochs,
            patience,
            batch_size,
            seed,
            class_weights,
            schedule_unit,
        };
        let best_epoch = r.u32()? as usize;
        let n_loss = r.u32()? as usize;
        let loss_log = (0..n_loss).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;

        let count = r.u32()? as usize;
        let expected = 1 + FUSED_LAYERS * experts_per_layer * 4 + 4;
        if count != expected {
            return Err(Error::format(
                path,
                format!(
                    "expected {expected} tensors for {}, found {count}",
                    config.label()
                ),
            ));
        }
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push(Tensor::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::format(
                path,
                format!("{} trailing bytes after checkpoint", bytes.len() - r.pos),
            ));
        }

        let mut it = tensors.into_iter();
        let gating = GatingNetwork::new(it.next().unwrap())?;
        let mut experts = Vec::with_capacity(FUSED_LAYERS);
        for _ in 0..FUSED_LAYERS {
            let mut group = Vec::with_capacity(experts_per_layer);
            for _ in 0..experts_per_layer {
                let mut next = || it.next().unwrap();
                group.push(Expert::new(next(), next(), next(), next())?);
            }
            experts.push(group);
        }
        let mut next = || it.next().unwrap();
        let head = HeadParams::new(next(), next(), next(), next())?;
        if head.width() != head_width {
            return Err(Error::format(
                path,
                format!(
                    "header head width {head_width}, tensors say {}",
                    head.width()
                ),
            ));
        }
        let model = MoeFusionModel::from_parts(config, gating, experts, head)?;
        Ok(Self {
            model,
            train_config,
            loss_log,
            best_epoch,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                format!("truncated checkpoint at byte {}", self.pos),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkpoint() -> Checkpoint {
        let config = MoeConfig::new(2, 1, 3).with_geometry(2, 2);
        Checkpoint {
            model: MoeFusionModel::init(config, 4, 3).unwrap(),
            train_config: TrainConfig::default(),
            loss_log: vec![0.7, 0.5, 0.55],
            best_epoch: 1,
        }
    }

    #[test]
    fn roundtrip() {
        let ck = checkpoint();
        let back = Checkpoint::from_bytes(&ck.to_bytes(), Path::new("mem")).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn truncation_and_trailing_bytes_fail() {
        let bytes = checkpoint().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1], Path::new("m")).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra, Path::new("m")).is_err());
    }
}
