//! Checkpoint serialization.
//!
//! Binary layout, little-endian throughout:
//!
//! ```text
//! magic "MALT" | u32 version | u32 meta_len | meta (TOML: config + variant)
//! | u64 epoch | u64 adam_t | u64 rng_state | u32 n_entries
//! | entries: u32 name_len | name | u32 ndim | ndim x u64 dims
//!            | numel f64 value | numel f64 m | numel f64 v
//! ```
//!
//! Entries are written in name order (the store iterates sorted), the meta
//! block is serialized deterministically, and floats round-trip bit-exactly,
//! so save -> load -> save reproduces the file byte for byte. Gradients are
//! transient and not stored; they are zero after load.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MaltError, Result};
use crate::model::{Malt, MaltConfig, ModelVariant};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::TrainerState;

const MAGIC: &[u8; 4] = b"MALT";
const VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    cursor: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.cursor + n > self.bytes.len() {
            return Err(MaltError::Format(format!(
                "checkpoint truncated at byte {}",
                self.cursor
            )));
        }
        let s = &self.bytes[self.cursor..self.cursor + n];
        self.cursor += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(self.take(8)?.try_into().unwrap()));
        }
        Tensor::new(shape.to_vec(), data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointMeta {
    config: MaltConfig,
    variant: ModelVariant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: MaltConfig,
    pub variant: ModelVariant,
    pub epoch: u64,
    pub adam_t: u64,
    pub rng_state: u64,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn capture(model: &Malt, store: &ParamStore, state: &TrainerState) -> Self {
        Checkpoint {
            config: model.config.clone(),
            variant: model.variant,
            epoch: state.epoch,
            adam_t: state.adam_t,
            rng_state: state.rng.state(),
            params: store.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = toml::to_string(&CheckpointMeta {
            config: self.config.clone(),
            variant: self.variant,
        })
        .map_err(|e| MaltError::Format(format!("checkpoint meta serialization: {e}")))?;

        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        buf.extend_from_slice(meta.as_bytes());
        buf.extend_from_slice(&self.epoch.to_le_bytes());
        buf.extend_from_slice(&self.adam_t.to_le_bytes());
        buf.extend_from_slice(&self.rng_state.to_le_bytes());
        buf.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, entry) in self.params.iter() {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            let shape = entry.value.shape();
            buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for tensor in [&entry.value, &entry.m, &entry.v] {
                for v in tensor.data() {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = Reader { bytes: &bytes, cursor: 0 };

        if r.take(4)? != MAGIC {
            return Err(MaltError::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(MaltError::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let meta_len = r.u32()? as usize;
        let meta: CheckpointMeta = toml::from_str(
            std::str::from_utf8(r.take(meta_len)?)
                .map_err(|e| MaltError::Format(format!("checkpoint meta not UTF-8: {e}")))?,
        )
        .map_err(|e| MaltError::Format(format!("checkpoint meta parse: {e}")))?;
        let epoch = r.u64()?;
        let adam_t = r.u64()?;
        let rng_state = r.u64()?;
        let n_entries = r.u32()? as usize;

        let mut params = ParamStore::new();
        for _ in 0..n_entries {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|e| MaltError::Format(format!("parameter name not UTF-8: {e}")))?
                .to_string();
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let value = r.tensor(&shape)?;
            let m = r.tensor(&shape)?;
            let v = r.tensor(&shape)?;
            params.insert(&name, value)?;
            let entry = params.get_mut(&name)?;
            entry.m = m;
            entry.v = v;
        }
        if r.cursor != bytes.len() {
            return Err(MaltError::Format(format!(
                "checkpoint has {} trailing bytes",
                bytes.len() - r.cursor
            )));
        }
        Ok(Checkpoint {
            config: meta.config,
            variant: meta.variant,
            epoch,
            adam_t,
            rng_state,
            params,
        })
    }

    /// Rebuild the model, store, and trainer state. Fails if the stored
    /// parameters do not match the layout the config implies.
    pub fn restore(self) -> Result<(Malt, ParamStore, TrainerState)> {
        let mut layout = ParamStore::new();
        let mut throwaway_rng = Rng::new(0);
        let model = Malt::init(self.config.clone(), self.variant, &mut layout, &mut throwaway_rng)?;
        if layout.len() != self.params.len() {
            return Err(MaltError::Format(format!(
                "checkpoint holds {} parameters but the config implies {}",
                self.params.len(),
                layout.len()
            )));
        }
        for (name, expected) in layout.iter() {
            let loaded = self.params.get(name)?;
            if loaded.value.shape() != expected.value.shape() {
                return Err(MaltError::Format(format!(
                    "checkpoint parameter {name:?} has shape {:?}, config implies {:?}",
                    loaded.value.shape(),
                    expected.value.shape()
                )));
            }
        }
        let state = TrainerState {
            epoch: self.epoch,
            adam_t: self.adam_t,
            rng: Rng::from_state(self.rng_state),
        };
        Ok((model, self.params, state))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MaltConfig, ModelVariant};

    fn trained_ish_checkpoint() -> Checkpoint {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(12);
        let model = Malt::init(
            MaltConfig::tiny(),
            ModelVariant::default(),
            &mut store,
            &mut rng,
        )
        .unwrap();
        // non-trivial moments so the round trip covers them
        for (_, entry) in store.iter_mut() {
            for (i, v) in entry.m.data_mut().iter_mut().enumerate() {
                *v = i as f64 * 0.01;
            }
        }
        let mut state = TrainerState::fresh(7);
        state.epoch = 3;
        state.adam_t = 120;
        state.rng.next_u64();
        Checkpoint::capture(&model, &store, &state)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let ckpt = trained_ish_checkpoint();
        ckpt.save(&p1).unwrap();
        let loaded = Checkpoint::load(&p1).unwrap();
        assert_eq!(loaded, ckpt);
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn restore_rebuilds_state() {
        let ckpt = trained_ish_checkpoint();
        let rng_state = ckpt.rng_state;
        let (model, store, state) = ckpt.restore().unwrap();
        assert_eq!(model.config, MaltConfig::tiny());
        assert_eq!(state.epoch, 3);
        assert_eq!(state.adam_t, 120);
        assert_eq!(state.rng.state(), rng_state);
        assert!(store.len() > 0);
    }

    #[test]
    fn restore_rejects_mismatched_layout() {
        let mut ckpt = trained_ish_checkpoint();
        ckpt.config.d_model = 16; // implies different parameter shapes
        assert!(matches!(ckpt.restore(), Err(MaltError::Format(_))));
    }

    #[test]
    fn load_rejects_corrupt_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ckpt");
        std::fs::write(&p, b"nope====").unwrap();
        assert!(matches!(Checkpoint::load(&p), Err(MaltError::Format(_))));
    }
}
