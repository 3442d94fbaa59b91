//! Binary checkpoint format, all integers and floats little-endian.
//!
//! ```text
//! "SGTS"  u32 version
//! u32 len, config text (UTF-8)
//! u32 epoch  f64 best_val_mdice  u32 epochs_since_improvement
//! u8 teacher_active  u64 optimizer step
//! 4 tensor tables: student, teacher, adam_m, adam_v
//!   u32 count, then per tensor:
//!   u32 name len, name bytes, u32 rank, rank × u32 extents, f64 payload
//! ```

use std::fs;
use std::path::Path;

use super::config::RunConfig;
use crate::autograd::Tensor;
use crate::backbone::{ModelParams, PARAM_NAMES};
use crate::error::{Error, Result};
use crate::teacher_student::{OptimizerState, TrainerState};

pub const MAGIC: &[u8; 4] = b"SGTS";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub state: TrainerState,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_table(out: &mut Vec<u8>, tensors: &[Tensor]) -> Result<()> {
    put_u32(out, tensors.len())?;
    for (name, t) in PARAM_NAMES.iter().zip(tensors) {
        put_u32(out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(out, t.shape().len())?;
        for &e in t.shape() {
            put_u32(out, e)?;
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let s = &self.state;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let text = self.config.serialize();
        put_u32(&mut out, text.len())?;
        out.extend_from_slice(text.as_bytes());
        put_u32(&mut out, s.epoch)?;
        out.extend_from_slice(&s.best_val_mdice.to_le_bytes());
        put_u32(&mut out, s.epochs_since_improvement)?;
        out.push(s.teacher_active as u8);
        out.extend_from_slice(&s.optimizer.step.to_le_bytes());
        put_table(&mut out, s.student.tensors())?;
        put_table(&mut out, s.teacher.tensors())?;
        put_table(&mut out, &s.optimizer.m)?;
        put_table(&mut out, &s.optimizer.v)?;
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic, expected SGTS".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("config snapshot is not UTF-8".into()))?;
        let config = RunConfig::parse(text)?;
        let epoch = r.u32()? as usize;
        let best_val_mdice = r.f64()?;
        let epochs_since_improvement = r.u32()? as usize;
        let teacher_active = match r.take(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(Error::Checkpoint(format!("invalid teacher flag {b}"))),
        };
        let step = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let student = ModelParams::from_tensors(r.table()?)?;
        let teacher = ModelParams::from_tensors(r.table()?)?;
        let m = ModelParams::from_tensors(r.table()?)?;
        let v = ModelParams::from_tensors(r.table()?)?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        if student.num_classes() != config.num_classes {
            return Err(Error::Checkpoint(format!(
                "network has {} classes but the config says {}",
                student.num_classes(),
                config.num_classes
            )));
        }
        for (what, p) in [("teacher", &teacher), ("adam_m", &m), ("adam_v", &v)] {
            if p.num_classes() != student.num_classes() {
                return Err(Error::Checkpoint(format!("{what} table disagrees with the student")));
            }
        }
        Ok(Checkpoint {
            config,
            state: TrainerState {
                student,
                teacher,
                optimizer: OptimizerState {
                    m: m.tensors().to_vec(),
                    v: v.tensors().to_vec(),
                    step,
                },
                epoch,
                best_val_mdice,
                epochs_since_improvement,
                teacher_active,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn table(&mut self) -> Result<Vec<Tensor>> {
        let count = self.u32()? as usize;
        if count != PARAM_NAMES.len() {
            return Err(Error::Checkpoint(format!(
                "tensor table has {count} entries, expected {}",
                PARAM_NAMES.len()
            )));
        }
        let mut out = Vec::with_capacity(count);
        for want in PARAM_NAMES {
            let len = self.u32()? as usize;
            let name = self.take(len)?;
            if name != want.as_bytes() {
                return Err(Error::Checkpoint(format!(
                    "expected tensor {want}, found {}",
                    String::from_utf8_lossy(name)
                )));
            }
            let rank = self.u32()? as usize;
            if rank > 4 {
                return Err(Error::Checkpoint(format!("{want}: rank {rank} is too large")));
            }
            let shape = (0..rank).map(|_| self.u32().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let data = (0..numel).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            out.push(Tensor::new(&shape, data)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::teacher_student::TrainConfig;

    fn checkpoint() -> Checkpoint {
        let config = RunConfig {
            epochs: 12,
            ..RunConfig::default()
        };
        let mut state = TrainerState::new(&config.train_config()).unwrap();
        state.epoch = 5;
        state.best_val_mdice = 0.123456789;
        state.epochs_since_improvement = 2;
        state.teacher_active = true;
        state.optimizer.step = 77;
        state.optimizer.m[3].data_mut()[0] = -1e-300;
        state.optimizer.v[9].data_mut()[1] = 3.5;
        state.teacher.tensors_mut()[0].data_mut()[4] = f64::MIN_POSITIVE;
        Checkpoint { config, state }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ck = checkpoint();
        let bytes = ck.encode().unwrap();
        assert_eq!(&bytes[..4], b"SGTS");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode().unwrap(), bytes);
    }

    #[test]
    fn fresh_state_round_trips_negative_infinity() {
        let config = RunConfig::default();
        let state = TrainerState::new(&TrainConfig::default()).unwrap();
        let ck = Checkpoint { config, state };
        let back = Checkpoint::decode(&ck.encode().unwrap()).unwrap();
        assert_eq!(back.state.best_val_mdice, f64::NEG_INFINITY);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = checkpoint().encode().unwrap();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bad_magic), Err(Error::Checkpoint(_))));
        assert!(matches!(Checkpoint::decode(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Checkpoint::decode(&extra), Err(Error::Checkpoint(_))));
        let mut bad_version = bytes;
        bad_version[4] = 9;
        assert!(matches!(Checkpoint::decode(&bad_version), Err(Error::Checkpoint(_))));
    }
}
