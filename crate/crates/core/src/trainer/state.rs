//! Resumable optimizer state.
//!
//! ```text
//! "SWTS"               magic
//! u32                  format version
//! u64                  step
//! u64                  seed
//! f64                  best validation PSNR
//! f64, u64             loss sum and step count since the last log line
//! u32                  number of tensors
//! per tensor:
//!   u16 + bytes        name
//!   u64                element count
//!   f32 × count        first moment
//!   f32 × count        second moment
//! u32                  CRC-32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::adam::AdamState;

pub const STATE_MAGIC: &[u8; 4] = b"SWTS";
pub const STATE_VERSION: u32 = 1;

/// Everything besides the parameters needed to continue a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub adam: AdamState<f32>,
    pub seed: u64,
    pub best_psnr: f64,
    pub interval_loss: f64,
    pub interval_steps: u64,
}

impl TrainState {
    pub fn step(&self) -> u64 {
        self.adam.step
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(STATE_MAGIC);
        out.extend_from_slice(&STATE_VERSION.to_le_bytes());
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.best_psnr.to_le_bytes());
        out.extend_from_slice(&self.interval_loss.to_le_bytes());
        out.extend_from_slice(&self.interval_steps.to_le_bytes());
        out.extend_from_slice(&(self.adam.names.len() as u32).to_le_bytes());
        for ((name, m), v) in self.adam.names.iter().zip(&self.adam.m).zip(&self.adam.v) {
            let len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.len() as u64).to_le_bytes());
            for x in m.iter().chain(v) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != STATE_MAGIC {
            return Err(Error::Checkpoint("not a training state file".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut pos = 4;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = body
                .get(pos..pos + n)
                .ok_or_else(|| Error::Checkpoint(format!("state truncated at byte {pos}")))?;
            pos += n;
            Ok(s)
        };
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != STATE_VERSION {
            return Err(Error::Checkpoint(format!("unsupported state version {version}")));
        }
        let step = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let best_psnr = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let interval_loss = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let interval_steps = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut adam = AdamState {
            step,
            names: Vec::with_capacity(count),
            m: Vec::with_capacity(count),
            v: Vec::with_capacity(count),
        };
        for _ in 0..count {
            let len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(len)?)
                .map_err(|_| Error::Checkpoint("state tensor name is not UTF-8".into()))?
                .to_string();
            let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
            let mut read = |n: usize| -> Result<Vec<f32>> {
                Ok(take(
                    n.checked_mul(4)
                        .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
                )?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect())
            };
            let m = read(n)?;
            let v = read(n)?;
            adam.names.push(name);
            adam.m.push(m);
            adam.v.push(v);
        }
        if pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes in state file".into()));
        }
        Ok(Self {
            adam,
            seed,
            best_psnr,
            interval_loss,
            interval_steps,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TrainState {
        TrainState {
            adam: AdamState {
                step: 7,
                names: vec!["a".into(), "bb".into()],
                m: vec![vec![0.5, -1.0], vec![3.0]],
                v: vec![vec![0.25, 1.0], vec![9.0]],
            },
            seed: 42,
            best_psnr: 31.5,
            interval_loss: 0.75,
            interval_steps: 3,
        }
    }

    #[test]
    fn roundtrip() {
        let s = sample();
        assert_eq!(TrainState::from_bytes(&s.to_bytes().unwrap()).unwrap(), s);
        let mut inf = sample();
        inf.best_psnr = f64::NEG_INFINITY;
        assert_eq!(TrainState::from_bytes(&inf.to_bytes().unwrap()).unwrap(), inf);
    }

    #[test]
    fn corruption_detected() {
        let mut b = sample().to_bytes().unwrap();
        b[20] ^= 1;
        assert!(matches!(TrainState::from_bytes(&b), Err(Error::Checksum { .. })));
        assert!(TrainState::from_bytes(b"SWTS").is_err());
    }
}
