//! Binary checkpoint format.
//!
//! ```text
//! "SWIR"                      magic
//! u32                         format version
//! u32 × 13                    config block (see CONFIG_FIELDS)
//! u32                         number of parameter tensors
//! per tensor:
//!   u16 + bytes               UTF-8 name
//!   u8                        rank
//!   u64 × rank                dims
//!   f32 × numel               data
//! u32                         CRC-32 of every preceding byte
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::tensor::Tensor;

use super::config::{SwinIRConfig, Task, Upsampler};

pub const MAGIC: &[u8; 4] = b"SWIR";
pub const FORMAT_VERSION: u32 = 1;

/// Order of the config block.
pub const CONFIG_FIELDS: [&str; 13] = [
    "num_blocks",
    "layers_per_block",
    "window",
    "channels",
    "heads",
    "mlp_ratio",
    "task",
    "scale",
    "in_channels",
    "out_channels",
    "upsampler",
    "num_feat",
    "block_residual",
];

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} = {v} does not fit in u32")))
}

fn config_words(cfg: &SwinIRConfig) -> Result<[u32; 13]> {
    Ok([
        u32_of(cfg.num_blocks, "num_blocks")?,
        u32_of(cfg.layers_per_block, "layers_per_block")?,
        u32_of(cfg.window, "window")?,
        u32_of(cfg.channels, "channels")?,
        u32_of(cfg.heads, "heads")?,
        u32_of(cfg.mlp_ratio, "mlp_ratio")?,
        cfg.task.code(),
        u32_of(cfg.scale, "scale")?,
        u32_of(cfg.in_channels, "in_channels")?,
        u32_of(cfg.out_channels, "out_channels")?,
        cfg.upsampler.code(),
        u32_of(cfg.num_feat, "num_feat")?,
        cfg.block_residual as u32,
    ])
}

fn config_from_words(w: &[u32; 13]) -> Result<SwinIRConfig> {
    let cfg = SwinIRConfig {
        num_blocks: w[0] as usize,
        layers_per_block: w[1] as usize,
        window: w[2] as usize,
        channels: w[3] as usize,
        heads: w[4] as usize,
        mlp_ratio: w[5] as usize,
        task: Task::from_code(w[6])?,
        scale: w[7] as usize,
        in_channels: w[8] as usize,
        out_channels: w[9] as usize,
        upsampler: Upsampler::from_code(w[10])?,
        num_feat: w[11] as usize,
        block_residual: match w[12] {
            0 => false,
            1 => true,
            v => return Err(Error::Checkpoint(format!("block_residual flag {v}"))),
        },
    };
    cfg.validate()
        .map_err(|e| Error::Checkpoint(format!("stored config is invalid: {e}")))?;
    Ok(cfg)
}

pub fn to_bytes(cfg: &SwinIRConfig, params: &ModelParams<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(64 + params.num_scalars() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for w in config_words(cfg)? {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.extend_from_slice(&u32_of(params.len(), "parameter count")?.to_le_bytes());
    for (name, t) in params.iter() {
        let len =
            u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("parameter name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.rank()).map_err(|_| Error::Checkpoint(format!("rank of {name}")))?;
        out.push(rank);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(SwinIRConfig, ModelParams<f32>)> {
    if bytes.len() < MAGIC.len() + 8 {
        return Err(Error::Checkpoint("file too short".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let mut words = [0u32; 13];
    for w in words.iter_mut() {
        *w = r.u32()?;
    }
    let cfg = config_from_words(&words)?;
    let count = r.u32()? as usize;
    let mut params = ModelParams::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(usize::try_from(r.u64()?).map_err(|_| Error::Checkpoint(format!("dim of {name}")))?);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(
            numel
                .checked_mul(4)
                .ok_or_else(|| Error::Checkpoint(format!("size of {name}")))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        if !t.all_finite() {
            return Err(Error::Checkpoint(format!("{name} holds non-finite values")));
        }
        params.insert(name, t)?;
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok((cfg, params))
}

pub fn save(path: impl AsRef<Path>, cfg: &SwinIRConfig, params: &ModelParams<f32>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(cfg, params)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<(SwinIRConfig, ModelParams<f32>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::complexity::param_count;
    use crate::model::network::init_params;

    fn small() -> SwinIRConfig {
        let mut c = SwinIRConfig::lightweight_sr(2);
        c.num_blocks = 1;
        c.layers_per_block = 2;
        c.channels = 8;
        c.heads = 2;
        c.window = 4;
        c
    }

    #[test]
    fn roundtrip_is_exact() {
        let cfg = small();
        let p = init_params::<f32>(&cfg, 3).unwrap();
        let bytes = to_bytes(&cfg, &p).unwrap();
        let (cfg2, p2) = from_bytes(&bytes).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(p2, p);
        assert_eq!(to_bytes(&cfg2, &p2).unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let cfg = small();
        let p = init_params::<f32>(&cfg, 3).unwrap();
        let bytes = to_bytes(&cfg, &p).unwrap();
        assert_eq!(&bytes[..4], b"SWIR");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), FORMAT_VERSION);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 8);
        let count = u32::from_le_bytes(bytes[60..64].try_into().unwrap());
        assert_eq!(count as usize, p.len());
        // first tensor name
        let len = u16::from_le_bytes(bytes[64..66].try_into().unwrap()) as usize;
        assert_eq!(&bytes[66..66 + len], b"conv_first.weight");
        // payload bytes = 4 * scalars; the rest is framing
        let framing: usize = p.iter().map(|(n, t)| 2 + n.len() + 1 + 8 * t.rank()).sum();
        assert_eq!(bytes.len(), 64 + framing + 4 * param_count(&cfg).unwrap() as usize + 4);
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let cfg = small();
        let p = init_params::<f32>(&cfg, 3).unwrap();
        let mut bytes = to_bytes(&cfg, &p).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(from_bytes(&bytes), Err(Error::Checksum { .. })));
    }

    #[test]
    fn truncated_and_bad_magic_rejected() {
        let cfg = small();
        let p = init_params::<f32>(&cfg, 3).unwrap();
        let bytes = to_bytes(&cfg, &p).unwrap();
        assert!(from_bytes(&bytes[..10]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Checkpoint(_))));
    }
}
