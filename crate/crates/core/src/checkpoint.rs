//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "PICTCKPT" | version u32
//! config text (u32 length + UTF-8) | config hash (u32 length + ASCII hex)
//! epoch u64 | optimizer step u64
//! rng seed [u8; 32] | rng stream u64 | rng word position u128
//! blob count u32, then per blob:
//!   name (u16 length + UTF-8) | rank u8 | dims u32 * rank | values f32 * numel
//! ```

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PICTCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub config_hash: String,
    /// Completed epochs.
    pub epoch: u64,
    pub optim_step: u64,
    pub rng: RngState,
    pub blobs: Vec<Blob>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn string(&mut self, len: usize) -> Result<String> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for s in [&self.config_text, &self.config_hash] {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.optim_step.to_le_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for b in &self.blobs {
            out.extend_from_slice(&(b.name.len() as u16).to_le_bytes());
            out.extend_from_slice(b.name.as_bytes());
            out.push(b.shape.len() as u8);
            for &d in &b.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &b.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let n = r.u32()? as usize;
        let config_text = r.string(n)?;
        let n = r.u32()? as usize;
        let config_hash = r.string(n)?;
        let epoch = r.u64()?;
        let optim_step = r.u64()?;
        let rng = RngState {
            seed: r.array()?,
            stream: r.u64()?,
            word_pos: u128::from_le_bytes(r.array()?),
        };
        let count = r.u32()? as usize;
        let mut blobs = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u16()? as usize;
            let name = r.string(n)?;
            let rank = r.u8()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let numel: usize = shape.iter().product();
            let data = r
                .take(numel * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            blobs.push(Blob { name, shape, data });
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint("trailing bytes after the last blob".into()));
        }
        Ok(Self {
            config_text,
            config_hash,
            epoch,
            optim_step,
            rng,
            blobs,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Reads a checkpoint and checks that its stored hash matches its config.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt = Self::from_bytes(&bytes)?;
        let config = RunConfig::parse(&ckpt.config_text)?;
        if config.hash() != ckpt.config_hash {
            return Err(Error::Checkpoint(format!(
                "{}: stored config hash {} does not match its config ({})",
                path.display(),
                ckpt.config_hash,
                config.hash()
            )));
        }
        Ok(ckpt)
    }

    /// Like [`Checkpoint::load`], additionally requiring `expected` config.
    pub fn load_for(path: &Path, expected: &RunConfig) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if ckpt.config_hash != expected.hash() {
            return Err(Error::Checkpoint(format!(
                "{}: checkpoint config hash {} differs from the requested config {}",
                path.display(),
                ckpt.config_hash,
                expected.hash()
            )));
        }
        Ok(ckpt)
    }

    pub fn config(&self) -> Result<RunConfig> {
        RunConfig::parse(&self.config_text)
    }

    pub fn blob(&self, name: &str) -> Option<&Blob> {
        self.blobs.iter().find(|b| b.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn sample() -> Checkpoint {
        let config = RunConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let _: u64 = rng.random();
        Checkpoint {
            config_text: config.to_text(),
            config_hash: config.hash(),
            epoch: 3,
            optim_step: 96,
            rng: RngState::capture(&rng),
            blobs: vec![
                Blob {
                    name: "student.w".into(),
                    shape: vec![2, 3],
                    data: vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE, 0.0, -0.0],
                },
                Blob {
                    name: "s".into(),
                    shape: vec![],
                    data: vec![7.0],
                },
            ],
        }
    }

    #[test]
    fn bytes_round_trip_identically() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back, c);
    }

    #[test]
    fn rng_state_resumes_the_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let _: [u64; 5] = rng.random();
        let state = RngState::capture(&rng);
        let a: u64 = rng.random();
        let b: u64 = state.restore().random();
        assert_eq!(a, b);
    }

    #[test]
    fn truncation_and_garbage_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::from_bytes(b"not a checkpoint").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn hash_mismatch_fails_to_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let mut c = sample();
        c.save(&path).unwrap();
        let other = RunConfig {
            epochs: 2,
            ..RunConfig::default()
        };
        assert!(matches!(Checkpoint::load_for(&path, &other), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::load_for(&path, &RunConfig::default()).is_ok());
        c.config_hash = "0".repeat(64);
        c.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    }
}
