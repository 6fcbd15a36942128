//! Binary checkpoint container for network parameters plus the RNG stream
//! position, so interrupted runs can resume bit-exactly.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            8 bytes   "GZCKPT01"
//! stage            u32 length + UTF-8 bytes
//! fingerprint      u32 length + UTF-8 bytes
//! config_hash      u32 length + UTF-8 bytes
//! rng seed         32 bytes
//! rng word pos     u128 (16 bytes)
//! tensor count     u32
//! per tensor:
//!   name           u32 length + UTF-8 bytes
//!   rank           u32, then each dim as u64
//!   element count  u64
//!   elements       f64 each
//! ```
//!
//! Elements are stored as f64 regardless of the in-memory scalar, which
//! round-trips f32 parameters exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::nets::{DiscParams, ParamStore};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GZCKPT01";

/// Longest plausible sane string / dimension in a checkpoint header; anything
/// larger is treated as corruption rather than attempted as an allocation.
const MAX_STR: u32 = 1 << 16;
const MAX_TENSORS: u32 = 1 << 12;
const MAX_ELEMENTS: u64 = 1 << 32;

/// Full state of a `ChaCha20Rng` stream: its seed and the word position
/// within the keystream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha20Rng) -> RngState {
        RngState {
            seed: rng.get_seed(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::from_seed(self.seed);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// A saved snapshot: which stage produced it, the architecture fingerprint it
/// is compatible with, a hash of the run configuration, the RNG stream, and
/// every parameter tensor by name.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub stage: String,
    pub fingerprint: String,
    pub config_hash: String,
    pub rng: RngState,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    /// Snapshots a regressor parameter store.
    pub fn from_params<R: Scalar>(
        stage: &str,
        config_hash: &str,
        params: &ParamStore<R>,
        rng: &ChaCha20Rng,
    ) -> Checkpoint {
        let tensors = params
            .tensors()
            .slices()
            .into_iter()
            .map(|s| NamedTensor {
                name: s.name.to_string(),
                shape: s.shape.clone(),
                data: s.data.iter().map(|&v| v.to_f64()).collect(),
            })
            .collect();
        Checkpoint {
            stage: stage.to_string(),
            fingerprint: params.arch().fingerprint(),
            config_hash: config_hash.to_string(),
            rng: RngState::capture(rng),
            tensors,
        }
    }

    /// Snapshots a discriminator. Tensor names follow canonical slice order
    /// (`t0`..`t7`) since geometry is pinned by the fingerprint.
    pub fn from_disc<R: Scalar>(
        stage: &str,
        config_hash: &str,
        disc: &DiscParams<R>,
        rng: &ChaCha20Rng,
    ) -> Checkpoint {
        let tensors = disc
            .tensors()
            .slices()
            .into_iter()
            .enumerate()
            .map(|(i, s)| NamedTensor {
                name: format!("t{i}"),
                shape: vec![s.len()],
                data: s.iter().map(|&v| v.to_f64()).collect(),
            })
            .collect();
        Checkpoint {
            stage: stage.to_string(),
            fingerprint: disc.fingerprint(),
            config_hash: config_hash.to_string(),
            rng: RngState::capture(rng),
            tensors,
        }
    }

    /// Writes the snapshot back into `params`. The store must carry the same
    /// architecture fingerprint and must not be frozen.
    pub fn apply<R: Scalar>(&self, params: &mut ParamStore<R>) -> Result<()> {
        let expect = params.arch().fingerprint();
        if self.fingerprint != expect {
            return Err(Error::Checkpoint(format!(
                "checkpoint fingerprint {} does not match architecture {}",
                self.fingerprint, expect
            )));
        }
        for t in &self.tensors {
            let data: Vec<R> = t.data.iter().map(|&v| R::from_f64(v)).collect();
            params.load_named(&t.name, &data)?;
        }
        Ok(())
    }

    /// Writes the snapshot back into a discriminator with matching geometry.
    pub fn apply_disc<R: Scalar>(&self, disc: &mut DiscParams<R>) -> Result<()> {
        let expect = disc.fingerprint();
        if self.fingerprint != expect {
            return Err(Error::Checkpoint(format!(
                "checkpoint fingerprint {} does not match discriminator {}",
                self.fingerprint, expect
            )));
        }
        let mut slots = disc.tensors_mut().slices_mut();
        if slots.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, discriminator has {}",
                self.tensors.len(),
                slots.len()
            )));
        }
        for (slot, t) in slots.iter_mut().zip(&self.tensors) {
            if slot.len() != t.data.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} holds {} elements, discriminator slot expects {}",
                    t.name,
                    t.data.len(),
                    slot.len()
                )));
            }
            for (dst, &src) in slot.iter_mut().zip(&t.data) {
                *dst = R::from_f64(src);
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
        write_str(&mut w, &self.stage).map_err(io)?;
        write_str(&mut w, &self.fingerprint).map_err(io)?;
        write_str(&mut w, &self.config_hash).map_err(io)?;
        w.write_all(&self.rng.seed).map_err(io)?;
        w.write_u128::<LittleEndian>(self.rng.word_pos).map_err(io)?;
        w.write_u32::<LittleEndian>(self.tensors.len() as u32).map_err(io)?;
        for t in &self.tensors {
            write_str(&mut w, &t.name).map_err(io)?;
            w.write_u32::<LittleEndian>(t.shape.len() as u32).map_err(io)?;
            for &d in &t.shape {
                w.write_u64::<LittleEndian>(d as u64).map_err(io)?;
            }
            w.write_u64::<LittleEndian>(t.data.len() as u64).map_err(io)?;
            for &v in &t.data {
                w.write_f64::<LittleEndian>(v).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let io = |e| Error::io(path, e);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!(
                "{} is not a checkpoint (bad magic)",
                path.display()
            )));
        }
        let stage = read_str(&mut r, path)?;
        let fingerprint = read_str(&mut r, path)?;
        let config_hash = read_str(&mut r, path)?;
        let mut seed = [0u8; 32];
        r.read_exact(&mut seed).map_err(io)?;
        let word_pos = r.read_u128::<LittleEndian>().map_err(io)?;
        let count = r.read_u32::<LittleEndian>().map_err(io)?;
        if count > MAX_TENSORS {
            return Err(Error::Checkpoint(format!(
                "implausible tensor count {count} in {}",
                path.display()
            )));
        }
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name = read_str(&mut r, path)?;
            let rank = r.read_u32::<LittleEndian>().map_err(io)?;
            if rank > 8 {
                return Err(Error::Checkpoint(format!(
                    "implausible tensor rank {rank} in {}",
                    path.display()
                )));
            }
            let mut shape = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                shape.push(r.read_u64::<LittleEndian>().map_err(io)? as usize);
            }
            let len = r.read_u64::<LittleEndian>().map_err(io)?;
            if len > MAX_ELEMENTS {
                return Err(Error::Checkpoint(format!(
                    "implausible element count {len} in {}",
                    path.display()
                )));
            }
            let mut data = vec![0f64; len as usize];
            r.read_f64_into::<LittleEndian>(&mut data).map_err(io)?;
            tensors.push(NamedTensor { name, shape, data });
        }
        Ok(Checkpoint {
            stage,
            fingerprint,
            config_hash,
            rng: RngState { seed, word_pos },
            tensors,
        })
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str<R: Read>(r: &mut R, path: &Path) -> Result<String> {
    let len = r
        .read_u32::<LittleEndian>()
        .map_err(|e| Error::io(path, e))?;
    if len > MAX_STR {
        return Err(Error::Checkpoint(format!(
            "implausible string length {len} in {}",
            path.display()
        )));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    String::from_utf8(buf)
        .map_err(|_| Error::Checkpoint(format!("non-UTF-8 string in {}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::Arch;
    use rand::RngCore;

    fn tiny_params() -> ParamStore<f32> {
        ParamStore::<f32>::init(&Arch::tiny(), 11).unwrap()
    }

    #[test]
    fn save_load_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let params = tiny_params();
        let mut rng = ChaCha20Rng::from_seed([7u8; 32]);
        rng.next_u64();
        rng.next_u64();
        let ck = Checkpoint::from_params("stage1", "cfg-abc", &params, &rng);

        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        ck.save(&p1).unwrap();
        let back = Checkpoint::load(&p1).unwrap();
        back.save(&p2).unwrap();
        let bytes1 = std::fs::read(&p1).unwrap();
        let bytes2 = std::fs::read(&p2).unwrap();
        assert_eq!(bytes1, bytes2, "save -> load -> save must be byte-identical");

        assert_eq!(back.stage, "stage1");
        assert_eq!(back.config_hash, "cfg-abc");
        assert_eq!(back.fingerprint, params.arch().fingerprint());
        assert_eq!(back.tensors.len(), 16);

        let mut fresh = ParamStore::<f32>::init(&Arch::tiny(), 999).unwrap();
        assert_ne!(fresh.content_hash(), params.content_hash());
        back.apply(&mut fresh).unwrap();
        assert_eq!(fresh.content_hash(), params.content_hash());
    }

    #[test]
    fn rng_state_round_trips_mid_stream() {
        let mut rng = ChaCha20Rng::from_seed([3u8; 32]);
        for _ in 0..13 {
            rng.next_u32();
        }
        let state = RngState::capture(&rng);
        let mut resumed = state.restore();
        for _ in 0..50 {
            assert_eq!(rng.next_u64(), resumed.next_u64());
        }
    }

    #[test]
    fn wrong_fingerprint_is_rejected() {
        let params = tiny_params();
        let rng = ChaCha20Rng::from_seed([0u8; 32]);
        let ck = Checkpoint::from_params("stage1", "", &params, &rng);
        let mut other = ParamStore::<f32>::init(&Arch::standard(), 1).unwrap();
        let err = ck.apply(&mut other).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "got {err:?}");
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOTCKPT0 trailing junk").unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "got {err:?}");
    }

    #[test]
    fn truncated_file_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let params = tiny_params();
        let rng = ChaCha20Rng::from_seed([0u8; 32]);
        let ck = Checkpoint::from_params("stage1", "", &params, &rng);
        let path = dir.path().join("t.ckpt");
        ck.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn disc_round_trip_restores_weights() {
        use crate::nets::{DiscArch, DiscMode};
        let arch = DiscArch::tiny();
        let disc = DiscParams::<f32>::init_2d(&arch, DiscMode::Gan, 4, (12, 16), 5).unwrap();
        let rng = ChaCha20Rng::from_seed([9u8; 32]);
        let ck = Checkpoint::from_disc("adapt", "cfg", &disc, &rng);
        let mut other = DiscParams::<f32>::init_2d(&arch, DiscMode::Gan, 4, (12, 16), 77).unwrap();
        ck.apply_disc(&mut other).unwrap();
        for (a, b) in disc.tensors().slices().iter().zip(other.tensors().slices()) {
            assert_eq!(*a, b);
        }
        let mismatched = DiscParams::<f32>::init_2d(&arch, DiscMode::Gan, 5, (12, 16), 5).unwrap();
        let mut mismatched = mismatched;
        assert!(ck.apply_disc(&mut mismatched).is_err());
    }
}
