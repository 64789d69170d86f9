//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes  "AIMQNET\0"
//! version    u32 LE
//! arch       u32 LE length + JSON-encoded Architecture
//! metadata   u32 LE length + JSON object of string pairs
//! tensors    u32 LE count, then per tensor:
//!              u32 LE name length + UTF-8 name
//!              u64 LE element count + f32 LE values
//! ```
//!
//! One architecture per file; several networks can share a file under
//! different name prefixes.

use std::collections::BTreeMap;
use std::path::Path;

use super::network::{Architecture, DuelingQNetwork};
use super::NeuralError;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AIMQNET\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NeuralError> {
        let end = self.pos.checked_add(n).ok_or(NeuralError::Truncated)?;
        let out = self.bytes.get(self.pos..end).ok_or(NeuralError::Truncated)?;
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, NeuralError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NeuralError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, NeuralError> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|e| NeuralError::Malformed(e.to_string()))
    }
}

fn push_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn new(architecture: Architecture) -> Self {
        Self { architecture, metadata: BTreeMap::new(), tensors: Vec::new() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        push_str(&mut out, &serde_json::to_string(&self.architecture).expect("architecture serializes"));
        push_str(&mut out, &serde_json::to_string(&self.metadata).expect("metadata serializes"));
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            push_str(&mut out, &t.name);
            out.extend_from_slice(&(t.data.len() as u64).to_le_bytes());
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NeuralError> {
        let mut r = Reader { bytes, pos: 0 };
        if bytes.len() < CHECKPOINT_MAGIC.len() {
            return Err(if CHECKPOINT_MAGIC.starts_with(bytes) { NeuralError::Truncated } else { NeuralError::BadMagic });
        }
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(NeuralError::BadMagic);
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(NeuralError::UnsupportedVersion { found: version, expected: CHECKPOINT_VERSION });
        }
        let architecture: Architecture =
            serde_json::from_str(&r.string()?).map_err(|e| NeuralError::Malformed(format!("architecture: {e}")))?;
        let metadata: BTreeMap<String, String> =
            serde_json::from_str(&r.string()?).map_err(|e| NeuralError::Malformed(format!("metadata: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.string()?;
            let len = usize::try_from(r.u64()?).map_err(|_| NeuralError::Truncated)?;
            let raw = r.take(len.checked_mul(4).ok_or(NeuralError::Truncated)?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            tensors.push(NamedTensor { name, data });
        }
        if r.pos != bytes.len() {
            return Err(NeuralError::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { architecture, metadata, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), NeuralError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NeuralError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Appends every parameter of `net` as `<prefix><tensor name>`.
    pub fn insert_network<T: Scalar>(&mut self, prefix: &str, net: &DuelingQNetwork<T>) -> Result<(), NeuralError> {
        if net.architecture() != &self.architecture {
            return Err(NeuralError::ArchitectureMismatch {
                expected: self.architecture.to_string(),
                found: net.architecture().to_string(),
            });
        }
        for (name, values) in net.tensor_names().into_iter().zip(net.tensors()) {
            self.tensors.push(NamedTensor {
                name: format!("{prefix}{name}"),
                data: values.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect(),
            });
        }
        Ok(())
    }

    /// Rebuilds the network stored under `prefix`, requiring `expected` to match the header.
    pub fn network<T: Scalar>(&self, prefix: &str, expected: &Architecture) -> Result<DuelingQNetwork<T>, NeuralError> {
        if &self.architecture != expected {
            return Err(NeuralError::ArchitectureMismatch { expected: expected.to_string(), found: self.architecture.to_string() });
        }
        let mut net = DuelingQNetwork::<T>::zeros(expected.clone())?;
        let names = net.tensor_names();
        for (name, dst) in names.iter().zip(net.tensors_mut()) {
            let full = format!("{prefix}{name}");
            let t = self.tensor(&full).ok_or_else(|| NeuralError::MissingTensor(full.clone()))?;
            if t.data.len() != dst.len() {
                return Err(NeuralError::ArchitectureMismatch {
                    expected: format!("{full} with {} values", dst.len()),
                    found: format!("{} values", t.data.len()),
                });
            }
            for (d, &s) in dst.iter_mut().zip(&t.data) {
                *d = T::from_f32(s).expect("f32 converts");
            }
        }
        Ok(net)
    }
}

impl<T: Scalar> DuelingQNetwork<T> {
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), NeuralError> {
        let mut ckpt = Checkpoint::new(self.architecture().clone());
        ckpt.insert_network("", self)?;
        ckpt.save(path)
    }

    pub fn load_checkpoint(path: &Path, expected: &Architecture) -> Result<Self, NeuralError> {
        Checkpoint::load(path)?.network("", expected)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> Architecture {
        Architecture::compact(9, 16, [4, 4, 4], 16, 2)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net: DuelingQNetwork<f32> = DuelingQNetwork::new(small(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        net.save_checkpoint(&path).unwrap();
        let back = DuelingQNetwork::<f32>::load_checkpoint(&path, &small()).unwrap();
        for (a, b) in net.tensors().iter().zip(back.tensors()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn bad_magic_version_and_truncation_are_distinct() {
        let net: DuelingQNetwork<f32> = DuelingQNetwork::zeros(small()).unwrap();
        let mut ckpt = Checkpoint::new(small());
        ckpt.insert_network("", &net).unwrap();
        let bytes = ckpt.to_bytes();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(NeuralError::BadMagic)));

        let mut wrong_version = bytes.clone();
        wrong_version[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&wrong_version), Err(NeuralError::UnsupportedVersion { found: 9, .. })));

        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(NeuralError::Truncated)));
    }

    #[test]
    fn hidden_width_mismatch_is_reported() {
        let mut narrow = Architecture::parity();
        narrow.hidden = 256;
        let net: DuelingQNetwork<f32> = DuelingQNetwork::zeros(narrow).unwrap();
        let mut ckpt = Checkpoint::new(net.architecture().clone());
        ckpt.insert_network("", &net).unwrap();
        let err = ckpt.network::<f32>("", &Architecture::parity()).unwrap_err();
        assert!(matches!(err, NeuralError::ArchitectureMismatch { .. }));
    }
}
