use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RFPJ";
const INIT_NOISE_STD: f64 = 0.01;

/// Square linear map shared by the query and document towers.
///
/// `version` is a CRC32 fingerprint of the weights, so two projections with
/// different weights never share a version.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    dim: usize,
    matrix: Vec<f32>,
    version: u32,
}

impl Projection {
    pub fn from_rows(dim: usize, matrix: Vec<f32>) -> Result<Self> {
        if matrix.len() != dim * dim {
            return Err(Error::InvalidInput(format!(
                "projection matrix has {} entries, expected {}",
                matrix.len(),
                dim * dim
            )));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("projection has non-finite entries".into()));
        }
        let version = fingerprint(&matrix);
        Ok(Projection { dim, matrix, version })
    }

    pub(crate) fn from_f64(dim: usize, matrix: &[f64]) -> Result<Self> {
        Self::from_rows(dim, matrix.iter().map(|&x| x as f32).collect())
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = vec![0.0f32; dim * dim];
        for i in 0..dim {
            m[i * dim + i] = 1.0;
        }
        Self::from_rows(dim, m).expect("identity is well-formed")
    }

    /// Identity plus N(0, 0.01²) noise from a seeded generator.
    pub fn init(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, INIT_NOISE_STD).expect("valid std");
        let mut m = Vec::with_capacity(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                let base = if r == c { 1.0 } else { 0.0 };
                m.push((base + noise.sample(&mut rng)) as f32);
            }
        }
        Self::from_rows(dim, m).expect("init is well-formed")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn rows(&self) -> &[f32] {
        &self.matrix
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.matrix.iter().map(|&x| x as f64).collect()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim);
        self.matrix
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(x).map(|(&a, b)| a as f64 * b).sum())
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.matrix.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for x in &self.matrix {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Format("projection file truncated".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format(format!(
                "bad projection magic {:?}, expected \"RFPJ\"",
                String::from_utf8_lossy(&bytes[..4])
            )));
        }
        let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
        let crc = u32::from_le_bytes(crc_bytes.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != crc {
            return Err(Error::Format("projection CRC mismatch".into()));
        }
        let version = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
        let dim = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) as usize;
        let floats = &body[12..];
        if floats.len() != dim * dim * 4 {
            return Err(Error::Format(format!(
                "projection payload is {} bytes, expected {} for dim {dim}",
                floats.len(),
                dim * dim * 4
            )));
        }
        let matrix: Vec<f32> = floats
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let proj = Self::from_rows(dim, matrix).map_err(|e| Error::Format(e.to_string()))?;
        if proj.version != version {
            return Err(Error::Format(format!(
                "projection version {version} does not match weights fingerprint {}",
                proj.version
            )));
        }
        Ok(proj)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io_at(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io_at(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn fingerprint(matrix: &[f32]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for x in matrix {
        h.update(&x.to_le_bytes());
    }
    h.finalize()
}
