//! Binary checkpoint with a CRC32 trailer, plus a JSON sidecar.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic    16 bytes  "CRSN-CKPT-v1\0\0\0\0"
//! payload  u64 n_total, n_nonlinear, n_fixed, window, warmup, seed
//!          f64 × n_fixed        periods (+inf for the infinite period)
//!          f64 × N·(N−M)        trainable basis, real plane, column-major
//!          f64 × N·(N−M)        trainable basis, imaginary plane
//!          f64 × (N−M)          ρ
//! crc32    u32 of the payload
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::scalar::Scalar;
use crate::spectral::{Period, SpectralConfig, SpectralModel};
use crate::targets::TargetCodebook;

pub const MAGIC: &[u8; 16] = b"CRSN-CKPT-v1\0\0\0\0";

/// Sidecar contents: the model config mirrored for humans, plus what
/// evaluation needs besides the weights.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sidecar {
    pub config: SpectralConfig,
    pub codebook: Option<TargetCodebook>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn encode<T: Scalar>(model: &SpectralModel<T>) -> Vec<u8> {
    let cfg = model.config();
    let mut payload = Vec::new();
    for v in [cfg.n_total, cfg.n_nonlinear, cfg.n_fixed, cfg.window, cfg.warmup] {
        payload.extend_from_slice(&(v as u64).to_le_bytes());
    }
    payload.extend_from_slice(&cfg.seed.to_le_bytes());
    for p in &cfg.periods {
        payload.extend_from_slice(&p.as_f64().to_le_bytes());
    }
    let trainable = model.trainable_basis();
    for plane in [trainable.re(), trainable.im(), model.rho()] {
        for v in plane {
            payload.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(MAGIC.len() + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::CheckpointCorrupt(format!("payload ends early at byte {}", self.bytes.len()))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::CheckpointCorrupt("size field overflows".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::CheckpointCorrupt("array too large".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<SpectralModel<T>> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::CheckpointCorrupt("missing or wrong magic header".into()));
    }
    let payload = &bytes[MAGIC.len()..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    let actual = crc32fast::hash(payload);
    if stored != actual {
        return Err(Error::CheckpointCorrupt(format!("CRC mismatch: stored {stored:08x}, computed {actual:08x}")));
    }
    let mut r = Reader { bytes: payload, at: 0 };
    let n_total = r.usize()?;
    let n_nonlinear = r.usize()?;
    let n_fixed = r.usize()?;
    let window = r.usize()?;
    let warmup = r.usize()?;
    let seed = r.u64()?;
    let periods = r
        .f64s(n_fixed)?
        .into_iter()
        .map(Period::from_f64)
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::CheckpointCorrupt(e.to_string()))?;
    // The initialization scheme only matters before training; the sidecar keeps it.
    let config = SpectralConfig { n_total, n_nonlinear, n_fixed, periods, warmup, window, seed, init: Default::default() };
    config.validate().map_err(|e| Error::CheckpointCorrupt(e.to_string()))?;
    let cols = n_total - n_fixed;
    let lit = |v: Vec<f64>| v.into_iter().map(T::lit).collect::<Vec<T>>();
    let re = lit(r.f64s(n_total * cols)?);
    let im = lit(r.f64s(n_total * cols)?);
    let rho = lit(r.f64s(cols)?);
    if r.at != payload.len() {
        return Err(Error::CheckpointCorrupt(format!("{} trailing payload bytes", payload.len() - r.at)));
    }
    let basis = CMat::from_parts(n_total, cols, re, im).map_err(|e| Error::CheckpointCorrupt(e.to_string()))?;
    SpectralModel::from_parts(config, basis, rho)
}

/// Writes the binary checkpoint and its `<path>.json` sidecar.
pub fn save<T: Scalar>(
    path: &Path,
    model: &SpectralModel<T>,
    codebook: Option<&TargetCodebook>,
    meta: serde_json::Value,
) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode(model))?;
    let sidecar = Sidecar { config: model.config().clone(), codebook: codebook.cloned(), meta };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

/// Reads a checkpoint; the sidecar is optional, but if present its config must agree.
pub fn load<T: Scalar>(path: &Path) -> Result<(SpectralModel<T>, Option<Sidecar>)> {
    let bytes = fs::read(path)
        .map_err(|e| Error::CheckpointCorrupt(format!("cannot read {}: {e}", path.display())))?;
    let mut model = decode::<T>(&bytes)?;
    let side = sidecar_path(path);
    let sidecar = if side.is_file() {
        let s: Sidecar = serde_json::from_str(&fs::read_to_string(&side)?)
            .map_err(|e| Error::CheckpointCorrupt(format!("sidecar: {e}")))?;
        let stored = SpectralConfig { init: s.config.init, ..model.config().clone() };
        if s.config != stored {
            return Err(Error::CheckpointCorrupt("sidecar config disagrees with checkpoint".into()));
        }
        model.set_init_scheme(s.config.init);
        Some(s)
    } else {
        None
    };
    Ok((model, sidecar))
}
