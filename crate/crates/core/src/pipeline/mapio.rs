//! Binary map files.
//!
//! ```text
//! b"GSMP"  u32 version  u64 count
//! count x { f32 mu[3] color[3] radius opacity, u32 created_at }
//! ```
//! All integers and floats little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scalar::Scalar;
use crate::scene::{GaussianMap, IsotropicGaussian};

pub const MAP_MAGIC: &[u8; 4] = b"GSMP";
pub const MAP_VERSION: u32 = 1;
const HEADER_BYTES: usize = 16;
const RECORD_BYTES: usize = 8 * 4 + 4;

pub fn encode_map<S: Scalar>(map: &GaussianMap<S>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + map.len() * RECORD_BYTES);
    out.extend_from_slice(MAP_MAGIC);
    out.extend_from_slice(&MAP_VERSION.to_le_bytes());
    out.extend_from_slice(&(map.len() as u64).to_le_bytes());
    for g in map.iter() {
        for p in g.to_params() {
            out.extend_from_slice(&p.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
        out.extend_from_slice(&g.created_at.to_le_bytes());
    }
    out
}

pub fn decode_map<S: Scalar>(bytes: &[u8]) -> Result<GaussianMap<S>> {
    let bad = |m: String| Error::InvalidArgument(format!("map file: {m}"));
    if bytes.len() < HEADER_BYTES || &bytes[..4] != MAP_MAGIC {
        return Err(bad("missing GSMP header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MAP_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_BYTES..];
    if count.checked_mul(RECORD_BYTES) != Some(body.len()) {
        return Err(bad(format!(
            "{count} records declared but {} bytes of payload",
            body.len()
        )));
    }
    let mut gaussians = Vec::with_capacity(count);
    for rec in body.chunks_exact(RECORD_BYTES) {
        let f = |k: usize| S::lit(f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap()) as f64);
        let g = IsotropicGaussian {
            mu: Vec3::new(f(0), f(1), f(2)),
            color: [f(3), f(4), f(5)],
            radius: f(6),
            opacity: f(7),
            created_at: u32::from_le_bytes(rec[32..36].try_into().unwrap()),
        };
        if !g.is_valid() {
            return Err(bad(format!("record {} is out of range", gaussians.len())));
        }
        gaussians.push(g);
    }
    Ok(GaussianMap::from_gaussians(gaussians))
}

pub fn write_map<S: Scalar>(path: &Path, map: &GaussianMap<S>) -> Result<()> {
    std::fs::write(path, encode_map(map)).map_err(|e| Error::file(path, e))
}

pub fn read_map<S: Scalar>(path: &Path) -> Result<GaussianMap<S>> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_map(&bytes).map_err(|e| Error::file(path, e))
}
