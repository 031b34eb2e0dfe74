//! Checkpoint layout (little-endian):
//!
//! ```text
//! magic  "LRNN"
//! u16    version
//! [u8;32] sha256 of the network's canonical spec
//! u64    parameter count
//! f64*   parameters
//! ```

use alloc::format;
use alloc::vec::Vec;

use super::{NetworkSpec, NnError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LRNN";
pub const CHECKPOINT_VERSION: u16 = 1;

const HEADER: usize = 4 + 2 + 32 + 8;

pub fn encode_checkpoint(spec: &NetworkSpec, params: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + params.len() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&spec.digest());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

/// Decodes parameters, checking they were written for `spec`.
pub fn decode_checkpoint(spec: &NetworkSpec, bytes: &[u8]) -> Result<Vec<f64>, NnError> {
    if bytes.len() < HEADER {
        return Err(NnError::Checkpoint(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    if bytes[6..38] != spec.digest() {
        return Err(NnError::Checkpoint(format!("written for a different network than {}", spec.canonical())));
    }
    let n = u64::from_le_bytes(bytes[38..46].try_into().expect("8 bytes")) as usize;
    let body = &bytes[HEADER..];
    if body.len() != n.saturating_mul(8) {
        return Err(NnError::Checkpoint(format!("expected {n} parameters, found {} bytes", body.len())));
    }
    let params: Vec<f64> =
        body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    super::check_finite(&params, "checkpoint")?;
    Ok(params)
}
