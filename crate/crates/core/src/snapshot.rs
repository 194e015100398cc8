//! Binary snapshot files with JSON sidecars.
//!
//! Layout (little endian):
//!
//! ```text
//! magic   "HKRF"          4 bytes
//! version u32             currently 1
//! n       u32
//! N       u32             points per real axis
//! t       f64
//! phi     (re, im) f64 pairs, row major over x1, y1, x2, y2
//! psi     (re, im) f64 pairs, same order
//! ```
//!
//! The sidecar `<name>.json` stores the full run configuration, the step
//! index (for bit-exact resume cadence) and the SHA-256 of the binary file.
//! Loading verifies the hash; a mismatch is a configuration error.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{HkError, Result};
use crate::spectral::{Grid, ScalarField, C64};

const MAGIC: &[u8; 4] = b"HKRF";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub config: RunConfig,
    pub step: u64,
    pub t: f64,
    pub sha256: String,
}

#[derive(Debug, Clone)]
pub struct SnapshotData {
    pub t: f64,
    pub step: u64,
    pub phi: ScalarField,
    pub psi: ScalarField,
}

fn push_field(buf: &mut Vec<u8>, f: &ScalarField) {
    for v in &f.data {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes the binary snapshot and its sidecar.
pub fn write_snapshot(path: &Path, snap: &SnapshotData, config: &RunConfig) -> Result<()> {
    let grid = &snap.phi.grid;
    let mut buf = Vec::with_capacity(24 + 32 * grid.num_points());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(grid.n as u32).to_le_bytes());
    buf.extend_from_slice(&(grid.points_per_axis as u32).to_le_bytes());
    buf.extend_from_slice(&snap.t.to_le_bytes());
    push_field(&mut buf, &snap.phi);
    push_field(&mut buf, &snap.psi);
    std::fs::write(path, &buf)?;

    let sidecar = Sidecar {
        config: config.clone(),
        step: snap.step,
        t: snap.t,
        sha256: hex::encode(Sha256::digest(&buf)),
    };
    std::fs::write(
        sidecar_path(path),
        serde_json::to_vec_pretty(&sidecar).map_err(|e| HkError::Io(e.to_string()))?,
    )?;
    Ok(())
}

fn read_u32(buf: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(buf[off..off + 4].try_into().unwrap())
}

/// Reads a snapshot, verifying the sidecar hash and header consistency.
pub fn read_snapshot(path: &Path) -> Result<(SnapshotData, Sidecar)> {
    let buf = std::fs::read(path)
        .map_err(|e| HkError::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
    let sidecar_text = std::fs::read_to_string(sidecar_path(path)).map_err(|e| {
        HkError::ConfigInvalid(format!("missing sidecar for {}: {e}", path.display()))
    })?;
    let sidecar: Sidecar = serde_json::from_str(&sidecar_text)
        .map_err(|e| HkError::ConfigInvalid(format!("sidecar parse error: {e}")))?;

    let digest = hex::encode(Sha256::digest(&buf));
    if digest != sidecar.sha256 {
        return Err(HkError::ConfigInvalid(format!(
            "integrity hash mismatch for {}",
            path.display()
        )));
    }
    if buf.len() < 24 || &buf[0..4] != MAGIC {
        return Err(HkError::ConfigInvalid("bad snapshot magic".into()));
    }
    if read_u32(&buf, 4) != FORMAT_VERSION {
        return Err(HkError::ConfigInvalid(
            "unsupported snapshot version".into(),
        ));
    }
    let n = read_u32(&buf, 8) as usize;
    let np = read_u32(&buf, 12) as usize;
    let t = f64::from_le_bytes(buf[16..24].try_into().unwrap());
    let grid = Grid::new(n, np, sidecar.config.length)?;
    let npts = grid.num_points();
    if buf.len() != 24 + 32 * npts {
        return Err(HkError::ConfigInvalid(format!(
            "snapshot size mismatch: {} bytes for {npts} points",
            buf.len()
        )));
    }
    let read_field = |grid: &Arc<Grid>, base: usize| -> ScalarField {
        let mut data = Vec::with_capacity(npts);
        for p in 0..npts {
            let off = base + 16 * p;
            let re = f64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
            let im = f64::from_le_bytes(buf[off + 8..off + 16].try_into().unwrap());
            data.push(C64::new(re, im));
        }
        ScalarField {
            grid: grid.clone(),
            data,
        }
    };
    let phi = read_field(&grid, 24);
    let psi = read_field(&grid, 24 + 16 * npts);
    Ok((
        SnapshotData {
            t,
            step: sidecar.step,
            phi,
            psi,
        },
        sidecar,
    ))
}
