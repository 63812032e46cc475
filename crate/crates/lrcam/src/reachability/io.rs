//! On-disk format for solved value functions.
//!
//! Layout (all multi-byte fields little-endian):
//!
//! ```text
//! magic        "HJVF1"                      5 bytes
//! x_min x_max y_min y_max                   4 x f64
//! theta_min theta_max                       2 x f64 (always -pi, pi)
//! nx ny ntheta                              3 x u64
//! v omega_max d                             3 x f64
//! converged                                 u8
//! residual                                  f64
//! iterations                                u64
//! params_hash                               u64
//! values (x-major, then y, then theta)      nx*ny*ntheta x f64
//! ```

use super::{GameParams, Grid3D, ValueFunction};
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 5] = b"HJVF1";

#[derive(Debug, Error)]
pub enum ReachError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an HJVF1 file (bad magic)")]
    BadMagic,
    #[error("corrupt HJVF1 file: {0}")]
    Corrupt(String),
    #[error("invalid grid: {0}")]
    BadGrid(String),
}

pub fn save_value_function(vf: &ValueFunction, path: &Path) -> Result<(), ReachError> {
    let mut buf = Vec::with_capacity(128 + vf.values.len() * 8);
    buf.extend_from_slice(MAGIC);
    for v in [vf.grid.x_min, vf.grid.x_max, vf.grid.y_min, vf.grid.y_max, -PI, PI] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for n in [vf.grid.nx, vf.grid.ny, vf.grid.ntheta] {
        buf.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for v in [vf.params.v, vf.params.omega_max, vf.params.d] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.push(vf.converged as u8);
    buf.extend_from_slice(&vf.residual.to_le_bytes());
    buf.extend_from_slice(&vf.iterations.to_le_bytes());
    buf.extend_from_slice(&ValueFunction::params_hash(&vf.grid, &vf.params).to_le_bytes());
    for v in &vf.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn load_value_function(path: &Path) -> Result<ValueFunction, ReachError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;

    let take = |pos: &mut usize, n: usize| -> Result<&[u8], ReachError> {
        if *pos + n > bytes.len() {
            return Err(ReachError::Corrupt(format!("truncated at byte {}", *pos)));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let f64_at = |pos: &mut usize| -> Result<f64, ReachError> {
        Ok(f64::from_le_bytes(take(pos, 8)?.try_into().unwrap()))
    };
    let u64_at = |pos: &mut usize| -> Result<u64, ReachError> {
        Ok(u64::from_le_bytes(take(pos, 8)?.try_into().unwrap()))
    };

    if take(&mut pos, 5)? != MAGIC {
        return Err(ReachError::BadMagic);
    }
    let x_min = f64_at(&mut pos)?;
    let x_max = f64_at(&mut pos)?;
    let y_min = f64_at(&mut pos)?;
    let y_max = f64_at(&mut pos)?;
    let _theta_min = f64_at(&mut pos)?;
    let _theta_max = f64_at(&mut pos)?;
    let nx = u64_at(&mut pos)? as usize;
    let ny = u64_at(&mut pos)? as usize;
    let ntheta = u64_at(&mut pos)? as usize;
    let v = f64_at(&mut pos)?;
    let omega_max = f64_at(&mut pos)?;
    let d = f64_at(&mut pos)?;
    let converged = take(&mut pos, 1)?[0] != 0;
    let residual = f64_at(&mut pos)?;
    let iterations = u64_at(&mut pos)?;
    let stored_hash = u64_at(&mut pos)?;

    let grid = Grid3D { x_min, x_max, y_min, y_max, nx, ny, ntheta };
    grid.validate()?;
    let params = GameParams { v, omega_max, d };
    if stored_hash != ValueFunction::params_hash(&grid, &params) {
        return Err(ReachError::Corrupt("params hash mismatch".into()));
    }

    let n = grid.node_count();
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(f64_at(&mut pos)?);
    }
    if pos != bytes.len() {
        return Err(ReachError::Corrupt(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(ValueFunction { grid, params, values, converged, iterations, residual })
}
