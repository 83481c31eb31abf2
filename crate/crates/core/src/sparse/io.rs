//! `SLAT` sparse-grid files.
//!
//! Layout (little-endian): magic `SLAT`, version u32, N u32, C u32, L u64,
//! then L coordinate records of three u16 `(x, y, z)`, then the `L x C`
//! feature matrix as f32. Coordinates are written in sorted order.

use std::io::{Read, Write};
use std::path::Path;

use super::{SparseGrid, VoxelCoord, MAX_RESOLUTION};
use crate::error::{Result, SlatError};
use crate::tensor::{read_u32, read_u64};

pub const SLAT_MAGIC: &[u8; 4] = b"SLAT";
pub const SLAT_VERSION: u32 = 1;

impl SparseGrid {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(SLAT_MAGIC)?;
        w.write_all(&SLAT_VERSION.to_le_bytes())?;
        w.write_all(&self.resolution().to_le_bytes())?;
        w.write_all(&(self.channels() as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.len() * (6 + 4 * self.channels()));
        for c in self.coords() {
            for v in c.as_array() {
                buf.extend_from_slice(&(v as u16).to_le_bytes());
            }
        }
        for &f in self.features() {
            buf.extend_from_slice(&(f as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SLAT_MAGIC {
            return Err(SlatError::Format("missing SLAT magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != SLAT_VERSION {
            return Err(SlatError::Format(format!("unsupported SLAT version {version}")));
        }
        let resolution = read_u32(&mut r)?;
        if resolution == 0 || resolution > MAX_RESOLUTION {
            return Err(SlatError::Format(format!("bad resolution {resolution}")));
        }
        let channels = read_u32(&mut r)? as usize;
        let len = read_u64(&mut r)? as usize;
        let n = resolution as usize;
        if len > n * n * n {
            return Err(SlatError::Format(format!("{len} voxels exceed {n}^3")));
        }
        let mut coord_bytes = vec![0u8; len * 6];
        r.read_exact(&mut coord_bytes)?;
        let coords = coord_bytes
            .chunks_exact(6)
            .map(|b| {
                let v = |i: usize| u16::from_le_bytes([b[i], b[i + 1]]) as u32;
                VoxelCoord::new(v(0), v(2), v(4))
            })
            .collect();
        let mut feat_bytes = vec![0u8; len * channels * 4];
        r.read_exact(&mut feat_bytes)?;
        let features = feat_bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        SparseGrid::new(resolution, channels, coords, features)
            .map_err(|e| SlatError::Format(format!("invalid SLAT payload: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
