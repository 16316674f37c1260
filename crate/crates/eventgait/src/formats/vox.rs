//! Voxel grids, `VOX1`: magic, `u32` grid count, then per grid `u32` bins,
//! `u32` height, `u32` width, `u64` origin, `f64` bin width in
//! microseconds, and `2 * bins * height * width` f32 values in
//! channel, bin, row, column order.

use std::path::Path;

use eventgait_core::event::VoxelGrid;

use super::ByteReader;
use crate::error::{read_file, write_file, Error, Result};

pub const MAGIC: &[u8; 4] = b"VOX1";

pub fn encode(grids: &[VoxelGrid]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(grids.len() as u32).to_le_bytes());
    for g in grids {
        for d in [g.bins(), g.height(), g.width()] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&g.origin().to_le_bytes());
        out.extend_from_slice(&g.delta_t().to_le_bytes());
        for &v in g.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Vec<VoxelGrid>> {
    let mut r = ByteReader::new(bytes);
    r.magic(MAGIC)?;
    let count = r.u32("grid count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let at = r.offset();
        let bins = r.u32("bins")? as usize;
        let height = r.u32("height")? as usize;
        let width = r.u32("width")? as usize;
        let origin = r.u64("origin")?;
        let delta_t = r.f64("bin width")?;
        let len = [2, bins, height, width]
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format(at, "grid size overflows"))?;
        let data = (0..len).map(|_| r.f32("voxel").map(f64::from)).collect::<Result<Vec<_>>>()?;
        let grid = VoxelGrid::from_data(data, bins, height, width, delta_t, origin)
            .map_err(|e| Error::format(at, e.to_string()))?;
        out.push(grid);
    }
    r.finish()?;
    Ok(out)
}

pub fn read(path: &Path) -> Result<Vec<VoxelGrid>> {
    decode(&read_file(path)?)
}

pub fn write(path: &Path, grids: &[VoxelGrid]) -> Result<()> {
    write_file(path, &encode(grids))
}
