use alloc::vec;

use super::{Event, EventStream, VoxelGrid};
use crate::error::{bail, Result};
use crate::math;

/// Pixel rectangle; may extend past the grid, only the overlap is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: i64,
    pub y: i64,
    pub width: i64,
    pub height: i64,
}

impl Rect {
    pub fn new(x: i64, y: i64, width: i64, height: i64) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }
}

/// Sub-grid over the intersection of `bbox` with the grid extent.
pub fn crop_grid(grid: &VoxelGrid, bbox: Rect) -> Result<VoxelGrid> {
    let x0 = bbox.x.max(0);
    let y0 = bbox.y.max(0);
    let x1 = (bbox.x + bbox.width).min(grid.width() as i64);
    let y1 = (bbox.y + bbox.height).min(grid.height() as i64);
    if x1 <= x0 || y1 <= y0 {
        bail!(
            InvalidArgument,
            "bbox {bbox:?} does not intersect {}x{} grid",
            grid.width(),
            grid.height()
        );
    }
    let (x0, y0, w, h) = (x0 as usize, y0 as usize, (x1 - x0) as usize, (y1 - y0) as usize);
    let mut out = vec![0.0; grid.planes() * h * w];
    for plane in 0..grid.planes() {
        let src = grid.plane(plane);
        for y in 0..h {
            let row = &src[(y0 + y) * grid.width() + x0..][..w];
            out[(plane * h + y) * w..][..w].copy_from_slice(row);
        }
    }
    VoxelGrid::from_data(out, grid.bins(), h, w, grid.delta_t(), grid.origin())
}

/// Events inside the intersection of `bbox` with the sensor, shifted to the
/// cropped geometry. Voxelizing the result equals [`crop_grid`] applied to
/// the voxelized original.
pub fn crop_stream(stream: &EventStream, bbox: Rect) -> Result<EventStream> {
    let x0 = bbox.x.max(0);
    let y0 = bbox.y.max(0);
    let x1 = (bbox.x + bbox.width).min(stream.width() as i64);
    let y1 = (bbox.y + bbox.height).min(stream.height() as i64);
    if x1 <= x0 || y1 <= y0 {
        bail!(
            InvalidArgument,
            "bbox {bbox:?} does not intersect {}x{} sensor",
            stream.width(),
            stream.height()
        );
    }
    let events = stream
        .events()
        .iter()
        .filter(|e| (x0..x1).contains(&(e.x as i64)) && (y0..y1).contains(&(e.y as i64)))
        .map(|e| Event::new(e.x - x0 as u16, e.y - y0 as u16, e.t, e.p))
        .collect();
    EventStream::new((x1 - x0) as u16, (y1 - y0) as u16, stream.window(), events)
}

/// Zero-pads the shorter side symmetrically to a square (odd remainders go
/// to the bottom/right), then bilinearly resamples every plane to
/// `target x target`.
pub fn pad_and_resize(grid: &VoxelGrid, target: usize) -> Result<VoxelGrid> {
    let (h, w) = (grid.height(), grid.width());
    if h == 0 || w == 0 || target == 0 {
        bail!(InvalidArgument, "cannot resize {w}x{h} grid to {target}x{target}");
    }
    let side = h.max(w);
    let (top, left) = ((side - h) / 2, (side - w) / 2);
    let planes = grid.planes();
    let mut square = vec![0.0; planes * side * side];
    for plane in 0..planes {
        let src = grid.plane(plane);
        for y in 0..h {
            square[(plane * side + top + y) * side + left..][..w]
                .copy_from_slice(&src[y * w..][..w]);
        }
    }
    if side == target {
        return VoxelGrid::from_data(square, grid.bins(), side, side, grid.delta_t(), grid.origin());
    }

    let taps_y = resample_taps(side, target);
    let mut out = vec![0.0; planes * target * target];
    for plane in 0..planes {
        let src = &square[plane * side * side..][..side * side];
        let dst = &mut out[plane * target * target..][..target * target];
        for (oy, &(y0, y1, fy)) in taps_y.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in taps_y.iter().enumerate() {
                let top = (1.0 - fx) * src[y0 * side + x0] + fx * src[y0 * side + x1];
                let bottom = (1.0 - fx) * src[y1 * side + x0] + fx * src[y1 * side + x1];
                dst[oy * target + ox] = (1.0 - fy) * top + fy * bottom;
            }
        }
    }
    VoxelGrid::from_data(out, grid.bins(), target, target, grid.delta_t(), grid.origin())
}

/// Half-pixel-center source taps `(lo, hi, frac)` for each output index.
fn resample_taps(src: usize, dst: usize) -> alloc::vec::Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = math::floor(s) as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}
