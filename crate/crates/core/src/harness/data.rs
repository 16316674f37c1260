//! From event streams to network inputs.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::event::{crop_grid, pad_and_resize, two_scale_split, EventStream, Rect, VoxelGrid};
use crate::model::SampleInput;
use crate::snn::DynamicInput;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    /// Short-term slices per window (time steps of the dynamic stream).
    pub num_slices: usize,
    pub k_dynamic: usize,
    pub k_static: usize,
    /// Side length after pad-and-resize.
    pub input_size: usize,
    /// Multipliers applied to voxel values before they enter each stream.
    pub dynamic_scale: f64,
    pub static_scale: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            num_slices: 8,
            k_dynamic: 4,
            k_static: 8,
            input_size: 64,
            dynamic_scale: 1.0,
            static_scale: 1.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_slices == 0 || self.k_dynamic == 0 || self.k_static == 0 || self.input_size == 0 {
            bail!(InvalidArgument, "slice count, bin counts and input size must be positive");
        }
        if !(self.dynamic_scale.is_finite() && self.static_scale.is_finite()) {
            bail!(InvalidArgument, "input scales must be finite");
        }
        Ok(())
    }
}

/// Two-scale split, pad-and-resize, and scaling of one stream. Cropping
/// happens beforehand, with [`crate::event::crop_stream`].
pub fn prepare_input(stream: &EventStream, pipe: &PipelineConfig) -> Result<SampleInput> {
    pipe.validate()?;
    let slices = two_scale_split(stream, pipe.num_slices, pipe.k_dynamic, pipe.k_static)?;
    let dynamic = slices
        .dynamic
        .iter()
        .map(|g| pad_and_resize(g, pipe.input_size))
        .collect::<Result<Vec<_>>>()?;
    let mut dynamic = DynamicInput::from_slices(&dynamic)?;
    if pipe.dynamic_scale != 1.0 {
        dynamic = dynamic.scaled(pipe.dynamic_scale);
    }
    let mut static_grid = pad_and_resize(&slices.static_grid, pipe.input_size)?.into_data();
    if pipe.static_scale != 1.0 {
        static_grid.iter_mut().for_each(|v| *v *= pipe.static_scale);
    }
    Ok(SampleInput { static_grid, dynamic })
}

/// Crops a single-channel frame and pads and resizes it to
/// `target x target` with the same geometry used for event grids.
pub fn crop_frame(frame: &[f64], width: usize, height: usize, crop: Rect, target: usize) -> Result<Vec<f64>> {
    if frame.len() != width * height {
        bail!(InvalidArgument, "frame has {} pixels, expected {width}x{height}", frame.len());
    }
    let mut data = frame.to_vec();
    data.resize(2 * width * height, 0.0);
    let grid = VoxelGrid::from_data(data, 1, height, width, 1.0, 0)?;
    let out = pad_and_resize(&crop_grid(&grid, crop)?, target)?;
    Ok(out.plane(0).to_vec())
}

/// A network-ready sample with its label and optional teacher feature.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub sample_id: String,
    pub label: usize,
    pub input: SampleInput,
    pub teacher: Option<Vec<f64>>,
}
