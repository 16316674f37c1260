//! Convolutional shape encoder over the long-term slice, the alignment head,
//! the structure-alignment loss, and teacher feature handling.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Result};
use crate::event::VoxelGrid;
use crate::nn::{self, Affine, Conv2d};
use crate::params::{self, Parameters};

pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Luma of an interleaved (`H x W x channels`) frame.
pub fn grayscale(frame: &[f64], channels: usize) -> Result<Vec<f64>> {
    if channels != 3 {
        bail!(InvalidArgument, "grayscale needs 3 channels, got {channels}");
    }
    if !frame.len().is_multiple_of(3) {
        bail!(InvalidArgument, "frame length {} is not a multiple of 3", frame.len());
    }
    Ok(frame
        .chunks_exact(3)
        .map(|px| LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2])
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticConfig {
    /// Planes of the long-term grid (`2 * K_static`).
    pub in_channels: usize,
    pub input_size: usize,
    pub widths: Vec<usize>,
    pub embed_dim: usize,
    pub teacher_dim: usize,
}

impl Default for StaticConfig {
    fn default() -> Self {
        Self {
            in_channels: 16,
            input_size: 64,
            widths: alloc::vec![16, 32, 64],
            embed_dim: 64,
            teacher_dim: 64,
        }
    }
}

impl StaticConfig {
    fn last_width(&self) -> usize {
        self.widths.last().copied().unwrap_or(self.in_channels)
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticRecord {
    /// Input of each block followed by the final feature map.
    maps: Vec<Vec<f64>>,
    sizes: Vec<usize>,
    pooled: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticOutput {
    pub embedding: Vec<f64>,
    pub aligned: Vec<f64>,
}

/// Blocks of stride-2 3x3 convolution followed by ReLU. The stride realizes
/// the 2x downsample: it equals convolving at full resolution, applying the
/// ReLU, and keeping every second row and column.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticEncoder {
    pub config: StaticConfig,
    pub blocks: Vec<Conv2d>,
    /// 1x1 convolution to the teacher width. Being linear, it is applied
    /// after the spatial mean, which gives the same result.
    pub align: Affine,
    pub embed: Affine,
}

impl StaticEncoder {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, config: StaticConfig) -> Result<Self> {
        if config.widths.is_empty() {
            bail!(InvalidArgument, "static encoder needs at least one block");
        }
        let mut blocks = Vec::with_capacity(config.widths.len());
        let mut c = config.in_channels;
        for &w in &config.widths {
            blocks.push(Conv2d::random(rng, c, w, 2)?);
            c = w;
        }
        let align = Affine::random(rng, c, config.teacher_dim, 1.0)?;
        let embed = Affine::random(rng, c, config.embed_dim, 1.0)?;
        Ok(Self {
            config,
            blocks,
            align,
            embed,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn forward_grid(&self, grid: &VoxelGrid) -> Result<(StaticOutput, StaticRecord)> {
        if grid.height() != grid.width() {
            bail!(InvalidArgument, "static grid must be square, got {}x{}", grid.width(), grid.height());
        }
        if grid.planes() != self.config.in_channels {
            bail!(
                InvalidArgument,
                "static grid has {} planes, encoder expects {}",
                grid.planes(),
                self.config.in_channels
            );
        }
        self.forward(grid.data(), grid.height())
    }

    pub fn forward(&self, x: &[f64], size: usize) -> Result<(StaticOutput, StaticRecord)> {
        if size != self.config.input_size || x.len() != self.config.in_channels * size * size {
            bail!(
                InvalidArgument,
                "static input must be {}x{}x{}",
                self.config.in_channels,
                self.config.input_size,
                self.config.input_size
            );
        }
        let mut maps = Vec::with_capacity(self.blocks.len() + 1);
        let mut sizes = Vec::with_capacity(self.blocks.len() + 1);
        let mut cur = x.to_vec();
        let mut side = size;
        for block in &self.blocks {
            let next = nn::relu(&block.forward(&cur, side)?);
            maps.push(core::mem::replace(&mut cur, next));
            sizes.push(side);
            side = block.output_size(side);
        }
        let pooled = nn::channel_mean(&cur, self.config.last_width(), side * side);
        maps.push(cur);
        sizes.push(side);
        let out = StaticOutput {
            embedding: self.embed.forward(&pooled)?,
            aligned: self.align.forward(&pooled)?,
        };
        Ok((out, StaticRecord { maps, sizes, pooled }))
    }

    /// Either upstream gradient may be `None` when its head is unused.
    pub fn backward(
        &self,
        record: &StaticRecord,
        d_embedding: Option<&[f64]>,
        d_aligned: Option<&[f64]>,
        grads: &mut StaticEncoder,
    ) -> Result<()> {
        if record.maps.len() != self.blocks.len() + 1 {
            bail!(State, "static record does not belong to this encoder");
        }
        let mut d_pooled = alloc::vec![0.0; self.config.last_width()];
        if let Some(d) = d_embedding {
            params::add_into(&mut d_pooled, &self.embed.backward(&record.pooled, d, &mut grads.embed)?);
        }
        if let Some(d) = d_aligned {
            params::add_into(&mut d_pooled, &self.align.backward(&record.pooled, d, &mut grads.align)?);
        }
        let side = record.sizes[self.blocks.len()];
        let mut d_cur = nn::channel_mean_backward(&d_pooled, side * side);
        for (k, block) in self.blocks.iter().enumerate().rev() {
            let d_pre = nn::relu_backward(&record.maps[k + 1], &d_cur);
            d_cur = block.backward(&record.maps[k], record.sizes[k], &d_pre, &mut grads.blocks[k])?;
        }
        Ok(())
    }
}

impl Parameters for StaticEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (k, b) in self.blocks.iter().enumerate() {
            b.visit(&params::join(prefix, &alloc::format!("conv{k}")), f);
        }
        self.align.visit(&params::join(prefix, "align"), f);
        self.embed.visit(&params::join(prefix, "embed"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        self.align.visit_mut(f);
        self.embed.visit_mut(f);
    }
}

/// Squared Euclidean distance between the aligned feature and the teacher
/// feature.
pub fn align_loss(student: &[f64], teacher: &[f64]) -> Result<f64> {
    if student.len() != teacher.len() {
        bail!(InvalidArgument, "alignment widths differ: {} vs {}", student.len(), teacher.len());
    }
    Ok(student.iter().zip(teacher).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Gradient of [`align_loss`] with respect to the student feature.
pub fn align_loss_grad(student: &[f64], teacher: &[f64]) -> Result<Vec<f64>> {
    if student.len() != teacher.len() {
        bail!(InvalidArgument, "alignment widths differ: {} vs {}", student.len(), teacher.len());
    }
    Ok(student.iter().zip(teacher).map(|(a, b)| 2.0 * (a - b)).collect())
}

/// Precomputed teacher features keyed by sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherFeatureSet {
    dim: usize,
    teacher: String,
    features: BTreeMap<String, Vec<f64>>,
}

impl TeacherFeatureSet {
    pub fn new(dim: usize, teacher: impl Into<String>) -> Self {
        Self {
            dim,
            teacher: teacher.into(),
            features: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn teacher(&self) -> &str {
        &self.teacher
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, feature: Vec<f64>) -> Result<()> {
        let id = id.into();
        if feature.len() != self.dim {
            bail!(Data, "teacher feature for '{id}' has width {}, expected {}", feature.len(), self.dim);
        }
        if feature.iter().any(|v| !v.is_finite()) {
            bail!(Data, "teacher feature for '{id}' has non-finite entries");
        }
        self.features.insert(id, feature);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&[f64]> {
        match self.features.get(id) {
            Some(f) => Ok(f),
            None => bail!(Data, "no teacher feature for sample '{id}'"),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.features.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

/// Frozen random projection followed by `tanh`; a self-contained stand-in
/// for a pretrained image model.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoTeacher {
    dim: usize,
    input_len: usize,
    matrix: Vec<f64>,
}

impl PseudoTeacher {
    pub const NAME: &'static str = "pseudo-teacher";

    /// Entries are standard normal scaled by `1/sqrt(input_len)` so the
    /// pre-activation stays O(1) for unit-range images.
    pub fn new(dim: usize, input_len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 1.0 / crate::math::sqrt(input_len.max(1) as f64);
        Self {
            dim,
            input_len,
            matrix: params::gaussian(&mut rng, dim * input_len, std),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn project(&self, gray: &[f64]) -> Result<Vec<f64>> {
        if gray.len() != self.input_len {
            bail!(InvalidArgument, "pseudo-teacher expects {} pixels, got {}", self.input_len, gray.len());
        }
        Ok(self
            .matrix
            .chunks_exact(self.input_len.max(1))
            .take(self.dim)
            .map(|row| crate::math::tanh(crate::math::dot(row, gray)))
            .collect())
    }
}

/// One-shot form of [`PseudoTeacher`]: 64x64 frame in, `dim` features out.
pub fn pseudo_teacher(gray: &[f64], dim: usize, seed: u64) -> Result<Vec<f64>> {
    PseudoTeacher::new(dim, gray.len(), seed).project(gray)
}
