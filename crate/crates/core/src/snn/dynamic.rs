use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::mose::time_average;
use super::{BackwardOptions, LifParams, MoseLayer, MoseRecord, SpikeFn, SurrogateConfig, Synapse};
use crate::error::{bail, Result};
use crate::event::VoxelGrid;
use crate::params::{self, Parameters};

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicConfig {
    /// Planes per short-term slice (`2 * K_dynamic`).
    pub in_channels: usize,
    /// Input side length (square inputs).
    pub input_size: usize,
    /// Average-pool factor applied to the raw slices.
    pub input_pool: usize,
    /// Average-pool factor between the two MoSE layers.
    pub mid_pool: usize,
    pub widths: [usize; 2],
    pub taus: Vec<f64>,
    pub gate_hidden: usize,
    pub lif: LifParams,
    pub surrogate: SurrogateConfig,
    pub synapse: Synapse,
    /// Weight scale of each MoSE layer (standard deviation `gain / sqrt(fan_in)`).
    pub init_gains: [f64; 2],
}

impl Default for DynamicConfig {
    fn default() -> Self {
        Self {
            in_channels: 8,
            input_size: 64,
            input_pool: 4,
            mid_pool: 2,
            widths: [16, 32],
            taus: vec![2.0, 8.0, 32.0],
            gate_hidden: 8,
            lif: LifParams::default(),
            surrogate: SurrogateConfig::default(),
            synapse: Synapse::Impulse,
            init_gains: [2.0, 2.0],
        }
    }
}

impl DynamicConfig {
    pub fn output_width(&self) -> usize {
        self.widths[1]
    }

    fn pooled_sides(&self) -> Result<(usize, usize)> {
        if self.input_pool == 0 || self.mid_pool == 0 {
            bail!(InvalidArgument, "pool factors must be positive");
        }
        let first = self.input_size / self.input_pool;
        let second = first / self.mid_pool;
        if second == 0 {
            bail!(
                InvalidArgument,
                "input size {} too small for pooling {}x{}",
                self.input_size,
                self.input_pool,
                self.mid_pool
            );
        }
        Ok((first, second))
    }
}

/// Sequence of short-term slices, each `channels x size x size`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicInput {
    pub channels: usize,
    pub size: usize,
    pub steps: Vec<Vec<f64>>,
}

impl DynamicInput {
    /// One time step per slice; a slice's `2K` planes become its channels.
    pub fn from_slices(slices: &[VoxelGrid]) -> Result<Self> {
        let Some(first) = slices.first() else {
            bail!(InvalidArgument, "need at least one dynamic slice");
        };
        let (planes, h, w) = (first.planes(), first.height(), first.width());
        if h != w {
            bail!(InvalidArgument, "dynamic slices must be square, got {w}x{h}");
        }
        if slices.iter().any(|s| s.planes() != planes || s.height() != h || s.width() != w) {
            bail!(InvalidArgument, "dynamic slices differ in shape");
        }
        Ok(Self {
            channels: planes,
            size: h,
            steps: slices.iter().map(|s| s.data().to_vec()).collect(),
        })
    }

    /// Every voxel multiplied by `factor` (event-density probe).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            steps: self
                .steps
                .iter()
                .map(|s| s.iter().map(|v| v * factor).collect())
                .collect(),
            ..self.clone()
        }
    }
}

/// `channels x size x size` -> `channels x (size/f) x (size/f)` mean pool.
/// Trailing rows/columns that do not fill a window are dropped.
pub fn avg_pool(x: &[f64], channels: usize, size: usize, factor: usize) -> Vec<f64> {
    let out = size / factor;
    let norm = (factor * factor) as f64;
    let mut y = vec![0.0; channels * out * out];
    for c in 0..channels {
        let src = &x[c * size * size..(c + 1) * size * size];
        let dst = &mut y[c * out * out..(c + 1) * out * out];
        for oy in 0..out {
            for dy in 0..factor {
                let row = &src[(oy * factor + dy) * size..];
                for ox in 0..out {
                    let cell: f64 = row[ox * factor..ox * factor + factor].iter().sum();
                    dst[oy * out + ox] += cell;
                }
            }
        }
        dst.iter_mut().for_each(|v| *v /= norm);
    }
    y
}

fn avg_pool_backward(dy: &[f64], channels: usize, size: usize, factor: usize) -> Vec<f64> {
    let out = size / factor;
    let norm = (factor * factor) as f64;
    let mut dx = vec![0.0; channels * size * size];
    for c in 0..channels {
        for y in 0..out * factor {
            for x in 0..out * factor {
                dx[(c * size + y) * size + x] = dy[(c * out + y / factor) * out + x / factor] / norm;
            }
        }
    }
    dx
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicRecord {
    pub first: MoseRecord,
    pub second: MoseRecord,
    pub steps: usize,
}

impl DynamicRecord {
    /// Gate coefficients of the first and second MoSE layer.
    pub fn alphas(&self) -> [&[f64]; 2] {
        [&self.first.gate.output.alpha, &self.second.gate.output.alpha]
    }
}

/// Two MoSE layers with average pooling before and between them; the output
/// is the spatially and temporally averaged mixture of the second layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicStream {
    pub config: DynamicConfig,
    pub first: MoseLayer,
    pub second: MoseLayer,
}

impl DynamicStream {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, config: DynamicConfig) -> Result<Self> {
        config.pooled_sides()?;
        let c = &config;
        let first = MoseLayer::new(
            rng,
            c.in_channels,
            c.widths[0],
            &c.taus,
            c.gate_hidden,
            c.lif,
            c.surrogate,
            c.synapse,
            c.init_gains[0],
        )?;
        let second = MoseLayer::new(
            rng,
            c.widths[0],
            c.widths[1],
            &c.taus,
            c.gate_hidden,
            c.lif,
            c.surrogate,
            c.synapse,
            c.init_gains[1],
        )?;
        Ok(Self {
            config,
            first,
            second,
        })
    }

    pub fn output_width(&self) -> usize {
        self.config.output_width()
    }

    fn check_input(&self, input: &DynamicInput) -> Result<()> {
        let c = &self.config;
        if input.channels != c.in_channels || input.size != c.input_size {
            bail!(
                InvalidArgument,
                "dynamic input is {}x{}x{}, expected {}x{}x{}",
                input.channels,
                input.size,
                input.size,
                c.in_channels,
                c.input_size,
                c.input_size
            );
        }
        if input.steps.is_empty() {
            bail!(InvalidArgument, "dynamic input has no time steps");
        }
        let expected = c.in_channels * c.input_size * c.input_size;
        if input.steps.iter().any(|s| s.len() != expected) {
            bail!(InvalidArgument, "dynamic input step has wrong length");
        }
        Ok(())
    }

    fn pool_input(&self, input: &DynamicInput) -> Vec<Vec<f64>> {
        let c = &self.config;
        input
            .steps
            .iter()
            .map(|s| avg_pool(s, c.in_channels, c.input_size, c.input_pool))
            .collect()
    }

    fn pool_mid(&self, y1: &[Vec<f64>], side1: usize) -> Vec<Vec<f64>> {
        y1.iter()
            .map(|s| avg_pool(s, self.config.widths[0], side1, self.config.mid_pool))
            .collect()
    }

    /// Data-dependent initialization: layer by layer, rescales the weights
    /// of every spiking population so its input current over `inputs` has
    /// root-mean-square `target` (in units of the membrane potential).
    pub fn calibrate(&mut self, inputs: &[&DynamicInput], target: f64) -> Result<()> {
        for input in inputs {
            self.check_input(input)?;
        }
        let (side1, side2) = self.config.pooled_sides()?;
        let first: Vec<Vec<Vec<f64>>> = inputs.iter().map(|i| self.pool_input(i)).collect();
        let refs: Vec<&[Vec<f64>]> = first.iter().map(Vec::as_slice).collect();
        self.first.calibrate(&refs, side1 * side1, target);
        let mut second = Vec::with_capacity(first.len());
        for x in &first {
            let (y1, _) = self.first.forward(x, side1 * side1, SpikeFn::Heaviside)?;
            second.push(self.pool_mid(&y1, side1));
        }
        let refs: Vec<&[Vec<f64>]> = second.iter().map(Vec::as_slice).collect();
        self.second.calibrate(&refs, side2 * side2, target);
        Ok(())
    }

    pub fn forward(&self, input: &DynamicInput, mode: SpikeFn) -> Result<(Vec<f64>, DynamicRecord)> {
        self.check_input(input)?;
        let c = &self.config;
        let (side1, side2) = c.pooled_sides()?;
        let pooled = self.pool_input(input);
        let (y1, first) = self.first.forward(&pooled, side1 * side1, mode)?;
        let mid = self.pool_mid(&y1, side1);
        let (y2, second) = self.second.forward(&mid, side2 * side2, mode)?;
        let rates = time_average(&y2);
        let sites = side2 * side2;
        let feature = (0..c.widths[1])
            .map(|ch| rates[ch * sites..(ch + 1) * sites].iter().sum::<f64>() / sites as f64)
            .collect();
        Ok((
            feature,
            DynamicRecord {
                first,
                second,
                steps: input.steps.len(),
            },
        ))
    }

    pub fn backward(
        &self,
        record: &DynamicRecord,
        grad_feature: &[f64],
        opts: BackwardOptions,
        grads: &mut DynamicStream,
    ) -> Result<()> {
        let c = &self.config;
        if grad_feature.len() != c.widths[1] {
            bail!(State, "feature gradient has {} entries, expected {}", grad_feature.len(), c.widths[1]);
        }
        let (side1, side2) = c.pooled_sides()?;
        let sites = side2 * side2;
        let scale = 1.0 / (record.steps * sites) as f64;
        let step_grad: Vec<f64> = grad_feature
            .iter()
            .flat_map(|g| core::iter::repeat_n(g * scale, sites))
            .collect();
        let d_y2 = vec![step_grad; record.steps];
        let d_mid = self.second.backward(&record.second, &d_y2, opts, &mut grads.second)?;
        let d_y1: Vec<Vec<f64>> = d_mid
            .iter()
            .map(|d| avg_pool_backward(d, c.widths[0], side1, c.mid_pool))
            .collect();
        self.first.backward(&record.first, &d_y1, opts, &mut grads.first)?;
        Ok(())
    }
}

impl Parameters for DynamicStream {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.first.visit(&params::join(prefix, "mose1"), f);
        self.second.visit(&params::join(prefix, "mose2"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.first.visit_mut(f);
        self.second.visit_mut(f);
    }
}
