//! Dense building blocks for the static encoder and the heads: a 3x3
//! convolution with configurable stride, an affine map, and ReLU.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{bail, Result};
use crate::params::{self, Parameters};

/// 3x3 convolution with zero padding 1. Tensors are channel-major
/// `channels x size x size`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    stride: usize,
    /// `out x in x 3 x 3`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, stride: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if stride == 0 {
            bail!(InvalidArgument, "convolution stride must be positive");
        }
        if weights.len() != out_channels * in_channels * 9 || bias.len() != out_channels {
            bail!(
                InvalidArgument,
                "convolution {in_channels}->{out_channels} got {} weights and {} biases",
                weights.len(),
                bias.len()
            );
        }
        Ok(Self {
            in_channels,
            out_channels,
            stride,
            weights,
            bias,
        })
    }

    /// He-style initialization with zero bias.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, in_channels: usize, out_channels: usize, stride: usize) -> Result<Self> {
        let std = crate::math::sqrt(2.0 / (9 * in_channels) as f64);
        let weights = params::gaussian(rng, out_channels * in_channels * 9, std);
        Self::new(in_channels, out_channels, stride, weights, vec![0.0; out_channels])
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn output_size(&self, size: usize) -> usize {
        if size == 0 {
            0
        } else {
            (size - 1) / self.stride + 1
        }
    }

    fn check_input(&self, x: &[f64], size: usize) -> Result<()> {
        if x.len() != self.in_channels * size * size {
            bail!(
                InvalidArgument,
                "convolution expects {}x{size}x{size} input, got {} values",
                self.in_channels,
                x.len()
            );
        }
        Ok(())
    }

    /// Visits every (output row, input row, kernel row) triple that lands
    /// inside the padded input, giving the column ranges to combine.
    fn for_each_tap(&self, size: usize, mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
        let out = self.output_size(size);
        let s = self.stride;
        for oy in 0..out {
            for ky in 0..3 {
                let iy = (oy * s + ky) as isize - 1;
                if iy < 0 || iy >= size as isize {
                    continue;
                }
                for kx in 0..3 {
                    // Output columns whose input column ox*s + kx - 1 is valid.
                    let first = if kx == 0 { 1usize.div_ceil(s) } else { 0 };
                    let last = (size + 1 - kx).div_ceil(s).min(out);
                    if first < last {
                        f(oy, iy as usize, ky, kx, first, last);
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &[f64], size: usize) -> Result<Vec<f64>> {
        self.check_input(x, size)?;
        let out = self.output_size(size);
        let s = self.stride;
        let mut y = vec![0.0; self.out_channels * out * out];
        for o in 0..self.out_channels {
            y[o * out * out..(o + 1) * out * out].fill(self.bias[o]);
        }
        self.for_each_tap(size, |oy, iy, ky, kx, first, last| {
            for o in 0..self.out_channels {
                let row_out = (o * out + oy) * out;
                for i in 0..self.in_channels {
                    let w = self.weights[((o * self.in_channels + i) * 3 + ky) * 3 + kx];
                    let row_in = (i * size + iy) * size;
                    for ox in first..last {
                        y[row_out + ox] += w * x[row_in + ox * s + kx - 1];
                    }
                }
            }
        });
        Ok(y)
    }

    /// Accumulates parameter gradients into `grads` and returns the input
    /// gradient.
    pub fn backward(&self, x: &[f64], size: usize, dy: &[f64], grads: &mut Conv2d) -> Result<Vec<f64>> {
        self.check_input(x, size)?;
        let out = self.output_size(size);
        if dy.len() != self.out_channels * out * out {
            bail!(State, "convolution output gradient has {} values", dy.len());
        }
        let s = self.stride;
        let mut dx = vec![0.0; x.len()];
        for o in 0..self.out_channels {
            grads.bias[o] += dy[o * out * out..(o + 1) * out * out].iter().sum::<f64>();
        }
        self.for_each_tap(size, |oy, iy, ky, kx, first, last| {
            for o in 0..self.out_channels {
                let row_out = (o * out + oy) * out;
                for i in 0..self.in_channels {
                    let widx = ((o * self.in_channels + i) * 3 + ky) * 3 + kx;
                    let w = self.weights[widx];
                    let row_in = (i * size + iy) * size;
                    let mut acc = 0.0;
                    for ox in first..last {
                        let g = dy[row_out + ox];
                        let xi = row_in + ox * s + kx - 1;
                        acc += g * x[xi];
                        dx[xi] += w * g;
                    }
                    grads.weights[widx] += acc;
                }
            }
        });
        Ok(dx)
    }
}

impl Parameters for Conv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(
            &params::join(prefix, "weights"),
            &[self.out_channels, self.in_channels, 3, 3],
            &self.weights,
        );
        f(&params::join(prefix, "bias"), &[self.out_channels], &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(&mut self.weights);
        f(&mut self.bias);
    }
}

/// `y = W x + b` with `W` stored row-major `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    n_in: usize,
    n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn new(n_in: usize, n_out: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != n_in * n_out || bias.len() != n_out {
            bail!(
                InvalidArgument,
                "affine {n_in}->{n_out} got {} weights and {} biases",
                weights.len(),
                bias.len()
            );
        }
        Ok(Self {
            n_in,
            n_out,
            weights,
            bias,
        })
    }

    /// Gaussian weights with standard deviation `gain / sqrt(n_in)`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n_in: usize, n_out: usize, gain: f64) -> Result<Self> {
        let std = gain / crate::math::sqrt(n_in.max(1) as f64);
        Self::new(n_in, n_out, params::gaussian(rng, n_in * n_out, std), vec![0.0; n_out])
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_in {
            bail!(InvalidArgument, "affine expects {} inputs, got {}", self.n_in, x.len());
        }
        Ok(self
            .weights
            .chunks_exact(self.n_in.max(1))
            .take(self.n_out)
            .zip(&self.bias)
            .map(|(row, b)| b + crate::math::dot(row, x))
            .collect())
    }

    pub fn backward(&self, x: &[f64], dy: &[f64], grads: &mut Affine) -> Result<Vec<f64>> {
        if x.len() != self.n_in || dy.len() != self.n_out {
            bail!(State, "affine backward shapes do not match the layer");
        }
        let mut dx = vec![0.0; self.n_in];
        for (o, &g) in dy.iter().enumerate() {
            grads.bias[o] += g;
            let row = &self.weights[o * self.n_in..(o + 1) * self.n_in];
            let grow = &mut grads.weights[o * self.n_in..(o + 1) * self.n_in];
            for i in 0..self.n_in {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        Ok(dx)
    }
}

impl Parameters for Affine {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&params::join(prefix, "weights"), &[self.n_out, self.n_in], &self.weights);
        f(&params::join(prefix, "bias"), &[self.n_out], &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(&mut self.weights);
        f(&mut self.bias);
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Gradient through ReLU given the activation it produced.
pub fn relu_backward(activation: &[f64], dy: &[f64]) -> Vec<f64> {
    activation
        .iter()
        .zip(dy)
        .map(|(&a, &g)| if a > 0.0 { g } else { 0.0 })
        .collect()
}

/// Per-channel mean over the `sites` positions of a channel-major tensor.
pub fn channel_mean(x: &[f64], channels: usize, sites: usize) -> Vec<f64> {
    (0..channels)
        .map(|c| x[c * sites..(c + 1) * sites].iter().sum::<f64>() / sites as f64)
        .collect()
}

pub fn channel_mean_backward(dy: &[f64], sites: usize) -> Vec<f64> {
    dy.iter()
        .flat_map(|&g| core::iter::repeat_n(g / sites as f64, sites))
        .collect()
}
