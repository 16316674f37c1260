//! Frame-to-event synthesis in the style of v2e: log intensity, temporal
//! upsampling, a single-pole photoreceptor low-pass, threshold crossings and
//! Poisson background noise.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{bail, Result};
use crate::event::{Event, EventStream, Polarity, Window};
use crate::math;

/// Grayscale intensity frames with microsecond timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    width: usize,
    height: usize,
    timestamps: Vec<f64>,
    data: Vec<f64>,
}

impl FrameSequence {
    /// `data` holds `timestamps.len()` frames of `height * width` pixels back to back.
    pub fn new(width: usize, height: usize, timestamps: Vec<f64>, data: Vec<f64>) -> Result<Self> {
        check_layout(width, height, &timestamps, &data)?;
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            bail!(InvalidArgument, "intensity {} at index {i} is negative or non-finite", data[i]);
        }
        Ok(Self {
            width,
            height,
            timestamps,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[i * n..(i + 1) * n]
    }

    /// Multiplies every intensity by `scale` (global illumination change).
    pub fn scaled(&self, scale: f64) -> Result<Self> {
        Self::new(
            self.width,
            self.height,
            self.timestamps.clone(),
            self.data.iter().map(|v| v * scale).collect(),
        )
    }
}

/// Per-pixel log-intensity samples; same layout as [`FrameSequence`].
#[derive(Debug, Clone, PartialEq)]
pub struct LogSequence {
    pub width: usize,
    pub height: usize,
    pub timestamps: Vec<f64>,
    pub data: Vec<f64>,
}

impl LogSequence {
    pub fn new(width: usize, height: usize, timestamps: Vec<f64>, data: Vec<f64>) -> Result<Self> {
        check_layout(width, height, &timestamps, &data)?;
        Ok(Self {
            width,
            height,
            timestamps,
            data,
        })
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[i * n..(i + 1) * n]
    }

    fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

fn check_layout(width: usize, height: usize, timestamps: &[f64], data: &[f64]) -> Result<()> {
    if timestamps.len() < 2 {
        bail!(InvalidArgument, "need at least two frames, got {}", timestamps.len());
    }
    if width == 0 || height == 0 || width > u16::MAX as usize || height > u16::MAX as usize {
        bail!(InvalidArgument, "unsupported frame size {width}x{height}");
    }
    if data.len() != timestamps.len() * width * height {
        bail!(
            InvalidArgument,
            "{} samples do not form {} frames of {width}x{height}",
            data.len(),
            timestamps.len()
        );
    }
    if timestamps[0] < 0.0 || !timestamps[0].is_finite() {
        bail!(InvalidArgument, "first timestamp {} is not a valid time", timestamps[0]);
    }
    if let Some(i) = timestamps.windows(2).position(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
        bail!(InvalidArgument, "timestamps not strictly increasing at frame {}", i + 1);
    }
    Ok(())
}

/// Simulator knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Log-intensity contrast threshold `c`.
    pub threshold_c: f64,
    /// Photoreceptor low-pass cutoff; 0 disables the filter.
    pub cutoff_hz: f64,
    /// Per-pixel background event rate; 0 disables noise.
    pub noise_rate_hz: f64,
    /// Dead time after an emitted event.
    pub refractory_us: f64,
    pub interp_factor: usize,
    pub log_eps: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            threshold_c: 0.2,
            cutoff_hz: 300.0,
            noise_rate_hz: 1.0,
            refractory_us: 100.0,
            interp_factor: 4,
            log_eps: 1e-3,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_c > 0.0) {
            bail!(InvalidArgument, "threshold_c must be positive");
        }
        if self.interp_factor == 0 {
            bail!(InvalidArgument, "interp_factor must be at least 1");
        }
        if !(self.log_eps > 0.0) {
            bail!(InvalidArgument, "log_eps must be positive");
        }
        if !(self.cutoff_hz >= 0.0) || !(self.noise_rate_hz >= 0.0) || !(self.refractory_us >= 0.0)
        {
            bail!(InvalidArgument, "cutoff, noise rate and refractory period must be >= 0");
        }
        Ok(())
    }
}

/// Element-wise `ln(I + eps)`.
pub fn log_intensity(frame: &[f64], log_eps: f64) -> Result<Vec<f64>> {
    if let Some(i) = frame.iter().position(|v| *v < 0.0) {
        bail!(InvalidArgument, "negative intensity {} at pixel {i}", frame[i]);
    }
    Ok(frame.iter().map(|&v| math::ln(v + log_eps)).collect())
}

pub fn log_sequence(seq: &FrameSequence, log_eps: f64) -> Result<LogSequence> {
    LogSequence::new(
        seq.width,
        seq.height,
        seq.timestamps.clone(),
        log_intensity(&seq.data, log_eps)?,
    )
}

/// Inserts `factor - 1` samples between each adjacent pair, linear in both
/// value and time.
pub fn interpolate_log(seq: &LogSequence, factor: usize) -> Result<LogSequence> {
    if factor == 0 {
        bail!(InvalidArgument, "interpolation factor must be at least 1");
    }
    if factor == 1 {
        return Ok(seq.clone());
    }
    let n = seq.pixel_count();
    let frames = seq.timestamps.len();
    let out_frames = (frames - 1) * factor + 1;
    let mut timestamps = Vec::with_capacity(out_frames);
    let mut data = Vec::with_capacity(out_frames * n);
    for i in 0..frames - 1 {
        let (a, b) = (seq.frame(i), seq.frame(i + 1));
        let (ta, tb) = (seq.timestamps[i], seq.timestamps[i + 1]);
        for j in 0..factor {
            let s = j as f64 / factor as f64;
            timestamps.push(ta + (tb - ta) * s);
            data.extend(a.iter().zip(b).map(|(&x, &y)| x + (y - x) * s));
        }
    }
    timestamps.push(seq.timestamps[frames - 1]);
    data.extend_from_slice(seq.frame(frames - 1));
    LogSequence::new(seq.width, seq.height, timestamps, data)
}

/// Intensity-domain wrapper around [`interpolate_log`]: inserted frames are
/// `exp(l) - log_eps`, so their log intensity lies on the interpolated line.
pub fn interpolate_frames(seq: &FrameSequence, factor: usize, log_eps: f64) -> Result<FrameSequence> {
    if factor == 1 {
        return Ok(seq.clone());
    }
    let logs = interpolate_log(&log_sequence(seq, log_eps)?, factor)?;
    let data = logs
        .data
        .iter()
        .map(|&l| (math::exp(l) - log_eps).max(0.0))
        .collect();
    FrameSequence::new(seq.width, seq.height, logs.timestamps, data)
}

/// Per-pixel first-order IIR `y_n = y_{n-1} + a (x_n - y_{n-1})` with
/// `a = dt / (dt + 1 / (2 pi f_c))`; the state starts at the first sample.
pub fn lowpass_filter(seq: &LogSequence, cutoff_hz: f64) -> LogSequence {
    if cutoff_hz <= 0.0 {
        return seq.clone();
    }
    let n = seq.pixel_count();
    let rc = 1.0 / (2.0 * core::f64::consts::PI * cutoff_hz);
    let mut out = seq.clone();
    for i in 1..seq.timestamps.len() {
        let dt = (seq.timestamps[i] - seq.timestamps[i - 1]) * 1e-6;
        let a = dt / (dt + rc);
        let (prev, cur) = out.data.split_at_mut(i * n);
        let prev = &prev[(i - 1) * n..];
        for (y, &p) in cur[..n].iter_mut().zip(prev) {
            *y = p + a * (*y - p);
        }
    }
    out
}

/// Threshold-crossing event generation over a (filtered) log sequence.
///
/// Between samples the signal is linear in time. Reference levels are kept as
/// `l0 + n * c` for integer `n` so repeated crossings do not drift. Crossings
/// within `refractory_us` of the pixel's last emitted event are dropped but
/// still move the reference level.
pub fn emit_crossings(seq: &LogSequence, threshold_c: f64, refractory_us: f64) -> Result<EventStream> {
    if !(threshold_c > 0.0) {
        bail!(InvalidArgument, "threshold_c must be positive");
    }
    let window = stream_window(&seq.timestamps);
    let (w, h) = (seq.width, seq.height);
    let n = w * h;
    let frames = seq.timestamps.len();
    let mut events = Vec::new();
    for pix in 0..n {
        let (x, y) = ((pix % w) as u16, (pix / w) as u16);
        let base = seq.data[pix];
        let mut level: i64 = 0;
        let mut last_emit: Option<f64> = None;
        for i in 1..frames {
            let a = seq.data[(i - 1) * n + pix];
            let b = seq.data[i * n + pix];
            let (t0, t1) = (seq.timestamps[i - 1], seq.timestamps[i]);
            let step: i64 = if b > a {
                1
            } else if b < a {
                -1
            } else {
                continue;
            };
            loop {
                let next = base + (level + step) as f64 * threshold_c;
                let crossed = if step > 0 { b >= next } else { b <= next };
                if !crossed {
                    break;
                }
                level += step;
                let tc = t0 + (next - a) / (b - a) * (t1 - t0);
                if last_emit.is_some_and(|t| tc - t < refractory_us) {
                    continue;
                }
                last_emit = Some(tc);
                let t = (math::round(tc) as u64).clamp(window.start, window.end());
                let p = if step > 0 { Polarity::On } else { Polarity::Off };
                events.push(Event::new(x, y, t, p));
            }
        }
    }
    EventStream::from_unsorted(w as u16, h as u16, window, events)
}

fn stream_window(timestamps: &[f64]) -> Window {
    let start = math::floor(timestamps[0]) as u64;
    let end = math::ceil(timestamps[timestamps.len() - 1]) as u64;
    Window::new(start, end - start)
}

/// Adds homogeneous Poisson events per pixel. Each pixel draws from its own
/// ChaCha stream keyed by `(seed, y * W + x)`, so the result does not depend
/// on iteration order.
pub fn inject_noise(stream: &EventStream, rate_hz: f64, seed: u64) -> Result<EventStream> {
    if !(rate_hz >= 0.0) {
        bail!(InvalidArgument, "noise rate must be >= 0");
    }
    if rate_hz == 0.0 {
        return Ok(stream.clone());
    }
    let window = stream.window();
    let (w, h) = (stream.width() as usize, stream.height() as usize);
    let mean_gap_us = 1e6 / rate_hz;
    let mut events = stream.events().to_vec();
    for pix in 0..w * h {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(pix as u64);
        let mut t = window.start as f64;
        loop {
            let gap: f64 = Exp1.sample(&mut rng);
            t += gap * mean_gap_us;
            if t > window.end() as f64 {
                break;
            }
            let p = if rng.random_bool(0.5) {
                Polarity::On
            } else {
                Polarity::Off
            };
            let ts = (math::round(t) as u64).min(window.end());
            events.push(Event::new((pix % w) as u16, (pix / w) as u16, ts, p));
        }
    }
    EventStream::from_unsorted(stream.width(), stream.height(), window, events)
}

/// Full pipeline: log, interpolate, low-pass, crossings, noise.
pub fn generate_events(seq: &FrameSequence, cfg: &SimConfig) -> Result<EventStream> {
    cfg.validate()?;
    let logs = log_sequence(seq, cfg.log_eps)?;
    generate_events_from_log(&logs, cfg)
}

/// [`generate_events`] starting from log intensities.
pub fn generate_events_from_log(logs: &LogSequence, cfg: &SimConfig) -> Result<EventStream> {
    cfg.validate()?;
    let upsampled = interpolate_log(logs, cfg.interp_factor)?;
    let filtered = lowpass_filter(&upsampled, cfg.cutoff_hz);
    let clean = emit_crossings(&filtered, cfg.threshold_c, cfg.refractory_us)?;
    inject_noise(&clean, cfg.noise_rate_hz, cfg.seed)
}

/// One-pixel log sequence.
pub fn single_pixel_log(values: &[f64], timestamps: &[f64]) -> Result<LogSequence> {
    LogSequence::new(1, 1, timestamps.to_vec(), values.to_vec())
}

/// A constant frame sequence (handy for tests and dark-scene checks).
pub fn constant_frames(width: usize, height: usize, frames: usize, value: f64, dt_us: f64) -> Result<FrameSequence> {
    FrameSequence::new(
        width,
        height,
        (0..frames).map(|i| i as f64 * dt_us).collect(),
        vec![value; frames * width * height],
    )
}
