//! Procedural walking figures: a translating torso (with an optional head)
//! and two legs swinging with identity-specific frequency, phase, and
//! amplitude.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Result};
use crate::event::Rect;
use crate::math;
use crate::sim::FrameSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyGaitConfig {
    pub n_identities: usize,
    pub sequences_per_identity: usize,
    pub frames_per_sequence: usize,
    pub frame_size: usize,
    pub fps: f64,
    /// Seeds the identity latents.
    pub seed: u64,
    /// Seeds per-sequence nuisance (start position, speed, small jitter).
    /// Different values give new recordings of the same identities.
    pub nuisance_seed: u64,
    /// Global intensity multiplier emulating the illumination level.
    pub brightness: f64,
    pub background: f64,
    pub foreground: f64,
    pub with_head: bool,
    pub latent_ranges: LatentRanges,
    pub nuisance_ranges: NuisanceRanges,
}

impl Default for ToyGaitConfig {
    fn default() -> Self {
        Self {
            n_identities: 8,
            sequences_per_identity: 6,
            frames_per_sequence: 32,
            frame_size: 64,
            fps: 25.0,
            seed: 0,
            nuisance_seed: 1,
            brightness: 1.0,
            background: 0.2,
            foreground: 1.0,
            with_head: true,
            latent_ranges: LatentRanges::default(),
            nuisance_ranges: NuisanceRanges::default(),
        }
    }
}

impl ToyGaitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities < 2 {
            bail!(InvalidArgument, "need at least two identities");
        }
        if self.frames_per_sequence < 8 {
            bail!(InvalidArgument, "need at least 8 frames per sequence");
        }
        if self.frame_size < 32 {
            bail!(InvalidArgument, "frame size {} too small for the figure", self.frame_size);
        }
        if !(self.fps > 0.0) || !(self.brightness >= 0.0) {
            bail!(InvalidArgument, "fps must be positive and brightness non-negative");
        }
        Ok(())
    }
}

/// Closed intervals the identity latents are drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentRanges {
    pub frequency_hz: (f64, f64),
    pub phase: (f64, f64),
    pub amplitude: (f64, f64),
    pub body_width: (f64, f64),
}

impl Default for LatentRanges {
    fn default() -> Self {
        Self {
            frequency_hz: (0.8, 2.4),
            phase: (0.0, core::f64::consts::TAU),
            amplitude: (0.15, 0.6),
            body_width: (6.0, 16.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityLatent {
    pub frequency_hz: f64,
    pub phase: f64,
    /// Peak leg swing angle in radians.
    pub amplitude: f64,
    pub body_width: f64,
}

/// Spread of the per-recording nuisance. Jitters are half-widths of
/// uniform draws centred on zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuisanceRanges {
    /// Walking speed magnitude in pixels per second; direction is random.
    pub speed: (f64, f64),
    pub start_jitter: f64,
    pub phase_jitter: f64,
    /// Relative change of the swing amplitude.
    pub amplitude_jitter: f64,
    /// Body width change in pixels (clothing).
    pub width_jitter: f64,
    /// Torso length change in pixels (clothing).
    pub torso_jitter: f64,
}

impl Default for NuisanceRanges {
    fn default() -> Self {
        Self {
            speed: (4.0, 12.0),
            start_jitter: 3.0,
            phase_jitter: 0.3,
            amplitude_jitter: 0.08,
            width_jitter: 0.6,
            torso_jitter: 0.0,
        }
    }
}

/// Per-recording variation that carries no identity information.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nuisance {
    pub start_x: f64,
    /// Horizontal speed in pixels per second.
    pub speed: f64,
    pub phase_jitter: f64,
    pub amplitude_scale: f64,
    pub width_offset: f64,
    pub torso_offset: f64,
}

impl Nuisance {
    pub const NONE: Nuisance = Nuisance {
        start_x: 32.0,
        speed: 0.0,
        phase_jitter: 0.0,
        amplitude_scale: 1.0,
        width_offset: 0.0,
        torso_offset: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySequence {
    pub identity: usize,
    pub sequence: usize,
    pub sample_id: String,
    pub frames: FrameSequence,
    /// Figure extent over the whole sequence, the kind of box a person
    /// detector or silhouette annotation would provide.
    pub bbox: Rect,
    /// Figure extent in the middle frame.
    pub middle_bbox: Rect,
}

impl ToySequence {
    pub fn middle_index(&self) -> usize {
        self.frames.len() / 2
    }

    pub fn middle_frame(&self) -> &[f64] {
        self.frames.frame(self.middle_index())
    }
}

/// Bounding box of the pixels above `background` in the given frames,
/// grown by `margin`. The full frame when nothing rises above it.
pub fn silhouette_bbox(frames: &FrameSequence, indices: impl IntoIterator<Item = usize>, background: f64, margin: i64) -> Rect {
    let (w, h) = (frames.width(), frames.height());
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
    for i in indices {
        for (k, &v) in frames.frame(i).iter().enumerate() {
            if v > background {
                let (x, y) = (k % w, k / w);
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == usize::MAX {
        return Rect::new(0, 0, w as i64, h as i64);
    }
    Rect::new(
        x0 as i64 - margin,
        y0 as i64 - margin,
        (x1 - x0 + 1) as i64 + 2 * margin,
        (y1 - y0 + 1) as i64 + 2 * margin,
    )
}

pub fn sample_id(identity: usize, sequence: usize) -> String {
    format!("id{identity:02}_seq{sequence:02}")
}

/// Stratified draw: each latent axis is cut into `n` strata and every
/// identity lands in a distinct stratum, so identities stay distinguishable.
pub fn identity_latents(n: usize, ranges: &LatentRanges, seed: u64) -> Vec<IdentityLatent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        strata
            .into_iter()
            .map(|s| lo + (hi - lo) * (s as f64 + rng.random_range(0.25..0.75)) / n as f64)
            .collect()
    };
    let f = axis(ranges.frequency_hz);
    let p = axis(ranges.phase);
    let a = axis(ranges.amplitude);
    let w = axis(ranges.body_width);
    (0..n)
        .map(|i| IdentityLatent {
            frequency_hz: f[i],
            phase: p[i],
            amplitude: a[i],
            body_width: w[i],
        })
        .collect()
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..half_width)
    } else {
        0.0
    }
}

/// The start position puts the figure at the image centre half a second in.
pub fn draw_nuisance<R: Rng + ?Sized>(rng: &mut R, ranges: &NuisanceRanges) -> Nuisance {
    let direction = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let (lo, hi) = ranges.speed;
    let speed = direction * if hi > lo { rng.random_range(lo..hi) } else { lo };
    Nuisance {
        start_x: 32.0 - 0.5 * speed + symmetric(rng, ranges.start_jitter),
        speed,
        phase_jitter: symmetric(rng, ranges.phase_jitter),
        amplitude_scale: 1.0 + symmetric(rng, ranges.amplitude_jitter),
        width_offset: symmetric(rng, ranges.width_jitter),
        torso_offset: symmetric(rng, ranges.torso_jitter),
    }
}

fn segment_distance(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (ax + t * dx - px, ay + t * dy - py);
    math::sqrt(cx * cx + cy * cy)
}

/// Pixel coverage from a signed distance (negative inside), with a one-pixel
/// linear ramp for anti-aliasing.
fn coverage(signed_distance: f64) -> f64 {
    (0.5 - signed_distance).clamp(0.0, 1.0)
}

/// Renders one frame at time `t` seconds into `out` (row-major).
pub fn render_frame(
    latent: &IdentityLatent,
    nuisance: &Nuisance,
    cfg: &ToyGaitConfig,
    t: f64,
    out: &mut [f64],
) {
    let size = cfg.frame_size;
    let scale = size as f64 / 64.0;
    let cx = nuisance.start_x * scale + nuisance.speed * scale * t;
    let half_w = 0.5 * (latent.body_width + nuisance.width_offset).max(2.0) * scale;
    let (torso_top, hip_y) = ((14.0 - nuisance.torso_offset) * scale, 34.0 * scale);
    let leg_len = 22.0 * scale;
    let leg_radius = 1.6 * scale;
    let head = (cx, 9.0 * scale, 4.0 * scale);
    let angle = latent.amplitude
        * nuisance.amplitude_scale
        * math::sin(core::f64::consts::TAU * latent.frequency_hz * t + latent.phase + nuisance.phase_jitter);
    let feet = [
        (cx + leg_len * math::sin(angle), hip_y + leg_len * math::cos(angle)),
        (cx - leg_len * math::sin(angle), hip_y + leg_len * math::cos(angle)),
    ];
    let level = |c: f64| cfg.brightness * (cfg.background + (cfg.foreground - cfg.background) * c);
    for y in 0..size {
        let py = y as f64 + 0.5;
        for x in 0..size {
            let px = x as f64 + 0.5;
            // Rectangle signed distance.
            let qx = math::abs(px - cx) - half_w;
            let qy = math::abs(py - 0.5 * (torso_top + hip_y)) - 0.5 * (hip_y - torso_top);
            let outside = math::sqrt(qx.max(0.0) * qx.max(0.0) + qy.max(0.0) * qy.max(0.0));
            let mut c = coverage(outside + qx.max(qy).min(0.0));
            for (fx, fy) in feet {
                c = c.max(coverage(segment_distance(px, py, cx, hip_y, fx, fy) - leg_radius));
            }
            if cfg.with_head {
                let d = math::sqrt((px - head.0) * (px - head.0) + (py - head.1) * (py - head.1)) - head.2;
                c = c.max(coverage(d));
            }
            out[y * size + x] = level(c);
        }
    }
}

pub fn render_sequence(latent: &IdentityLatent, nuisance: &Nuisance, cfg: &ToyGaitConfig) -> Result<FrameSequence> {
    let n = cfg.frame_size * cfg.frame_size;
    let mut data = alloc::vec![0.0; cfg.frames_per_sequence * n];
    let mut timestamps = Vec::with_capacity(cfg.frames_per_sequence);
    for (i, frame) in data.chunks_exact_mut(n).enumerate() {
        let t = i as f64 / cfg.fps;
        render_frame(latent, nuisance, cfg, t, frame);
        timestamps.push(math::round(t * 1e6));
    }
    FrameSequence::new(cfg.frame_size, cfg.frame_size, timestamps, data)
}

/// All sequences, identity-major. Deterministic in the config.
pub fn generate_toy_dataset(cfg: &ToyGaitConfig) -> Result<Vec<ToySequence>> {
    cfg.validate()?;
    let latents = identity_latents(cfg.n_identities, &cfg.latent_ranges, cfg.seed);
    let mut out = Vec::with_capacity(cfg.n_identities * cfg.sequences_per_identity);
    for (identity, latent) in latents.iter().enumerate() {
        for sequence in 0..cfg.sequences_per_identity {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.nuisance_seed);
            rng.set_stream(((identity as u64) << 32) | sequence as u64);
            let nuisance = draw_nuisance(&mut rng, &cfg.nuisance_ranges);
            let frames = render_sequence(latent, &nuisance, cfg)?;
            let floor = cfg.brightness * cfg.background + 1e-9;
            let bbox = silhouette_bbox(&frames, 0..frames.len(), floor, 2);
            let middle_bbox = silhouette_bbox(&frames, [frames.len() / 2], floor, 2);
            out.push(ToySequence {
                identity,
                sequence,
                sample_id: sample_id(identity, sequence),
                frames,
                bbox,
                middle_bbox,
            });
        }
    }
    Ok(out)
}
