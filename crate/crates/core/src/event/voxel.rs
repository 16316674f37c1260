use alloc::vec;
use alloc::vec::Vec;

use super::{validate_events, Event, EventStream, Window};
use crate::error::{bail, Result};
use crate::math;

/// Dense `2 x K x H x W` accumulation of one exposure window.
///
/// Channel 0 holds positive events, channel 1 negative ones. Entry
/// `(c, k, y, x)` lives at `((c * K + k) * H + y) * W + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    data: Vec<f64>,
    bins: usize,
    height: usize,
    width: usize,
    delta_t: f64,
    origin: u64,
}

impl VoxelGrid {
    pub fn zeros(bins: usize, height: usize, width: usize, delta_t: f64, origin: u64) -> Self {
        Self {
            data: vec![0.0; 2 * bins * height * width],
            bins,
            height,
            width,
            delta_t,
            origin,
        }
    }

    pub fn from_data(
        data: Vec<f64>,
        bins: usize,
        height: usize,
        width: usize,
        delta_t: f64,
        origin: u64,
    ) -> Result<Self> {
        if data.len() != 2 * bins * height * width {
            bail!(
                InvalidArgument,
                "voxel data has {} entries, expected 2x{bins}x{height}x{width}",
                data.len()
            );
        }
        Ok(Self {
            data,
            bins,
            height,
            width,
            delta_t,
            origin,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Bin width in microseconds.
    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }

    pub fn origin(&self) -> u64 {
        self.origin
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Number of `H x W` planes (`2K`).
    pub fn planes(&self) -> usize {
        2 * self.bins
    }

    pub fn index(&self, channel: usize, bin: usize, y: usize, x: usize) -> usize {
        ((channel * self.bins + bin) * self.height + y) * self.width + x
    }

    pub fn get(&self, channel: usize, bin: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(channel, bin, y, x)]
    }

    pub fn plane(&self, plane: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[plane * n..(plane + 1) * n]
    }

    pub fn total_mass(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn channel_mass(&self, channel: usize) -> f64 {
        let n = self.bins * self.height * self.width;
        self.data[channel * n..(channel + 1) * n].iter().sum()
    }
}

/// Short-term slices for the dynamic stream plus one long-term slice for the
/// static stream, both built from the same window.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoScaleSlices {
    pub dynamic: Vec<VoxelGrid>,
    pub static_grid: VoxelGrid,
    pub sub_windows: Vec<Window>,
}

/// Bilinear temporal voxelization with bin centers at `start + (k + 0.5) * dt`.
pub fn voxelize(stream: &EventStream, bins: usize) -> Result<VoxelGrid> {
    voxelize_events(
        stream.events(),
        stream.width() as usize,
        stream.height() as usize,
        stream.window(),
        bins,
    )
}

/// Same as [`voxelize`] over a raw slice; the slice is validated first.
pub fn voxelize_events(
    events: &[Event],
    width: usize,
    height: usize,
    window: Window,
    bins: usize,
) -> Result<VoxelGrid> {
    if bins == 0 {
        bail!(InvalidArgument, "bin count must be at least 1");
    }
    if window.len == 0 {
        bail!(InvalidArgument, "window length must be positive");
    }
    if width > u16::MAX as usize || height > u16::MAX as usize {
        bail!(InvalidArgument, "sensor {width}x{height} too large");
    }
    validate_events(events, width as u16, height as u16, window)?;

    let delta_t = window.len as f64 / bins as f64;
    let mut grid = VoxelGrid::zeros(bins, height, width, delta_t, window.start);
    for e in events {
        let rel = (e.t - window.start) as f64;
        // Only the two bins whose centers bracket `rel` can receive weight.
        let lower = math::floor(rel / delta_t - 0.5);
        for k in [lower, lower + 1.0] {
            if k < 0.0 || k >= bins as f64 {
                continue;
            }
            let center = (k + 0.5) * delta_t;
            let w = 1.0 - math::abs(rel - center) / delta_t;
            if w > 0.0 {
                let idx = grid.index(e.p.channel(), k as usize, e.y as usize, e.x as usize);
                grid.data[idx] += w;
            }
        }
    }
    Ok(grid)
}

/// Splits the window into `num_slices` sub-windows (the last one absorbs the
/// remainder), voxelizes each with `bins_dynamic` bins, and voxelizes the
/// whole window with `bins_static` bins.
///
/// Events belong to half-open sub-windows `[a, b)`; the final sub-window is
/// closed so events at the window end are kept.
pub fn two_scale_split(
    stream: &EventStream,
    num_slices: usize,
    bins_dynamic: usize,
    bins_static: usize,
) -> Result<TwoScaleSlices> {
    if num_slices == 0 {
        bail!(InvalidArgument, "need at least one dynamic slice");
    }
    let window = stream.window();
    if window.len < num_slices as u64 {
        bail!(
            InvalidArgument,
            "window of {} us cannot hold {num_slices} slices",
            window.len
        );
    }
    let base = window.len / num_slices as u64;
    let events = stream.events();
    let width = stream.width() as usize;
    let height = stream.height() as usize;

    let mut dynamic = Vec::with_capacity(num_slices);
    let mut sub_windows = Vec::with_capacity(num_slices);
    let mut cursor = 0;
    for i in 0..num_slices {
        let start = window.start + i as u64 * base;
        let len = if i + 1 == num_slices {
            window.end() - start
        } else {
            base
        };
        let sub = Window::new(start, len);
        let last = i + 1 == num_slices;
        let begin = cursor;
        while cursor < events.len() && (last || events[cursor].t < sub.end()) {
            cursor += 1;
        }
        dynamic.push(voxelize_events(
            &events[begin..cursor],
            width,
            height,
            sub,
            bins_dynamic,
        )?);
        sub_windows.push(sub);
    }
    let static_grid = voxelize(stream, bins_static)?;
    Ok(TwoScaleSlices {
        dynamic,
        static_grid,
        sub_windows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Polarity;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Scalar double loop over every (event, bin) pair.
    fn brute_force(events: &[Event], w: usize, h: usize, window: Window, k: usize) -> Vec<f64> {
        let dt = window.len as f64 / k as f64;
        let mut out = vec![0.0; 2 * k * h * w];
        for e in events {
            for b in 0..k {
                let tk = window.start as f64 + (b as f64 + 0.5) * dt;
                let wgt = 1.0 - (e.t as f64 - tk).abs() / dt;
                let wgt = if wgt > 0.0 { wgt } else { 0.0 };
                let c = if e.p == Polarity::On { 0 } else { 1 };
                out[((c * k + b) * h + e.y as usize) * w + e.x as usize] += wgt;
            }
        }
        out
    }

    fn random_stream(seed: u64, n: usize, window: Window, margin: u64) -> EventStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let events = (0..n)
            .map(|_| {
                Event::new(
                    rng.random_range(0..8),
                    rng.random_range(0..6),
                    rng.random_range(window.start + margin..=window.end() - margin),
                    if rng.random_bool(0.5) {
                        Polarity::On
                    } else {
                        Polarity::Off
                    },
                )
            })
            .collect();
        EventStream::from_unsorted(8, 6, window, events).unwrap()
    }

    #[test]
    fn event_at_bin_center_hits_one_bin() {
        let window = Window::new(1000, 800);
        // K = 8: dt = 100, centers at 1050, 1150, ...
        let s = EventStream::new(4, 4, window, vec![Event::new(1, 2, 1250, Polarity::On)]).unwrap();
        let g = voxelize(&s, 8).unwrap();
        assert_eq!(g.get(0, 2, 2, 1), 1.0);
        assert_eq!(g.get(0, 1, 2, 1), 0.0);
        assert_eq!(g.get(0, 3, 2, 1), 0.0);
        assert_eq!(g.total_mass(), 1.0);
    }

    #[test]
    fn event_between_centers_splits_evenly() {
        let window = Window::new(0, 800);
        let s = EventStream::new(4, 4, window, vec![Event::new(0, 0, 300, Polarity::Off)]).unwrap();
        let g = voxelize(&s, 8).unwrap();
        assert_eq!(g.get(1, 2, 0, 0), 0.5);
        assert_eq!(g.get(1, 3, 0, 0), 0.5);
        assert_eq!(g.channel_mass(0), 0.0);
    }

    #[test]
    fn edge_events_deposit_partial_mass() {
        let window = Window::new(0, 800);
        let s = EventStream::new(2, 2, window, vec![Event::new(0, 0, 0, Polarity::On)]).unwrap();
        let g = voxelize(&s, 8).unwrap();
        assert_eq!(g.total_mass(), 0.5);
    }

    #[test]
    fn matches_brute_force_on_random_stream() {
        let window = Window::new(5_000, 40_000);
        let s = random_stream(7, 100, window, 0);
        let g = voxelize(&s, 8).unwrap();
        let oracle = brute_force(s.events(), 8, 6, window, 8);
        for (a, b) in g.data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9);
        }
        let oracle_mass: f64 = oracle.iter().sum();
        assert!((g.total_mass() - oracle_mass).abs() < 1e-9);
    }

    #[test]
    fn interior_events_conserve_mass() {
        let window = Window::new(0, 80_000);
        let s = random_stream(3, 500, window, 10_000);
        let g = voxelize(&s, 8).unwrap();
        assert!((g.total_mass() - 500.0).abs() < 1e-9);
        let on = s.with_polarity(Polarity::On).count() as f64;
        assert!((g.channel_mass(0) - on).abs() < 1e-9);
    }

    #[test]
    fn rejects_zero_bins_and_bad_events() {
        let window = Window::new(0, 100);
        let s = EventStream::empty(2, 2, window);
        assert!(matches!(voxelize(&s, 0), Err(crate::Error::InvalidArgument(_))));
        let outside = [Event::new(0, 0, 500, Polarity::On)];
        assert!(matches!(
            voxelize_events(&outside, 2, 2, window, 4),
            Err(crate::Error::InvalidStream(_))
        ));
    }

    #[test]
    fn single_slice_split_is_degenerate() {
        let window = Window::new(0, 10_000);
        let s = random_stream(11, 60, window, 0);
        let split = two_scale_split(&s, 1, 6, 6).unwrap();
        assert_eq!(split.dynamic[0].data(), split.static_grid.data());
    }

    #[test]
    fn empty_stream_gives_zero_grids() {
        let s = EventStream::empty(3, 3, Window::new(0, 1000));
        let split = two_scale_split(&s, 4, 2, 8).unwrap();
        assert!(split.dynamic.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
        assert!(split.static_grid.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sub_windows_tile_the_window() {
        let window = Window::new(123, 1001);
        let s = EventStream::empty(1, 1, window);
        let split = two_scale_split(&s, 7, 2, 4).unwrap();
        let mut t = window.start;
        for w in &split.sub_windows {
            assert_eq!(w.start, t);
            t = w.end();
        }
        assert_eq!(t, window.end());
        assert_eq!(split.sub_windows.last().unwrap().len, 1001 - 6 * 143);
    }

    #[test]
    fn dynamic_mass_matches_fine_voxelization() {
        // Holds when no event sits within half a fine bin of an internal
        // sub-window boundary, where the full-window kernel would straddle it.
        let window = Window::new(0, 64_000);
        let (slices, k_dyn) = (4, 4);
        let fine_dt = 64_000.0 / (slices * k_dyn) as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut events = Vec::new();
        while events.len() < 200 {
            let t: u64 = rng.random_range(0..=64_000);
            let near_boundary = (1..slices)
                .any(|i| ((t as f64) - (i as f64 * 16_000.0)).abs() < fine_dt / 2.0);
            if near_boundary {
                continue;
            }
            events.push(Event::new(rng.random_range(0..8), rng.random_range(0..6), t, Polarity::On));
        }
        let s = EventStream::from_unsorted(8, 6, window, events).unwrap();
        let split = two_scale_split(&s, slices, k_dyn, 8).unwrap();
        let dyn_mass: f64 = split.dynamic.iter().map(VoxelGrid::total_mass).sum();
        let fine = voxelize(&s, slices * k_dyn).unwrap();
        assert!((dyn_mass - fine.total_mass()).abs() < 1e-9);
    }

    #[test]
    fn shuffled_input_gives_identical_grid() {
        let window = Window::new(0, 20_000);
        let s = random_stream(5, 300, window, 0);
        let mut shuffled = s.events().to_vec();
        shuffled.reverse();
        let s2 = EventStream::from_unsorted(8, 6, window, shuffled).unwrap();
        assert_eq!(voxelize(&s, 5).unwrap(), voxelize(&s2, 5).unwrap());
    }
}
