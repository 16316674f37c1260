//! Event stream data model, voxelization and spatial pre-processing.

mod spatial;
mod voxel;

pub use spatial::{crop_grid, crop_stream, pad_and_resize, Rect};
pub use voxel::{two_scale_split, voxelize, voxelize_events, TwoScaleSlices, VoxelGrid};

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{bail, Result};

/// Sign of a log-intensity change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    On,
    Off,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::On => 1,
            Polarity::Off => -1,
        }
    }

    pub fn from_sign(sign: i8) -> Option<Self> {
        match sign {
            1 => Some(Polarity::On),
            -1 => Some(Polarity::Off),
            _ => None,
        }
    }

    /// Voxel channel: 0 for positive, 1 for negative events.
    pub fn channel(self) -> usize {
        match self {
            Polarity::On => 0,
            Polarity::Off => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    /// Absolute timestamp in microseconds.
    pub t: u64,
    pub p: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u64, p: Polarity) -> Self {
        Self { x, y, t, p }
    }

    /// Canonical ordering used for deterministic accumulation: (t, y, x, p).
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        (self.t, self.y, self.x, self.p.sign()).cmp(&(other.t, other.y, other.x, other.p.sign()))
    }
}

/// Closed exposure window `[start, start + len]` in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: u64,
    pub len: u64,
}

impl Window {
    pub fn new(start: u64, len: u64) -> Self {
        Self { start, len }
    }

    pub fn end(&self) -> u64 {
        self.start + self.len
    }

    pub fn contains(&self, t: u64) -> bool {
        t >= self.start && t <= self.end()
    }
}

/// A time-sorted event stream with its sensor geometry and exposure window.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    width: u16,
    height: u16,
    window: Window,
    events: Vec<Event>,
}

impl EventStream {
    /// Builds a stream, checking ordering, coordinates and window membership.
    pub fn new(width: u16, height: u16, window: Window, events: Vec<Event>) -> Result<Self> {
        validate_events(&events, width, height, window)?;
        Ok(Self {
            width,
            height,
            window,
            events,
        })
    }

    /// Sorts by (t, y, x, p) before validating.
    pub fn from_unsorted(
        width: u16,
        height: u16,
        window: Window,
        mut events: Vec<Event>,
    ) -> Result<Self> {
        events.sort_by(Event::canonical_cmp);
        Self::new(width, height, window, events)
    }

    pub fn empty(width: u16, height: u16, window: Window) -> Self {
        Self {
            width,
            height,
            window,
            events: Vec::new(),
        }
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events of one polarity, in stream order.
    pub fn with_polarity(&self, p: Polarity) -> impl Iterator<Item = &Event> + '_ {
        self.events.iter().filter(move |e| e.p == p)
    }
}

pub(crate) fn validate_events(
    events: &[Event],
    width: u16,
    height: u16,
    window: Window,
) -> Result<()> {
    let mut prev_t = None;
    for (i, e) in events.iter().enumerate() {
        if e.x >= width || e.y >= height {
            bail!(
                InvalidStream,
                "event {i} at ({}, {}) outside {width}x{height} sensor",
                e.x,
                e.y
            );
        }
        if !window.contains(e.t) {
            bail!(
                InvalidStream,
                "event {i} at t={} outside window [{}, {}]",
                e.t,
                window.start,
                window.end()
            );
        }
        if let Some(p) = prev_t {
            if e.t < p {
                bail!(InvalidStream, "event {i} has t={} < previous t={p}", e.t);
            }
        }
        prev_t = Some(e.t);
    }
    Ok(())
}
