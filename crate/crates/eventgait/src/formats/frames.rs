//! Frame directories: grayscale PGM files (8 or 16 bit) whose names are
//! zero-padded frame indices, plus `timestamps.txt` with one integer
//! microsecond timestamp per line. Intensities are scaled to `[0, 1]`.

use std::path::{Path, PathBuf};

use eventgait_core::sim::FrameSequence;
use image::{DynamicImage, GrayImage, ImageFormat};

use crate::error::{read_file, Error, Result};

pub const TIMESTAMPS: &str = "timestamps.txt";

fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy();
            let index: u64 = stem
                .parse()
                .map_err(|_| Error::Data(format!("frame file name '{}' is not an index", path.display())))?;
            files.push((index, path));
        }
    }
    files.sort();
    if let Some(w) = files.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Data(format!("duplicate frame index {}", w[0].0)));
    }
    Ok(files.into_iter().map(|(_, p)| p).collect())
}

fn read_timestamps(path: &Path) -> Result<Vec<f64>> {
    let text = String::from_utf8(read_file(path)?).map_err(|_| Error::Data(format!("{} is not UTF-8", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<u64>()
                .map(|t| t as f64)
                .map_err(|_| Error::Data(format!("{} line {}: '{l}' is not a timestamp", path.display(), i + 1)))
        })
        .collect()
}

fn read_pgm(path: &Path) -> Result<(u32, u32, Vec<f64>)> {
    let bytes = read_file(path)?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Pnm)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width(), img.height());
    let data = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect(),
        DynamicImage::ImageLuma16(g) => g.into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect(),
        _ => return Err(Error::Data(format!("{}: not a grayscale image", path.display()))),
    };
    Ok((w, h, data))
}

pub fn read_dir(dir: &Path) -> Result<FrameSequence> {
    let files = frame_files(dir)?;
    if files.is_empty() {
        return Err(Error::Data(format!("no PGM frames in {}", dir.display())));
    }
    let timestamps = read_timestamps(&dir.join(TIMESTAMPS))?;
    if timestamps.len() != files.len() {
        return Err(Error::Data(format!(
            "{} frames but {} timestamps",
            files.len(),
            timestamps.len()
        )));
    }
    let mut size = None;
    let mut data = Vec::new();
    for path in &files {
        let (w, h, pixels) = read_pgm(path)?;
        if *size.get_or_insert((w, h)) != (w, h) {
            return Err(Error::Data(format!("{} is {w}x{h}, earlier frames differ", path.display())));
        }
        data.extend(pixels);
    }
    let (w, h) = size.expect("at least one frame");
    FrameSequence::new(w as usize, h as usize, timestamps, data)
        .map_err(|e| Error::Data(format!("{}: {e}", dir.display())))
}

/// Writes 8-bit frames `000000.pgm, 000001.pgm, ...` and the timestamp file.
/// Values are clamped to `[0, 1]` and rounded.
pub fn write_dir(dir: &Path, frames: &FrameSequence) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for i in 0..frames.len() {
        let pixels = frames.frame(i).iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        let img = GrayImage::from_raw(frames.width() as u32, frames.height() as u32, pixels).expect("frame size");
        let path = dir.join(format!("{i:06}.pgm"));
        img.save_with_format(&path, ImageFormat::Pnm).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    let stamps: String = frames.timestamps().iter().map(|t| format!("{}\n", t.round() as u64)).collect();
    crate::error::write_file(&dir.join(TIMESTAMPS), stamps.as_bytes())
}
