//! Dataset ingestion: a folder of images, or the deterministic synthetic
//! texture generator so nothing has to be downloaded.

use super::stream_rng;
use crate::codec::Image;
use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use std::path::{Path, PathBuf};

/// Where training images come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSource {
    /// `synth:<count>` deterministic textures.
    Synthetic { count: usize },
    /// Any folder of decodable images.
    Dir(PathBuf),
}

impl DatasetSource {
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("synth:") {
            let count: usize = rest
                .parse()
                .map_err(|_| Error::Config(format!("bad synthetic count `{rest}`")))?;
            if count == 0 {
                return Err(Error::Config("synthetic count must be >= 1".into()));
            }
            return Ok(DatasetSource::Synthetic { count });
        }
        Ok(DatasetSource::Dir(PathBuf::from(s)))
    }
}

/// Loaded images plus the number of unreadable files skipped.
#[derive(Debug)]
pub struct LoadedDataset {
    pub images: Vec<Image>,
    pub skipped: usize,
}

/// Load a dataset, resizing every image to `side` x `side` pixels.
/// Unreadable files are skipped with a warning count; an empty result is
/// an error. The synthetic branch derives everything from `seed`.
pub fn load_dataset(source: &DatasetSource, side: usize, seed: u64) -> Result<LoadedDataset> {
    match source {
        DatasetSource::Synthetic { count } => {
            let images = (0..*count)
                .map(|i| synth_image(side, &mut stream_rng(seed, "synth", i as u64)))
                .collect();
            Ok(LoadedDataset { images, skipped: 0 })
        }
        DatasetSource::Dir(path) => load_dir(path, side),
    }
}

fn load_dir(path: &Path, side: usize) -> Result<LoadedDataset> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::Config(format!("cannot read dataset dir {}: {e}", path.display())))?
        .filter_map(|entry| entry.ok())
        .map(|entry| entry.path())
        .filter(|p| p.is_file())
        .collect();
    files.sort();

    let mut images = Vec::new();
    let mut skipped = 0usize;
    for file in &files {
        match image::open(file) {
            Ok(img) => {
                let resized = img
                    .resize_exact(side as u32, side as u32, image::imageops::FilterType::Triangle)
                    .to_rgb8();
                images.push(Image::new(side, side, resized.into_raw())?);
            }
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", file.display());
                skipped += 1;
            }
        }
    }
    if images.is_empty() {
        return Err(Error::EmptyDataset {
            path: path.display().to_string(),
        });
    }
    Ok(LoadedDataset { images, skipped })
}

/// One deterministic synthetic texture: a few oriented gratings biased
/// toward low frequencies, a soft radial blob, and a linear gradient,
/// shared across channels with mild chroma variation. Smooth enough to
/// compress like a natural photo.
pub fn synth_image(side: usize, rng: &mut ChaCha12Rng) -> Image {
    let n = side * side;
    let mut luma = vec![0.0f64; n];

    let gratings = 5;
    for _ in 0..gratings {
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let wavelength: f64 = rng.gen_range(8.0..side as f64);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let amp: f64 = rng.gen_range(0.04..0.22);
        let (dx, dy) = (angle.cos(), angle.sin());
        let k = std::f64::consts::TAU / wavelength;
        for y in 0..side {
            for x in 0..side {
                let t = (x as f64 * dx + y as f64 * dy) * k + phase;
                luma[y * side + x] += amp * t.cos();
            }
        }
    }

    let cx: f64 = rng.gen_range(0.0..side as f64);
    let cy: f64 = rng.gen_range(0.0..side as f64);
    let radius: f64 = rng.gen_range(side as f64 / 6.0..side as f64 / 2.0);
    let blob_amp: f64 = rng.gen_range(-0.3..0.3);
    for y in 0..side {
        for x in 0..side {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            luma[y * side + x] += blob_amp * (-d2 / (2.0 * radius * radius)).exp();
        }
    }

    let gslope: f64 = rng.gen_range(-0.25..0.25);
    let gangle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (gx, gy) = (gangle.cos(), gangle.sin());
    for y in 0..side {
        for x in 0..side {
            luma[y * side + x] += gslope * (x as f64 * gx + y as f64 * gy) / side as f64;
        }
    }

    // Per-channel tint gratings around a random base color.
    let base: [f64; 3] = [
        rng.gen_range(0.3..0.7),
        rng.gen_range(0.3..0.7),
        rng.gen_range(0.3..0.7),
    ];
    let mut pixels = vec![0u8; n * 3];
    let mut chroma = [[0.0f64; 2]; 3];
    for c in chroma.iter_mut() {
        c[0] = rng.gen_range(0.0..std::f64::consts::TAU);
        c[1] = rng.gen_range(8.0..side as f64);
    }
    for y in 0..side {
        for x in 0..side {
            let l = luma[y * side + x];
            for ch in 0..3 {
                let t = (x as f64 + 2.0 * y as f64) * std::f64::consts::TAU / chroma[ch][1]
                    + chroma[ch][0];
                let v = base[ch] + l + 0.06 * t.cos();
                pixels[(y * side + x) * 3 + ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    Image::new(side, side, pixels).expect("square image")
}
