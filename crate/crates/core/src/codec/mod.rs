//! Forward-only lossy codecs: a from-scratch JPEG round trip and a
//! blackbox adapter that shells out to any external compression tool.
//!
//! Everything here is a pure function of its inputs and is never
//! differentiated; the attack layer wraps these codecs with the
//! straight-through construction when they appear inside training.

pub mod color;
pub mod dct;
pub mod external;
pub mod jpeg;
pub mod metrics;

pub use external::run_external_codec;
pub use jpeg::{build_quant_table, jpeg_roundtrip, ANNEX_K_CHROMA, ANNEX_K_LUMA};
pub use metrics::{apd, psnr};

use crate::error::{Error, Result};

/// 8-bit RGB image, row-major, channel-interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height * 3 {
            return Err(Error::BadDimensions {
                op: "Image::new",
                msg: format!(
                    "{}x{} needs {} bytes, got {}",
                    width,
                    height,
                    width * height * 3,
                    pixels.len()
                ),
            });
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        Image {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Planar [3,H,W] real representation in [0,1]. The u8 -> real -> u8
    /// round trip is exact.
    pub fn to_chw<S: crate::tensor::Scalar>(&self) -> Vec<S> {
        let plane = self.width * self.height;
        let mut out = vec![S::zero(); 3 * plane];
        let inv = 1.0 / 255.0;
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for ch in 0..3 {
                out[ch * plane + i] = crate::tensor::sc(px[ch] as f64 * inv);
            }
        }
        out
    }

    /// Quantize planar [3,H,W] values in [0,1] back to an 8-bit image,
    /// rounding half away from zero after scaling by 255.
    pub fn from_chw<S: crate::tensor::Scalar>(
        data: &[S],
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let plane = width * height;
        if data.len() != 3 * plane {
            return Err(Error::BadDimensions {
                op: "Image::from_chw",
                msg: format!("expected {} values, got {}", 3 * plane, data.len()),
            });
        }
        let mut pixels = vec![0u8; 3 * plane];
        for i in 0..plane {
            for ch in 0..3 {
                let v = data[ch * plane + i].to_f64().unwrap_or(0.0);
                pixels[i * 3 + ch] = quantize_unit(v);
            }
        }
        Image::new(width, height, pixels)
    }
}

/// Map a [0,1] value to u8, rounding half away from zero.
pub fn quantize_unit(v: f64) -> u8 {
    ((v * 255.0).round()).clamp(0.0, 255.0) as u8
}

/// 8x8 quantization divisors in natural (row-major) order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantTable(pub [u16; 64]);

impl QuantTable {
    pub fn new(entries: [u16; 64]) -> Result<Self> {
        if entries.iter().any(|&e| e == 0 || e > 255) {
            return Err(Error::BadDimensions {
                op: "QuantTable::new",
                msg: "entries must lie in [1, 255]".into(),
            });
        }
        Ok(QuantTable(entries))
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.0[row * 8 + col]
    }
}

/// Chroma storage resolution for the internal JPEG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Subsampling {
    /// Full-resolution chroma.
    #[default]
    S444,
    /// 2x2 box-averaged chroma, replicated back up on decode.
    S420,
}

/// Description of one true codec invocation.
#[derive(Debug, Clone, PartialEq)]
pub enum CodecSpec {
    /// The built-in JPEG round trip.
    InternalJpeg {
        quality: u8,
        subsampling: Subsampling,
    },
    /// An external command. `{input}`, `{output}` and `{quality}` in the
    /// template are substituted before the command runs under `sh -c`.
    /// The interchange files are lossless PNG.
    External { command: String, quality: i64 },
}

impl CodecSpec {
    pub fn internal_jpeg(quality: u8) -> Result<Self> {
        validate_jpeg_quality(quality)?;
        Ok(CodecSpec::InternalJpeg {
            quality,
            subsampling: Subsampling::S444,
        })
    }

    pub fn internal_jpeg_420(quality: u8) -> Result<Self> {
        validate_jpeg_quality(quality)?;
        Ok(CodecSpec::InternalJpeg {
            quality,
            subsampling: Subsampling::S420,
        })
    }

    pub fn external(command: impl Into<String>, quality: i64) -> Self {
        CodecSpec::External {
            command: command.into(),
            quality,
        }
    }

    /// Run the codec's forward pass. Output dimensions always match the
    /// input; anything else is an error.
    pub fn apply(&self, img: &Image) -> Result<Image> {
        match self {
            CodecSpec::InternalJpeg {
                quality,
                subsampling,
            } => jpeg::jpeg_roundtrip_sub(img, *quality, *subsampling),
            CodecSpec::External { command, quality } => {
                run_external_codec(img, command, *quality)
            }
        }
    }

    /// Short label for report rows.
    pub fn label(&self) -> String {
        match self {
            CodecSpec::InternalJpeg {
                quality,
                subsampling: Subsampling::S444,
            } => format!("jpeg:{quality}"),
            CodecSpec::InternalJpeg {
                quality,
                subsampling: Subsampling::S420,
            } => format!("jpeg420:{quality}"),
            CodecSpec::External { quality, .. } => format!("ext:{quality}"),
        }
    }
}

pub(crate) fn validate_jpeg_quality(quality: u8) -> Result<()> {
    if !(1..=100).contains(&quality) {
        return Err(Error::QualityOutOfRange {
            quality: quality as i64,
            min: 1,
            max: 100,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn u8_real_u8_roundtrip_is_exact() {
        let pixels: Vec<u8> = (0..=255u16)
            .flat_map(|v| [v as u8, (255 - v) as u8, (v / 2) as u8])
            .collect();
        let img = Image::new(16, 16, pixels).unwrap();
        let chw: Vec<f32> = img.to_chw();
        let back = Image::from_chw(&chw, 16, 16).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn quant_table_rejects_zero_entries() {
        let mut entries = [1u16; 64];
        entries[10] = 0;
        assert!(QuantTable::new(entries).is_err());
    }

    #[test]
    fn image_dimension_validation() {
        assert!(Image::new(2, 2, vec![0; 11]).is_err());
        assert!(Image::new(0, 2, vec![]).is_err());
    }
}
