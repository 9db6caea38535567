//! From-scratch JPEG compression/decompression round trip.
//!
//! Color transform, level shift, per-block DCT, quantization with
//! quality-scaled Annex-K tables, then the inverse chain. Entropy coding
//! is lossless and therefore skipped: the pixel-domain distortion is
//! identical to what a standards-compliant encoder/decoder pair produces
//! for the same tables.

use super::color::{self, YccPlanes};
use super::dct::{dct8x8, idct8x8};
use super::{validate_jpeg_quality, Image, QuantTable, Subsampling};
use crate::error::Result;

/// Standard luminance quantization table (natural order).
pub const ANNEX_K_LUMA: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Standard chrominance quantization table (natural order).
pub const ANNEX_K_CHROMA: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Scale a base table by the conventional quality law:
/// scale = 5000/q below 50, otherwise 200 - 2q, with entries clamped
/// to [1, 255].
pub fn build_quant_table(base: &QuantTable, quality: u8) -> Result<QuantTable> {
    validate_jpeg_quality(quality)?;
    let q = quality as f64;
    let scale = if quality < 50 { 5000.0 / q } else { 200.0 - 2.0 * q };
    let mut entries = [0u16; 64];
    for (e, &b) in entries.iter_mut().zip(base.0.iter()) {
        let v = (b as f64 * scale / 100.0).round();
        *e = v.clamp(1.0, 255.0) as u16;
    }
    QuantTable::new(entries)
}

pub fn luma_table(quality: u8) -> Result<QuantTable> {
    build_quant_table(&QuantTable(ANNEX_K_LUMA), quality)
}

pub fn chroma_table(quality: u8) -> Result<QuantTable> {
    build_quant_table(&QuantTable(ANNEX_K_CHROMA), quality)
}

/// round(c / t), half away from zero.
pub fn quantize(coeff: f64, divisor: u16) -> i32 {
    (coeff / divisor as f64).round() as i32
}

/// q * t.
pub fn dequantize(q: i32, divisor: u16) -> f64 {
    q as f64 * divisor as f64
}

/// Quantize-dequantize one 8x8 coefficient block in place.
fn requantize_block(coeffs: &mut [f64; 64], table: &QuantTable) {
    for (c, &t) in coeffs.iter_mut().zip(table.0.iter()) {
        *c = dequantize(quantize(*c, t), t);
    }
}

/// DCT -> quantize -> dequantize -> IDCT over every 8x8 tile of a plane
/// whose dimensions are multiples of 8. Values are level-shifted by -128
/// around the transform.
fn requantize_plane(plane: &mut [f64], w: usize, h: usize, table: &QuantTable) {
    debug_assert!(w % 8 == 0 && h % 8 == 0);
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            let mut block = [0.0f64; 64];
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = plane[(by + y) * w + bx + x] - 128.0;
                }
            }
            let mut coeffs = dct8x8(&block);
            requantize_block(&mut coeffs, table);
            let back = idct8x8(&coeffs);
            for y in 0..8 {
                for x in 0..8 {
                    plane[(by + y) * w + bx + x] = back[y * 8 + x] + 128.0;
                }
            }
        }
    }
}

/// Pad a plane to multiple-of-8 dimensions by edge replication.
fn pad_plane(src: &[f64], w: usize, h: usize, pw: usize, ph: usize) -> Vec<f64> {
    let mut out = vec![0.0; pw * ph];
    for y in 0..ph {
        let sy = y.min(h - 1);
        for x in 0..pw {
            let sx = x.min(w - 1);
            out[y * pw + x] = src[sy * w + sx];
        }
    }
    out
}

fn crop_plane(src: &[f64], pw: usize, w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        out[y * w..(y + 1) * w].copy_from_slice(&src[y * pw..y * pw + w]);
    }
    out
}

/// 2x2 box average, producing a half-resolution plane (input dimensions
/// must be even).
fn downsample_2x2(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let (hw, hh) = (w / 2, h / 2);
    let mut out = vec![0.0; hw * hh];
    for y in 0..hh {
        for x in 0..hw {
            let base = 2 * y * w + 2 * x;
            out[y * hw + x] = 0.25 * (src[base] + src[base + 1] + src[base + w] + src[base + w + 1]);
        }
    }
    out
}

/// Nearest (replicate) upsample back to full resolution.
fn upsample_2x2(src: &[f64], hw: usize, hh: usize) -> Vec<f64> {
    let (w, h) = (hw * 2, hh * 2);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = src[(y / 2) * hw + x / 2];
        }
    }
    out
}

/// Full JPEG compression/decompression round trip at 4:4:4.
pub fn jpeg_roundtrip(img: &Image, quality: u8) -> Result<Image> {
    jpeg_roundtrip_sub(img, quality, Subsampling::S444)
}

/// Round trip with an explicit chroma subsampling mode.
pub fn jpeg_roundtrip_sub(img: &Image, quality: u8, subsampling: Subsampling) -> Result<Image> {
    let lt = luma_table(quality)?;
    let ct = chroma_table(quality)?;
    let (w, h) = (img.width(), img.height());
    let planes = color::rgb_to_ycbcr(img);

    // Pad so every processed plane tiles into 8x8 blocks; 4:2:0 needs a
    // multiple of 16 so the half-resolution chroma is a multiple of 8.
    let unit = match subsampling {
        Subsampling::S444 => 8,
        Subsampling::S420 => 16,
    };
    let pw = w.div_ceil(unit) * unit;
    let ph = h.div_ceil(unit) * unit;

    let mut y = pad_plane(&planes.y, w, h, pw, ph);
    let mut cb = pad_plane(&planes.cb, w, h, pw, ph);
    let mut cr = pad_plane(&planes.cr, w, h, pw, ph);

    requantize_plane(&mut y, pw, ph, &lt);
    match subsampling {
        Subsampling::S444 => {
            requantize_plane(&mut cb, pw, ph, &ct);
            requantize_plane(&mut cr, pw, ph, &ct);
        }
        Subsampling::S420 => {
            let (hw, hh) = (pw / 2, ph / 2);
            for plane in [&mut cb, &mut cr] {
                let mut half = downsample_2x2(plane, pw, ph);
                requantize_plane(&mut half, hw, hh, &ct);
                *plane = upsample_2x2(&half, hw, hh);
            }
        }
    }

    let out = YccPlanes {
        width: w,
        height: h,
        y: crop_plane(&y, pw, w, h),
        cb: crop_plane(&cb, pw, w, h),
        cr: crop_plane(&cr, pw, w, h),
    };
    Ok(color::ycbcr_to_rgb(&out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::metrics::psnr;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn quality_50_is_the_base_table() {
        let base = QuantTable(ANNEX_K_LUMA);
        let scaled = build_quant_table(&base, 50).unwrap();
        assert_eq!(scaled, base);
    }

    #[test]
    fn quality_100_clamps_to_ones() {
        let base = QuantTable(ANNEX_K_LUMA);
        let scaled = build_quant_table(&base, 100).unwrap();
        assert!(scaled.0.iter().all(|&e| e == 1));
    }

    #[test]
    fn quality_10_scales_by_five() {
        let base = QuantTable(ANNEX_K_LUMA);
        let scaled = build_quant_table(&base, 10).unwrap();
        assert_eq!(base.get(0, 0), 16);
        assert_eq!(scaled.get(0, 0), 80);
    }

    #[test]
    fn quality_out_of_range_is_rejected() {
        let base = QuantTable(ANNEX_K_LUMA);
        assert!(build_quant_table(&base, 0).is_err());
        assert!(build_quant_table(&base, 101).is_err());
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(0.0, 10), 0);
        assert_eq!(dequantize(quantize(0.0, 10), 10), 0.0);
        assert_eq!(quantize(25.0, 10), 3);
        assert_eq!(dequantize(3, 10), 30.0);
        // Half away from zero.
        assert_eq!(quantize(25.0, 10), 3);
        assert_eq!(quantize(-25.0, 10), -3);
    }

    #[test]
    fn requantization_error_bounded_by_half_divisor() {
        let mut rng = ChaCha12Rng::seed_from_u64(4242);
        for _ in 0..10_000 {
            let c = rng.gen_range(-1024.0..1024.0);
            let t = rng.gen_range(1u16..=255);
            let back = dequantize(quantize(c, t), t);
            assert!((back - c).abs() <= t as f64 / 2.0 + 1e-9);
        }
    }

    #[test]
    fn constant_gray_survives_quality_100_exactly() {
        for level in [0u8, 1, 64, 128, 200, 255] {
            let img = Image::filled(24, 16, [level, level, level]);
            let out = jpeg_roundtrip(&img, 100).unwrap();
            assert_eq!(img, out, "gray level {level}");
        }
    }

    #[test]
    fn high_quality_beats_low_quality() {
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        // Smooth random image: random DC per 8x8 region, mild noise.
        let (w, h) = (32, 32);
        let mut pixels = vec![0u8; w * h * 3];
        for by in 0..h / 8 {
            for bx in 0..w / 8 {
                let base: [i32; 3] = [
                    rng.gen_range(40..216),
                    rng.gen_range(40..216),
                    rng.gen_range(40..216),
                ];
                for y in 0..8 {
                    for x in 0..8 {
                        let i = (((by * 8 + y) * w) + bx * 8 + x) * 3;
                        for ch in 0..3 {
                            let v = base[ch] + rng.gen_range(-12..=12);
                            pixels[i + ch] = v.clamp(0, 255) as u8;
                        }
                    }
                }
            }
        }
        let img = Image::new(w, h, pixels).unwrap();
        let q100 = jpeg_roundtrip(&img, 100).unwrap();
        let q10 = jpeg_roundtrip(&img, 10).unwrap();
        assert!(psnr(&img, &q100) > psnr(&img, &q10));
    }

    #[test]
    fn non_multiple_of_8_sizes_roundtrip() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for (w, h) in [(13, 9), (17, 24), (8, 8), (30, 30)] {
            let pixels: Vec<u8> = (0..w * h * 3).map(|_| rng.gen()).collect();
            let img = Image::new(w, h, pixels).unwrap();
            for sub in [Subsampling::S444, Subsampling::S420] {
                let out = jpeg_roundtrip_sub(&img, 50, sub).unwrap();
                assert_eq!(out.width(), w);
                assert_eq!(out.height(), h);
            }
        }
    }

    #[test]
    fn output_pixels_stay_in_range() {
        // Extreme image exercises clamping on both ends.
        let mut pixels = Vec::new();
        for i in 0..16 * 16 {
            if i % 2 == 0 {
                pixels.extend_from_slice(&[255, 0, 255]);
            } else {
                pixels.extend_from_slice(&[0, 255, 0]);
            }
        }
        let img = Image::new(16, 16, pixels).unwrap();
        let out = jpeg_roundtrip(&img, 10).unwrap();
        assert_eq!(out.pixels().len(), 16 * 16 * 3);
        // u8 storage already enforces the range; dimensions must hold.
        assert_eq!(out.width(), 16);
        assert_eq!(out.height(), 16);
    }
}
