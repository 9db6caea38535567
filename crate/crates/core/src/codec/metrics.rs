//! Pixel-domain distortion metrics.

use super::Image;

/// Peak signal-to-noise ratio in dB on the 0..255 scale.
/// Identical images return `f64::INFINITY` (reported as "inf").
pub fn psnr(a: &Image, b: &Image) -> f64 {
    assert_eq!(a.width(), b.width(), "psnr: dimension mismatch");
    assert_eq!(a.height(), b.height(), "psnr: dimension mismatch");
    let mse: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.pixels().len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    }
}

/// Average absolute pixel difference on the 0..255 scale.
pub fn apd(a: &Image, b: &Image) -> f64 {
    assert_eq!(a.width(), b.width(), "apd: dimension mismatch");
    assert_eq!(a.height(), b.height(), "apd: dimension mismatch");
    a.pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum::<f64>()
        / a.pixels().len() as f64
}
