//! Full-range BT.601 color transform between RGB and YCbCr.

use super::Image;

const KR: f64 = 0.299;
const KB: f64 = 0.114;
const KG: f64 = 1.0 - KR - KB;

/// One real-valued plane per channel: Y, Cb, Cr in 0..255 scale.
#[derive(Debug, Clone)]
pub struct YccPlanes {
    pub width: usize,
    pub height: usize,
    pub y: Vec<f64>,
    pub cb: Vec<f64>,
    pub cr: Vec<f64>,
}

/// Forward transform for a single pixel.
pub fn rgb_to_ycbcr_px(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let y = KR * r + KG * g + KB * b;
    let cb = 0.5 / (1.0 - KB) * (b - y) + 128.0;
    let cr = 0.5 / (1.0 - KR) * (r - y) + 128.0;
    (y, cb, cr)
}

/// Inverse transform for a single pixel.
pub fn ycbcr_to_rgb_px(y: f64, cb: f64, cr: f64) -> (f64, f64, f64) {
    let r = y + 2.0 * (1.0 - KR) * (cr - 128.0);
    let b = y + 2.0 * (1.0 - KB) * (cb - 128.0);
    let g = (y - KR * r - KB * b) / KG;
    (r, g, b)
}

/// Split an 8-bit image into real-valued YCbCr planes.
pub fn rgb_to_ycbcr(img: &Image) -> YccPlanes {
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    let mut planes = YccPlanes {
        width: w,
        height: h,
        y: vec![0.0; n],
        cb: vec![0.0; n],
        cr: vec![0.0; n],
    };
    for (i, px) in img.pixels().chunks_exact(3).enumerate() {
        let (y, cb, cr) = rgb_to_ycbcr_px(px[0] as f64, px[1] as f64, px[2] as f64);
        planes.y[i] = y;
        planes.cb[i] = cb;
        planes.cr[i] = cr;
    }
    planes
}

/// Reassemble an 8-bit image from real-valued YCbCr planes, rounding
/// half away from zero and clamping to [0, 255].
pub fn ycbcr_to_rgb(planes: &YccPlanes) -> Image {
    let n = planes.width * planes.height;
    let mut pixels = vec![0u8; n * 3];
    for i in 0..n {
        let (r, g, b) = ycbcr_to_rgb_px(planes.y[i], planes.cb[i], planes.cr[i]);
        pixels[i * 3] = clamp_u8(r);
        pixels[i * 3 + 1] = clamp_u8(g);
        pixels[i * 3 + 2] = clamp_u8(b);
    }
    Image::new(planes.width, planes.height, pixels).expect("same dimensions")
}

pub(crate) fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}
