//! Blackbox adapter for external compression tools.
//!
//! The image is written losslessly to a temp PNG, the command template is
//! expanded and run under `sh -c`, and the decompressed result is read
//! back. Each invocation uses its own temp directory, so attacks can run
//! concurrently. The external tool is only ever executed forward.

use super::Image;
use crate::error::{Error, Result};
use std::process::Command;

/// Expand `{input}`, `{output}` and `{quality}` in a command template.
pub fn expand_template(template: &str, input: &str, output: &str, quality: i64) -> String {
    template
        .replace("{input}", input)
        .replace("{output}", output)
        .replace("{quality}", &quality.to_string())
}

/// Run one external codec round trip on `img`.
///
/// The command must read the PNG at `{input}` and leave a decodable image
/// of identical dimensions at `{output}`. Failures carry the exit status
/// and captured stderr.
pub fn run_external_codec(img: &Image, template: &str, quality: i64) -> Result<Image> {
    let dir = tempfile::tempdir()?;
    let in_path = dir.path().join("in.png");
    let out_path = dir.path().join("out.png");
    write_png(img, in_path.to_str().expect("utf8 temp path"))?;

    let cmd = expand_template(
        template,
        in_path.to_str().expect("utf8 temp path"),
        out_path.to_str().expect("utf8 temp path"),
        quality,
    );
    let output = Command::new("sh").arg("-c").arg(&cmd).output().map_err(|e| {
        Error::CodecFailed {
            context: format!("could not launch `{cmd}`: {e}"),
        }
    })?;
    if !output.status.success() {
        return Err(Error::CodecFailed {
            context: format!(
                "`{cmd}` exited with {}: {}",
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            ),
        });
    }
    if !out_path.exists() {
        return Err(Error::CodecFailed {
            context: format!("`{cmd}` produced no output file"),
        });
    }

    let result = read_image(out_path.to_str().expect("utf8 temp path"))?;
    if result.width() != img.width() || result.height() != img.height() {
        return Err(Error::CodecDimensionMismatch {
            expected_w: img.width() as u32,
            expected_h: img.height() as u32,
            got_w: result.width() as u32,
            got_h: result.height() as u32,
        });
    }
    Ok(result)
}

/// Write an [`Image`] as PNG (lossless interchange format).
pub fn write_png(img: &Image, path: &str) -> Result<()> {
    let buf = image::RgbImage::from_raw(
        img.width() as u32,
        img.height() as u32,
        img.pixels().to_vec(),
    )
    .expect("pixel buffer matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Decode any supported image file into an RGB [`Image`].
pub fn read_image(path: &str) -> Result<Image> {
    let img = image::open(path)?.to_rgb8();
    Image::new(
        img.width() as usize,
        img.height() as usize,
        img.into_raw(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::metrics::psnr;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn textured_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut pixels = vec![0u8; w * h * 3];
        for y in 0..h {
            for x in 0..w {
                let base = ((x * 255) / w) as i32;
                for ch in 0..3 {
                    let v = base + rng.gen_range(-20..=20) + 30 * ch as i32;
                    pixels[(y * w + x) * 3 + ch] = v.clamp(0, 255) as u8;
                }
            }
        }
        Image::new(w, h, pixels).unwrap()
    }

    #[test]
    fn identity_command_is_exact() {
        let img = textured_image(24, 16, 1);
        let out = run_external_codec(&img, "cp {input} {output}", 0).unwrap();
        assert_eq!(img, out);
    }

    #[test]
    fn template_expansion() {
        let s = expand_template("tool -q {quality} {input} {output}", "a.png", "b.png", 75);
        assert_eq!(s, "tool -q 75 a.png b.png");
    }

    #[test]
    fn failing_command_reports_context() {
        let img = textured_image(8, 8, 2);
        let err = run_external_codec(&img, "exit 3", 50).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("exit"), "{msg}");
    }

    #[test]
    fn missing_output_is_an_error() {
        let img = textured_image(8, 8, 3);
        let err = run_external_codec(&img, "true", 50).unwrap_err();
        assert!(err.to_string().contains("no output"), "{err}");
    }

    #[test]
    fn dimension_change_is_detected() {
        let img = textured_image(16, 16, 4);
        // Recode to a smaller size via a Python one-liner with Pillow if
        // available; otherwise skip (the contract is still covered by the
        // checks above on every platform).
        let script = "python3 -c \"from PIL import Image; \
                      i=Image.open('{input}'); i.resize((8,8)).save('{output}')\"";
        match run_external_codec(&img, script, 0) {
            Err(Error::CodecFailed { .. }) => eprintln!("skipping: python3/Pillow unavailable"),
            Err(Error::CodecDimensionMismatch { got_w, got_h, .. }) => {
                assert_eq!((got_w, got_h), (8, 8));
            }
            other => panic!("expected dimension mismatch, got {other:?}"),
        }
    }

    #[test]
    fn external_jpeg_tool_roundtrip_if_available() {
        let img = textured_image(32, 32, 5);
        let script = "python3 -c \"from PIL import Image; \
                      i=Image.open('{input}').convert('RGB'); \
                      import io; b=io.BytesIO(); i.save(b,'JPEG',quality={quality}); \
                      b.seek(0); Image.open(b).convert('RGB').save('{output}')\"";
        match run_external_codec(&img, script, 50) {
            Ok(out) => {
                assert_ne!(img, out, "JPEG-50 must be lossy");
                assert!(psnr(&img, &out) > 20.0, "psnr {}", psnr(&img, &out));
            }
            Err(Error::CodecFailed { context }) => {
                eprintln!("skipping: external JPEG tool unavailable ({context})");
            }
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn external_webp_tool_roundtrip_if_available() {
        let img = textured_image(32, 24, 6);
        let script = "python3 -c \"from PIL import Image; \
                      i=Image.open('{input}').convert('RGB'); \
                      import io; b=io.BytesIO(); i.save(b,'WEBP',quality={quality}); \
                      b.seek(0); Image.open(b).convert('RGB').save('{output}')\"";
        match run_external_codec(&img, script, 50) {
            Ok(out) => {
                assert_eq!(out.width(), 32);
                assert_eq!(out.height(), 24);
            }
            Err(Error::CodecFailed { context }) => {
                eprintln!("skipping: external WebP tool unavailable ({context})");
            }
            Err(e) => panic!("{e}"),
        }
    }
}
