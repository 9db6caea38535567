//! Pseudo-differentiable compression: run the true codec forward, treat
//! its output minus the input as additive pseudo-noise, and let the
//! backward pass flow through the identity path only.
//!
//! Subtracting the pseudo-noise from the compressed image and re-adding
//! it to the encoded image changes no forward value, but it moves the
//! gradient path off the codec entirely, so the codec can be any
//! blackbox: the internal JPEG, an external tool, anything that maps
//! 8-bit images to 8-bit images.

use crate::codec::{CodecSpec, Image};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, TensorId};

/// Apply a true codec inside the tape.
///
/// The batch is clamped to [0,1], quantized per item to 8-bit images, and
/// pushed through `codec`. The returned node carries the codec output
/// verbatim (so it requantizes to exactly what the codec produced) while
/// its backward rule is the identity into `x`. Codec failures abort the
/// whole batch with context.
pub fn attack_pseudo_diff<S: Scalar>(
    tape: &mut Tape<S>,
    x: TensorId,
    codec: &CodecSpec,
) -> Result<TensorId> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 4 || shape[1] != 3 {
        return Err(Error::BadDimensions {
            op: "attack_pseudo_diff",
            msg: format!("expected [N,3,H,W] batch, got {shape:?}"),
        });
    }
    let (n, h, w) = (shape[0], shape[2], shape[3]);
    let plane = h * w;

    let clamped = tape.clamp01(x);
    let mut target = vec![S::zero(); n * 3 * plane];
    for item in 0..n {
        let slice = &tape.data(clamped)[item * 3 * plane..(item + 1) * 3 * plane];
        let img = Image::from_chw(slice, w, h)?;
        let compressed = codec.apply(&img).map_err(|e| {
            Error::Attack(format!(
                "codec {} failed on batch item {item}: {e}",
                codec.label()
            ))
        })?;
        target[item * 3 * plane..(item + 1) * 3 * plane]
            .copy_from_slice(&compressed.to_chw::<S>());
    }
    tape.straight_through(clamped, target)
}
