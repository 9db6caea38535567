//! Differentiable JPEG surrogates: the full transform chain with the
//! non-differentiable quantization replaced by masking, stochastic
//! coefficient dropping, or a polynomial rounding surrogate.
//!
//! Each pipeline is color transform -> level shift -> blockwise DCT ->
//! coefficient stage -> inverse chain, entirely on the tape, so gradients
//! flow through every step.

use crate::codec::dct::zigzag_rank;
use crate::codec::jpeg::{chroma_table, luma_table};
use crate::error::{Error, Result};
use crate::tensor::{sc, Scalar, Tape, TensorId};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// Per-coefficient drop probabilities indexed by zig-zag rank
/// (0 = DC, 63 = highest frequency).
#[derive(Debug, Clone, PartialEq)]
pub struct DropProfile(pub [f64; 64]);

impl DropProfile {
    /// Linear ramp of drop probability along the zig-zag scan.
    pub fn ramp(p0: f64, p1: f64) -> Result<Self> {
        let mut p = [0.0; 64];
        for (k, v) in p.iter_mut().enumerate() {
            *v = p0 + (p1 - p0) * k as f64 / 63.0;
        }
        Self::new(p)
    }

    pub fn new(p: [f64; 64]) -> Result<Self> {
        if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Attack(
                "drop probabilities must lie in [0,1]".into(),
            ));
        }
        Ok(DropProfile(p))
    }
}

impl Default for DropProfile {
    /// The default schedule: keep DC for sure, drop the highest
    /// frequency always, ramp linearly in between.
    fn default() -> Self {
        DropProfile::ramp(0.0, 1.0).expect("valid ramp")
    }
}

fn batch_dims<S: Scalar>(tape: &Tape<S>, x: TensorId) -> Result<(usize, usize, usize)> {
    let shape = tape.shape(x);
    if shape.len() != 4 || shape[1] != 3 {
        return Err(Error::BadDimensions {
            op: "jpeg surrogate",
            msg: format!("expected [N,3,H,W] batch, got {shape:?}"),
        });
    }
    if shape[2] % 8 != 0 || shape[3] % 8 != 0 {
        return Err(Error::BadDimensions {
            op: "jpeg surrogate",
            msg: format!(
                "spatial dimensions must be multiples of 8, got {}x{}",
                shape[2], shape[3]
            ),
        });
    }
    Ok((shape[0], shape[2], shape[3]))
}

/// Shared transform chain around a coefficient-domain stage.
fn jpeg_surrogate<S, F>(tape: &mut Tape<S>, x: TensorId, stage: F) -> Result<TensorId>
where
    S: Scalar,
    F: FnOnce(&mut Tape<S>, TensorId) -> Result<TensorId>,
{
    let x255 = tape.mul_scalar(x, sc(255.0));
    let ycc = tape.rgb_to_ycc(x255)?;
    let shifted = tape.add_scalar(ycc, sc(-128.0));
    let coeffs = tape.block_dct8(shifted)?;
    let staged = stage(tape, coeffs)?;
    let spatial = tape.block_idct8(staged)?;
    let unshifted = tape.add_scalar(spatial, sc(128.0));
    let rgb = tape.ycc_to_rgb(unshifted)?;
    let unit = tape.mul_scalar(rgb, sc(1.0 / 255.0));
    Ok(tape.clamp01(unit))
}

/// Tile an 8x8 per-channel pattern over a [N,3,H,W] constant tensor.
fn tile_pattern<S: Scalar>(
    n: usize,
    h: usize,
    w: usize,
    luma: &[f64; 64],
    chroma: &[f64; 64],
) -> Vec<S> {
    let plane = h * w;
    let mut out = vec![S::zero(); n * 3 * plane];
    for item in 0..n {
        for ch in 0..3 {
            let pat = if ch == 0 { luma } else { chroma };
            let base = (item * 3 + ch) * plane;
            for y in 0..h {
                for x in 0..w {
                    out[base + y * w + x] = sc(pat[(y % 8) * 8 + (x % 8)]);
                }
            }
        }
    }
    out
}

/// Zero every DCT coefficient outside the lowest `keep_luma` (luma) /
/// `keep_chroma` (chroma) zig-zag positions, via a fixed 0/1 mask.
pub fn attack_jpeg_mask<S: Scalar>(
    tape: &mut Tape<S>,
    x: TensorId,
    keep_luma: usize,
    keep_chroma: usize,
) -> Result<TensorId> {
    if !(1..=64).contains(&keep_luma) || !(1..=64).contains(&keep_chroma) {
        return Err(Error::Attack(format!(
            "keep counts must lie in 1..=64, got {keep_luma}/{keep_chroma}"
        )));
    }
    let (n, h, w) = batch_dims(tape, x)?;
    let rank = zigzag_rank();
    let mut luma = [0.0f64; 64];
    let mut chroma = [0.0f64; 64];
    for i in 0..64 {
        luma[i] = if rank[i] < keep_luma { 1.0 } else { 0.0 };
        chroma[i] = if rank[i] < keep_chroma { 1.0 } else { 0.0 };
    }
    let mask_data = tile_pattern::<S>(n, h, w, &luma, &chroma);
    jpeg_surrogate(tape, x, |t, coeffs| {
        let shape = t.shape(coeffs).to_vec();
        let mask = t.constant(mask_data, &shape)?;
        t.mul(coeffs, mask)
    })
}

/// Randomly zero coefficients per block, each with the probability its
/// zig-zag rank has in `profile`. The sampled mask is a constant in the
/// backward pass.
pub fn attack_jpeg_drop<S: Scalar>(
    tape: &mut Tape<S>,
    x: TensorId,
    profile: &DropProfile,
    rng: &mut ChaCha12Rng,
) -> Result<TensorId> {
    let (n, h, w) = batch_dims(tape, x)?;
    let rank = zigzag_rank();
    let plane = h * w;
    let mut mask = vec![S::zero(); n * 3 * plane];
    for item in 0..n {
        for ch in 0..3 {
            let base = (item * 3 + ch) * plane;
            for by in (0..h).step_by(8) {
                for bx in (0..w).step_by(8) {
                    for y in 0..8 {
                        for x8 in 0..8 {
                            let p = profile.0[rank[y * 8 + x8]];
                            mask[base + (by + y) * w + bx + x8] =
                                if sample_keep(p, rng) { S::one() } else { S::zero() };
                        }
                    }
                }
            }
        }
    }
    jpeg_surrogate(tape, x, |t, coeffs| {
        let shape = t.shape(coeffs).to_vec();
        let m = t.constant(mask, &shape)?;
        t.mul(coeffs, m)
    })
}

/// Keep decision for one coefficient with drop probability `p`.
/// Degenerate probabilities never consume randomness.
fn sample_keep(p: f64, rng: &mut ChaCha12Rng) -> bool {
    if p <= 0.0 {
        true
    } else if p >= 1.0 {
        false
    } else {
        rng.gen::<f64>() >= p
    }
}

/// Full JPEG pipeline with quantize/dequantize replaced by the
/// differentiable surrogate round(v) + (v - round(v))^3 on v = c/t.
pub fn attack_jpeg_poly_round<S: Scalar>(
    tape: &mut Tape<S>,
    x: TensorId,
    quality: u8,
) -> Result<TensorId> {
    let (n, h, w) = batch_dims(tape, x)?;
    let lt = luma_table(quality)?;
    let ct = chroma_table(quality)?;
    let mut luma_div = [0.0f64; 64];
    let mut luma_recip = [0.0f64; 64];
    let mut chroma_div = [0.0f64; 64];
    let mut chroma_recip = [0.0f64; 64];
    for i in 0..64 {
        luma_div[i] = lt.0[i] as f64;
        luma_recip[i] = 1.0 / lt.0[i] as f64;
        chroma_div[i] = ct.0[i] as f64;
        chroma_recip[i] = 1.0 / ct.0[i] as f64;
    }
    let div = tile_pattern::<S>(n, h, w, &luma_div, &chroma_div);
    let recip = tile_pattern::<S>(n, h, w, &luma_recip, &chroma_recip);
    jpeg_surrogate(tape, x, |t, coeffs| {
        let shape = t.shape(coeffs).to_vec();
        let recip = t.constant(recip, &shape)?;
        let div = t.constant(div, &shape)?;
        let v = t.mul(coeffs, recip)?;
        let rounded = t.poly_round(v);
        t.mul(rounded, div)
    })
}

/// Finite-difference checks of the composed surrogate pipelines, one
/// result per attack. Complements the per-op engine suite.
pub fn gradcheck_pipelines() -> crate::error::Result<Vec<crate::tensor::GradCheckResult>> {
    use crate::tensor::{central_diff, max_rel_err, GradCheckResult};
    use rand::SeedableRng;

    let mut rng = ChaCha12Rng::seed_from_u64(0xa77ac);
    let data: Vec<f64> = (0..3 * 64).map(|_| rng.gen_range(0.1..0.9)).collect();
    let shape = [1usize, 3, 8, 8];
    let drop_rng_seed = 0x10ca1;

    let mut results = Vec::new();
    type Builder = Box<dyn Fn(&mut Tape<f64>, TensorId) -> crate::error::Result<TensorId>>;
    let cases: Vec<(&str, Builder)> = vec![
        (
            "attack_jpeg_mask_pipeline",
            Box::new(|t, x| attack_jpeg_mask(t, x, 25, 9)),
        ),
        (
            "attack_jpeg_drop_pipeline",
            Box::new(move |t, x| {
                let mut r = ChaCha12Rng::seed_from_u64(drop_rng_seed);
                attack_jpeg_drop(t, x, &DropProfile::ramp(0.0, 0.9)?, &mut r)
            }),
        ),
        (
            "attack_jpeg_poly_round_pipeline",
            Box::new(|t, x| attack_jpeg_poly_round(t, x, 50)),
        ),
    ];

    for (name, build) in cases {
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(data.clone(), &shape, true)?;
        let y = build(&mut t, x)?;
        let sq = t.mul(y, y)?;
        let loss = t.mean(sq)?;
        t.backward(loss)?;
        let analytic = t.grad(x).expect("input gradient").to_vec();
        let numeric = central_diff(&data, 1e-6, |xs| {
            let mut tt: Tape<f64> = Tape::new();
            let xi = tt.leaf(xs.to_vec(), &shape, true).expect("leaf");
            let y = build(&mut tt, xi).expect("pipeline");
            let sq = tt.mul(y, y).expect("mul");
            let l = tt.mean(sq).expect("mean");
            tt.value(l)
        });
        results.push(GradCheckResult {
            name: name.to_string(),
            rel_err: max_rel_err(&analytic, &numeric),
            tolerance: 1e-4,
        });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{central_diff, max_rel_err};
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn random_batch(n: usize, h: usize, w: usize, seed: u64) -> Vec<f64> {
        let mut r = rng(seed);
        (0..n * 3 * h * w).map(|_| r.gen_range(0.1..0.9)).collect()
    }

    #[test]
    fn full_mask_is_a_transform_roundtrip() {
        let data = random_batch(1, 8, 8, 10);
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(data.clone(), &[1, 3, 8, 8], false).unwrap();
        let y = attack_jpeg_mask(&mut t, x, 64, 64).unwrap();
        let max_diff = t
            .data(y)
            .iter()
            .zip(&data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-4, "{max_diff}");
    }

    #[test]
    fn constant_image_survives_any_keep_count() {
        let data = vec![0.5f64; 3 * 64];
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(data.clone(), &[1, 3, 8, 8], false).unwrap();
        let y = attack_jpeg_mask(&mut t, x, 1, 1).unwrap();
        let max_diff = t
            .data(y)
            .iter()
            .zip(&data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-4, "{max_diff}");
    }

    #[test]
    fn mask_rejects_bad_keep_counts() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(vec![0.5; 3 * 64], &[1, 3, 8, 8], false).unwrap();
        assert!(attack_jpeg_mask(&mut t, x, 0, 9).is_err());
        assert!(attack_jpeg_mask(&mut t, x, 25, 65).is_err());
    }

    #[test]
    fn mask_gradcheck() {
        let data = random_batch(1, 8, 8, 11);
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(data.clone(), &[1, 3, 8, 8], true).unwrap();
        let y = attack_jpeg_mask(&mut t, x, 25, 9).unwrap();
        let sq = t.mul(y, y).unwrap();
        let loss = t.mean(sq).unwrap();
        t.backward(loss).unwrap();
        let analytic = t.grad(x).unwrap().to_vec();
        let numeric = central_diff(&data, 1e-6, |xs| {
            let mut tt: Tape<f64> = Tape::new();
            let xi = tt.leaf(xs.to_vec(), &[1, 3, 8, 8], true).unwrap();
            let y = attack_jpeg_mask(&mut tt, xi, 25, 9).unwrap();
            let sq = tt.mul(y, y).unwrap();
            let l = tt.mean(sq).unwrap();
            tt.value(l)
        });
        let err = max_rel_err(&analytic, &numeric);
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn zero_drop_probability_is_a_roundtrip() {
        let data = random_batch(1, 8, 8, 12);
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(data.clone(), &[1, 3, 8, 8], false).unwrap();
        let profile = DropProfile::new([0.0; 64]).unwrap();
        let y = attack_jpeg_drop(&mut t, x, &profile, &mut rng(1)).unwrap();
        let max_diff = t
            .data(y)
            .iter()
            .zip(&data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-4, "{max_diff}");
    }

    #[test]
    fn dropping_all_ac_leaves_per_block_means() {
        // Profile: keep DC (rank 0), drop every AC coefficient.
        let mut p = [1.0; 64];
        p[0] = 0.0;
        let profile = DropProfile::new(p).unwrap();
        let data = random_batch(1, 8, 16, 13);
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(data.clone(), &[1, 3, 8, 16], false).unwrap();
        let y = attack_jpeg_drop(&mut t, x, &profile, &mut rng(2)).unwrap();
        // Compare against the mean of each (channel, block) region in the
        // YCbCr domain: DC-only reconstruction is the block mean of the
        // pre-transform plane, so invert through the same color chain.
        // Cheaper equivalent check: within each 8x8 block of the output,
        // all pixels of a channel are equal.
        let out = t.data(y);
        for ch in 0..3 {
            for bx in (0..16).step_by(8) {
                let base = ch * 8 * 16;
                let first = out[base + bx];
                for yy in 0..8 {
                    for xx in 0..8 {
                        let v = out[base + yy * 16 + bx + xx];
                        assert!(
                            (v - first).abs() < 1e-6,
                            "block not constant: {v} vs {first}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn drop_rates_match_profile() {
        let profile = DropProfile::ramp(0.0, 1.0).unwrap();
        let rank = zigzag_rank();
        let blocks = 10_000usize;
        let mut r = rng(3);
        let mut dropped = [0usize; 64];
        // Count zeroed coefficients straight from the sampling rule the
        // attack uses.
        for _ in 0..blocks {
            for i in 0..64 {
                if !sample_keep(profile.0[rank[i]], &mut r) {
                    dropped[rank[i]] += 1;
                }
            }
        }
        for k in 0..64 {
            let observed = dropped[k] as f64 / blocks as f64;
            assert!(
                (observed - profile.0[k]).abs() < 0.02,
                "rank {k}: {observed} vs {}",
                profile.0[k]
            );
        }
    }

    #[test]
    fn poly_round_pipeline_gradcheck() {
        let data = random_batch(1, 8, 8, 14);
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(data.clone(), &[1, 3, 8, 8], true).unwrap();
        let y = attack_jpeg_poly_round(&mut t, x, 50).unwrap();
        let sq = t.mul(y, y).unwrap();
        let loss = t.mean(sq).unwrap();
        t.backward(loss).unwrap();
        let analytic = t.grad(x).unwrap().to_vec();
        let numeric = central_diff(&data, 1e-6, |xs| {
            let mut tt: Tape<f64> = Tape::new();
            let xi = tt.leaf(xs.to_vec(), &[1, 3, 8, 8], true).unwrap();
            let y = attack_jpeg_poly_round(&mut tt, xi, 50).unwrap();
            let sq = tt.mul(y, y).unwrap();
            let l = tt.mean(sq).unwrap();
            tt.value(l)
        });
        let err = max_rel_err(&analytic, &numeric);
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn surrogates_reject_non_multiple_of_8() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(vec![0.5; 3 * 12 * 12], &[1, 3, 12, 12], false).unwrap();
        assert!(attack_jpeg_mask(&mut t, x, 25, 9).is_err());
    }
}
