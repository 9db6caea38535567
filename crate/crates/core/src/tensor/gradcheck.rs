//! Central finite-difference verification of the backward pass.
//!
//! The numeric side evaluates the recorded forward computation only, so it
//! stays independent of every backward rule it checks. Runs in f64, where
//! central differences with h = 1e-5 resolve relative errors well below
//! the tolerances asserted here.

use super::{Scalar, Tape, TensorId};
use crate::error::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Central finite differences of a scalar function at `x0`.
pub fn central_diff<F>(x0: &[f64], eps: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let fp = f(&x);
        x[i] = orig - eps;
        let fm = f(&x);
        x[i] = orig;
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    grad
}

/// Worst relative error between analytic and numeric gradients.
/// The denominator is floored so that finite-difference noise on
/// near-zero entries does not register as disagreement.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-4))
        .fold(0.0, f64::max)
}

/// Outcome of one named finite-difference check.
#[derive(Debug, Clone)]
pub struct GradCheckResult {
    pub name: String,
    pub rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckResult {
    pub fn passed(&self) -> bool {
        self.rel_err < self.tolerance
    }
}

/// Check the gradient of `build`'s scalar output with respect to the leaf
/// it receives. `build` must construct the same computation for every
/// call; extra inputs are captured as constants.
pub fn check_against_fd<B>(
    name: &str,
    x0: &[f64],
    shape: &[usize],
    tolerance: f64,
    build: B,
) -> Result<GradCheckResult>
where
    B: Fn(&mut Tape<f64>, TensorId) -> Result<TensorId>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(x0.to_vec(), shape, true)?;
    let loss = build(&mut tape, x)?;
    tape.backward(loss)?;
    let analytic = tape
        .grad(x)
        .expect("input participates in gradient")
        .to_vec();

    let numeric = central_diff(x0, 1e-5, |xs| {
        let mut t = Tape::new();
        let xi = t.leaf(xs.to_vec(), shape, true).expect("leaf");
        let l = build(&mut t, xi).expect("forward");
        t.value(l)
    });

    Ok(GradCheckResult {
        name: name.to_string(),
        rel_err: max_rel_err(&analytic, &numeric),
        tolerance,
    })
}

fn uniform<S: Scalar>(rng: &mut ChaCha12Rng, n: usize, lo: f64, hi: f64) -> Vec<S> {
    (0..n).map(|_| super::sc(rng.gen_range(lo..hi))).collect()
}

/// Finite-difference checks for every differentiable tape op, composed
/// into small scalar losses. Deterministic under the fixed seed.
pub fn run_gradcheck_suite() -> Result<Vec<GradCheckResult>> {
    let mut rng = ChaCha12Rng::seed_from_u64(0x5eed_6a0d);
    let mut results = Vec::new();
    let tight = 1e-6;
    let composed = 1e-4;

    // Elementwise binary ops against a fixed co-tensor.
    let n = 24;
    let b0: Vec<f64> = uniform(&mut rng, n, -1.5, 1.5);
    let x0: Vec<f64> = uniform(&mut rng, n, -1.5, 1.5);
    for (name, which) in [("add", 0), ("sub", 1), ("mul", 2)] {
        let b0 = b0.clone();
        results.push(check_against_fd(name, &x0, &[n], tight, move |t, x| {
            let b = t.constant(b0.clone(), &[n])?;
            let y = match which {
                0 => t.add(x, b)?,
                1 => t.sub(x, b)?,
                _ => t.mul(x, b)?,
            };
            let y2 = t.mul(y, y)?;
            t.mean(y2)
        })?);
    }
    results.push(check_against_fd("scale", &x0, &[n], tight, |t, x| {
        let y = t.scale(x, 0.731);
        let y2 = t.mul(y, y)?;
        t.mean(y2)
    })?);
    results.push(check_against_fd("add_scalar", &x0, &[n], tight, |t, x| {
        let y = t.add_scalar(x, -0.4);
        let y2 = t.mul(y, y)?;
        t.mean(y2)
    })?);
    results.push(check_against_fd(
        "mul_scalar_broadcast",
        &x0,
        &[n],
        tight,
        |t, x| {
            let s = t.scalar(1.37);
            let y = t.mul(x, s)?;
            let y2 = t.mul(y, y)?;
            t.mean(y2)
        },
    )?);

    // Activations; inputs kept away from the relu kink at 0.
    let act0: Vec<f64> = (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.05..1.5);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    results.push(check_against_fd("relu", &act0, &[n], tight, |t, x| {
        let y = t.relu(x);
        let y2 = t.mul(y, y)?;
        t.mean(y2)
    })?);
    results.push(check_against_fd("sigmoid", &act0, &[n], tight, |t, x| {
        let y = t.sigmoid(x);
        let y2 = t.mul(y, y)?;
        t.mean(y2)
    })?);
    results.push(check_against_fd("mean", &x0, &[n], tight, |t, x| t.mean(x))?);

    // Clamp with inputs strictly inside [0,1].
    let c0: Vec<f64> = uniform(&mut rng, n, 0.05, 0.95);
    results.push(check_against_fd("clamp01", &c0, &[n], tight, |t, x| {
        let y = t.clamp01(x);
        let y2 = t.mul(y, y)?;
        t.mean(y2)
    })?);

    // Polynomial rounding surrogate; residuals kept away from +-0.5.
    let p0: Vec<f64> = (0..n)
        .map(|_| {
            let base = rng.gen_range(-3i32..=3) as f64;
            base + rng.gen_range(-0.42..0.42)
        })
        .collect();
    results.push(check_against_fd("poly_round", &p0, &[n], tight, |t, x| {
        let y = t.poly_round(x);
        let y2 = t.mul(y, y)?;
        t.mean(y2)
    })?);

    // Losses.
    let tgt: Vec<f64> = uniform(&mut rng, n, -1.0, 1.0);
    {
        let tgt = tgt.clone();
        results.push(check_against_fd("mse_loss", &x0, &[n], tight, move |t, x| {
            let b = t.constant(tgt.clone(), &[n])?;
            t.mse_loss(x, b)
        })?);
    }
    let bits: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    {
        let bits = bits.clone();
        results.push(check_against_fd(
            "bce_with_logits",
            &x0,
            &[n],
            tight,
            move |t, x| {
                let b = t.constant(bits.clone(), &[n])?;
                t.bce_with_logits(x, b)
            },
        )?);
    }

    // Convolution: input, kernel and bias gradients.
    let (ci, hi, wi) = (2, 6, 6);
    let (fo, k) = (3, 3);
    let conv_in: Vec<f64> = uniform(&mut rng, ci * hi * wi, -1.0, 1.0);
    let conv_k: Vec<f64> = uniform(&mut rng, fo * ci * k * k, -0.5, 0.5);
    let conv_b: Vec<f64> = uniform(&mut rng, fo, -0.2, 0.2);
    {
        let (ck, cb) = (conv_k.clone(), conv_b.clone());
        results.push(check_against_fd(
            "conv2d_input",
            &conv_in,
            &[1, ci, hi, wi],
            tight,
            move |t, x| {
                let kk = t.constant(ck.clone(), &[fo, ci, k, k])?;
                let bb = t.constant(cb.clone(), &[fo])?;
                let y = t.conv2d(x, kk, Some(bb), 1, 1)?;
                let y2 = t.mul(y, y)?;
                t.mean(y2)
            },
        )?);
    }
    {
        let (cin, cb) = (conv_in.clone(), conv_b.clone());
        results.push(check_against_fd(
            "conv2d_kernel",
            &conv_k,
            &[fo, ci, k, k],
            tight,
            move |t, x| {
                let inp = t.constant(cin.clone(), &[1, ci, hi, wi])?;
                let bb = t.constant(cb.clone(), &[fo])?;
                let y = t.conv2d(inp, x, Some(bb), 1, 1)?;
                let y2 = t.mul(y, y)?;
                t.mean(y2)
            },
        )?);
    }
    {
        let (cin, ck) = (conv_in.clone(), conv_k.clone());
        results.push(check_against_fd(
            "conv2d_bias",
            &conv_b,
            &[fo],
            tight,
            move |t, x| {
                let inp = t.constant(cin.clone(), &[1, ci, hi, wi])?;
                let kk = t.constant(ck.clone(), &[fo, ci, k, k])?;
                let y = t.conv2d(inp, kk, Some(x), 1, 1)?;
                let y2 = t.mul(y, y)?;
                t.mean(y2)
            },
        )?);
    }
    {
        let ck = conv_k.clone();
        results.push(check_against_fd(
            "conv2d_stride2",
            &conv_in,
            &[1, ci, hi, wi],
            tight,
            move |t, x| {
                let kk = t.constant(ck.clone(), &[fo, ci, k, k])?;
                let y = t.conv2d(x, kk, None, 2, 1)?;
                let y2 = t.mul(y, y)?;
                t.mean(y2)
            },
        )?);
    }

    // Linear layer.
    let (nb, cin_l, cout_l) = (3, 5, 4);
    let lin_in: Vec<f64> = uniform(&mut rng, nb * cin_l, -1.0, 1.0);
    let lin_w: Vec<f64> = uniform(&mut rng, cin_l * cout_l, -0.5, 0.5);
    let lin_b: Vec<f64> = uniform(&mut rng, cout_l, -0.2, 0.2);
    {
        let (w, b) = (lin_w.clone(), lin_b.clone());
        results.push(check_against_fd(
            "linear_input",
            &lin_in,
            &[nb, cin_l],
            tight,
            move |t, x| {
                let ww = t.constant(w.clone(), &[cin_l, cout_l])?;
                let bb = t.constant(b.clone(), &[cout_l])?;
                let y = t.linear(x, ww, bb)?;
                let y2 = t.mul(y, y)?;
                t.mean(y2)
            },
        )?);
    }
    {
        let (i0, b) = (lin_in.clone(), lin_b.clone());
        results.push(check_against_fd(
            "linear_weight",
            &lin_w,
            &[cin_l, cout_l],
            tight,
            move |t, x| {
                let inp = t.constant(i0.clone(), &[nb, cin_l])?;
                let bb = t.constant(b.clone(), &[cout_l])?;
                let y = t.linear(inp, x, bb)?;
                let y2 = t.mul(y, y)?;
                t.mean(y2)
            },
        )?);
    }

    // Pooling / tiling / concatenation.
    let pool_in: Vec<f64> = uniform(&mut rng, 2 * 3 * 4 * 4, -1.0, 1.0);
    results.push(check_against_fd(
        "avg_pool_spatial",
        &pool_in,
        &[2, 3, 4, 4],
        tight,
        |t, x| {
            let y = t.avg_pool_spatial(x)?;
            let y2 = t.mul(y, y)?;
            t.mean(y2)
        },
    )?);
    let tile_in: Vec<f64> = uniform(&mut rng, 2 * 3, -1.0, 1.0);
    results.push(check_against_fd(
        "tile_spatial",
        &tile_in,
        &[2, 3],
        tight,
        |t, x| {
            let y = t.tile_spatial(x, 4, 5)?;
            let y2 = t.mul(y, y)?;
            t.mean(y2)
        },
    )?);
    {
        let other: Vec<f64> = uniform(&mut rng, 2 * 2 * 3 * 3, -1.0, 1.0);
        let cat_in: Vec<f64> = uniform(&mut rng, 2 * 4 * 3 * 3, -1.0, 1.0);
        results.push(check_against_fd(
            "concat_channels",
            &cat_in,
            &[2, 4, 3, 3],
            tight,
            move |t, x| {
                let o = t.constant(other.clone(), &[2, 2, 3, 3])?;
                let y = t.concat_channels(&[x, o])?;
                let y2 = t.mul(y, y)?;
                t.mean(y2)
            },
        )?);
    }

    // Block DCT and color transforms (one 8x8 block, 3 channels).
    let dct_in: Vec<f64> = uniform(&mut rng, 3 * 8 * 8, -128.0, 127.0);
    results.push(check_against_fd(
        "block_dct8",
        &dct_in,
        &[1, 3, 8, 8],
        tight,
        |t, x| {
            let y = t.block_dct8(x)?;
            let y2 = t.mul(y, y)?;
            let m = t.mean(y2)?;
            Ok(t.mul_scalar(m, 1e-4))
        },
    )?);
    results.push(check_against_fd(
        "block_idct8",
        &dct_in,
        &[1, 3, 8, 8],
        tight,
        |t, x| {
            let y = t.block_idct8(x)?;
            let y2 = t.mul(y, y)?;
            let m = t.mean(y2)?;
            Ok(t.mul_scalar(m, 1e-4))
        },
    )?);
    let col_in: Vec<f64> = uniform(&mut rng, 3 * 8 * 8, 10.0, 245.0);
    results.push(check_against_fd(
        "rgb_to_ycc",
        &col_in,
        &[1, 3, 8, 8],
        tight,
        |t, x| {
            let y = t.rgb_to_ycc(x)?;
            let y2 = t.mul(y, y)?;
            let m = t.mean(y2)?;
            Ok(t.mul_scalar(m, 1e-4))
        },
    )?);
    results.push(check_against_fd(
        "ycc_to_rgb",
        &col_in,
        &[1, 3, 8, 8],
        tight,
        |t, x| {
            let y = t.ycc_to_rgb(x)?;
            let y2 = t.mul(y, y)?;
            let m = t.mean(y2)?;
            Ok(t.mul_scalar(m, 1e-4))
        },
    )?);

    // Composed two-layer network: conv -> relu -> conv -> sigmoid -> mse.
    let net_in: Vec<f64> = uniform(&mut rng, 2 * 8 * 8, -0.8, 0.8);
    let k1: Vec<f64> = uniform(&mut rng, 4 * 2 * 3 * 3, -0.4, 0.4);
    let k2: Vec<f64> = uniform(&mut rng, 2 * 4 * 3 * 3, -0.4, 0.4);
    let net_tgt: Vec<f64> = uniform(&mut rng, 2 * 8 * 8, 0.1, 0.9);
    let build_net = |t: &mut Tape<f64>,
                     input: TensorId,
                     kernel1: TensorId,
                     kernel2: TensorId,
                     tgt: &[f64]|
     -> Result<TensorId> {
        let h1 = t.conv2d(input, kernel1, None, 1, 1)?;
        let h1 = t.relu(h1);
        let h2 = t.conv2d(h1, kernel2, None, 1, 1)?;
        let y = t.sigmoid(h2);
        let target = t.constant(tgt.to_vec(), &[1, 2, 8, 8])?;
        t.mse_loss(y, target)
    };
    {
        let (k1c, k2c, tgtc) = (k1.clone(), k2.clone(), net_tgt.clone());
        results.push(check_against_fd(
            "two_layer_net_input",
            &net_in,
            &[1, 2, 8, 8],
            composed,
            move |t, x| {
                let a = t.constant(k1c.clone(), &[4, 2, 3, 3])?;
                let b = t.constant(k2c.clone(), &[2, 4, 3, 3])?;
                build_net(t, x, a, b, &tgtc)
            },
        )?);
    }
    {
        let (inc, k2c, tgtc) = (net_in.clone(), k2.clone(), net_tgt.clone());
        results.push(check_against_fd(
            "two_layer_net_kernel1",
            &k1,
            &[4, 2, 3, 3],
            composed,
            move |t, x| {
                let i = t.constant(inc.clone(), &[1, 2, 8, 8])?;
                let b = t.constant(k2c.clone(), &[2, 4, 3, 3])?;
                build_net(t, i, x, b, &tgtc)
            },
        )?);
    }
    {
        let (inc, k1c, tgtc) = (net_in.clone(), k1.clone(), net_tgt.clone());
        results.push(check_against_fd(
            "two_layer_net_kernel2",
            &k2,
            &[2, 4, 3, 3],
            composed,
            move |t, x| {
                let i = t.constant(inc.clone(), &[1, 2, 8, 8])?;
                let a = t.constant(k1c.clone(), &[4, 2, 3, 3])?;
                build_net(t, i, a, x, &tgtc)
            },
        )?);
    }

    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let results = run_gradcheck_suite().unwrap();
        assert!(results.len() >= 20);
        for r in &results {
            assert!(
                r.passed(),
                "{} failed: rel err {} >= {}",
                r.name,
                r.rel_err,
                r.tolerance
            );
        }
    }
}
