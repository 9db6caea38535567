//! The attack layer: distortions applied to the encoded image during
//! training so the decoder learns to survive them.
//!
//! Every attack is a map on a [N,3,H,W] batch living on the tape. The
//! differentiable ones (identity, Gaussian, and the JPEG surrogates in
//! [`approx`]) backpropagate through their own arithmetic. The
//! pseudo-differentiable attack in [`pseudo`] forwards the true codec
//! output and routes the backward pass through the identity, which is
//! what lets a non-differentiable compressor sit inside training.

pub mod approx;
pub mod parse;
pub mod pseudo;

pub use approx::{attack_jpeg_drop, attack_jpeg_mask, attack_jpeg_poly_round, DropProfile};
pub use pseudo::attack_pseudo_diff;

use crate::codec::CodecSpec;
use crate::error::{Error, Result};
use crate::tensor::{sc, Scalar, Tape, TensorId};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// Default JPEG-Mask keep counts: 25 low-frequency luma and 9 chroma
/// coefficients along the zig-zag scan.
pub const DEFAULT_KEEP_LUMA: usize = 25;
pub const DEFAULT_KEEP_CHROMA: usize = 9;

/// One attack with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum AttackKind {
    Identity,
    Gaussian { sigma: f64 },
    JpegMask { keep_luma: usize, keep_chroma: usize },
    JpegDrop { profile: DropProfile },
    JpegPolyRound { quality: u8 },
    PseudoDiff { codec: CodecSpec },
}

impl AttackKind {
    pub fn label(&self) -> String {
        match self {
            AttackKind::Identity => "identity".into(),
            AttackKind::Gaussian { sigma } => format!("gaussian:{sigma}"),
            AttackKind::JpegMask {
                keep_luma,
                keep_chroma,
            } => format!("jpeg_mask:{keep_luma},{keep_chroma}"),
            AttackKind::JpegDrop { .. } => "jpeg_drop".into(),
            AttackKind::JpegPolyRound { quality } => format!("jpeg_poly:{quality}"),
            AttackKind::PseudoDiff { codec } => format!("pseudo:{}", codec.label()),
        }
    }

    /// Apply this attack to a [N,3,H,W] batch in [0,1].
    pub fn apply<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        x: TensorId,
        rng: &mut ChaCha12Rng,
    ) -> Result<TensorId> {
        match self {
            AttackKind::Identity => Ok(x),
            AttackKind::Gaussian { sigma } => attack_gaussian(tape, x, *sigma, rng),
            AttackKind::JpegMask {
                keep_luma,
                keep_chroma,
            } => attack_jpeg_mask(tape, x, *keep_luma, *keep_chroma),
            AttackKind::JpegDrop { profile } => attack_jpeg_drop(tape, x, profile, rng),
            AttackKind::JpegPolyRound { quality } => attack_jpeg_poly_round(tape, x, *quality),
            AttackKind::PseudoDiff { codec } => attack_pseudo_diff(tape, x, codec),
        }
    }
}

/// An attack plus its sampling weight inside a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub weight: f64,
}

impl AttackSpec {
    pub fn new(kind: AttackKind) -> Self {
        AttackSpec { kind, weight: 1.0 }
    }

    pub fn weighted(kind: AttackKind, weight: f64) -> Self {
        AttackSpec { kind, weight }
    }
}

/// Weighted set of attacks sampled per batch.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSchedule {
    specs: Vec<AttackSpec>,
}

impl AttackSchedule {
    pub fn new(specs: Vec<AttackSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Attack("schedule needs at least one attack".into()));
        }
        if specs.iter().any(|s| s.weight < 0.0 || !s.weight.is_finite()) {
            return Err(Error::Attack("weights must be finite and >= 0".into()));
        }
        let total: f64 = specs.iter().map(|s| s.weight).sum();
        if total <= 0.0 {
            return Err(Error::Attack("weights must not all be zero".into()));
        }
        Ok(AttackSchedule { specs })
    }

    pub fn specs(&self) -> &[AttackSpec] {
        &self.specs
    }

    /// Normalized sampling probability of each entry (sums to 1).
    pub fn probabilities(&self) -> Vec<f64> {
        let total: f64 = self.specs.iter().map(|s| s.weight).sum();
        self.specs.iter().map(|s| s.weight / total).collect()
    }

    /// Draw one attack by weight. Deterministic under a seeded stream.
    pub fn sample(&self, rng: &mut ChaCha12Rng) -> &AttackSpec {
        let total: f64 = self.specs.iter().map(|s| s.weight).sum();
        let mut u = rng.gen_range(0.0..total);
        for spec in &self.specs {
            if u < spec.weight {
                return spec;
            }
            u -= spec.weight;
        }
        self.specs.last().expect("non-empty")
    }
}

/// Additive Gaussian noise clamped back to [0,1]. The noise tensor is a
/// constant, so the gradient with respect to `x` is the identity
/// (modulo clamp saturation). `sigma == 0` returns `x` unchanged.
pub fn attack_gaussian<S: Scalar>(
    tape: &mut Tape<S>,
    x: TensorId,
    sigma: f64,
    rng: &mut ChaCha12Rng,
) -> Result<TensorId> {
    if sigma < 0.0 {
        return Err(Error::Attack(format!(
            "gaussian sigma must be >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(x);
    }
    let n = tape.data(x).len();
    let shape = tape.shape(x).to_vec();
    let noise: Vec<S> = (0..n).map(|_| sc(standard_normal(rng) * sigma)).collect();
    let noise = tape.constant(noise, &shape)?;
    let noisy = tape.add(x, noise)?;
    Ok(tape.clamp01(noisy))
}

/// No-op attack; the training baseline that leaves the encoded image
/// untouched.
pub fn attack_identity<S: Scalar>(_tape: &mut Tape<S>, x: TensorId) -> TensorId {
    x
}

/// Standard normal sample via Box-Muller.
pub(crate) fn standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    #[test]
    fn identity_attack_is_bitwise_and_has_uniform_gradient() {
        let mut t: Tape<f64> = Tape::new();
        let x = t
            .leaf(vec![0.25, 0.5, 0.75, 1.0], &[1, 1, 2, 2], true)
            .unwrap();
        let y = attack_identity(&mut t, x);
        assert_eq!(x, y);
        let loss = t.mean(y).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[0.25; 4]);
    }

    #[test]
    fn gaussian_sigma_zero_is_identity() {
        let mut t: Tape<f32> = Tape::new();
        let x = t
            .leaf(vec![0.1, 0.9, 0.5, 0.3], &[1, 1, 2, 2], true)
            .unwrap();
        let y = attack_gaussian(&mut t, x, 0.0, &mut rng(1)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn gaussian_moments_match() {
        let mut r = rng(2);
        let sigma = 0.3;
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let v = standard_normal(&mut r) * sigma;
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!(mean.abs() < 4.0 * sigma / 1_000.0, "mean {mean}");
        assert!(
            (var - sigma * sigma).abs() < 0.01 * sigma * sigma,
            "var {var}"
        );
    }

    #[test]
    fn gaussian_gradient_matches_identity_for_frozen_noise() {
        // With the same fixed noise and values inside (0,1), d loss/dx is
        // identical to the identity-attack gradient.
        let data = vec![0.4, 0.5, 0.6, 0.45];
        let mut t1: Tape<f64> = Tape::new();
        let x1 = t1.leaf(data.clone(), &[1, 1, 2, 2], true).unwrap();
        let y1 = attack_gaussian(&mut t1, x1, 0.01, &mut rng(3)).unwrap();
        let sq1 = t1.mul(y1, y1).unwrap();
        let l1 = t1.mean(sq1).unwrap();
        t1.backward(l1).unwrap();

        let mut t2: Tape<f64> = Tape::new();
        let x2 = t2.leaf(data.clone(), &[1, 1, 2, 2], true).unwrap();
        let y2 = attack_gaussian(&mut t2, x2, 0.01, &mut rng(3)).unwrap();
        // Same seed, same noise: forward values agree.
        assert_eq!(t1.data(y1), t2.data(y2));

        // Finite differences of the frozen-noise loss agree with the
        // analytic gradient (identity chain through add + clamp).
        let noise: Vec<f64> = t1
            .data(y1)
            .iter()
            .zip(&data)
            .map(|(&y, &x)| y - x)
            .collect();
        let numeric = crate::tensor::central_diff(&data, 1e-6, |xs| {
            let vals: Vec<f64> = xs.iter().zip(&noise).map(|(&x, &n)| x + n).collect();
            vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64
        });
        let analytic = t1.grad(x1).unwrap();
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() < 1e-6, "{a} vs {n}");
        }
    }

    #[test]
    fn schedule_single_entry_always_sampled() {
        let sched = AttackSchedule::new(vec![AttackSpec::new(AttackKind::Identity)]).unwrap();
        let mut r = rng(4);
        for _ in 0..100 {
            assert_eq!(sched.sample(&mut r).kind, AttackKind::Identity);
        }
    }

    #[test]
    fn schedule_equal_weights_are_uniform() {
        let sched = AttackSchedule::new(vec![
            AttackSpec::new(AttackKind::Identity),
            AttackSpec::new(AttackKind::Gaussian { sigma: 0.1 }),
            AttackSpec::new(AttackKind::JpegPolyRound { quality: 50 }),
        ])
        .unwrap();
        let mut counts = [0usize; 3];
        let mut r = rng(5);
        let draws = 100_000;
        for _ in 0..draws {
            let s = sched.sample(&mut r);
            let idx = sched.specs().iter().position(|e| e == s).unwrap();
            counts[idx] += 1;
        }
        for &c in &counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 1.0 / 3.0).abs() < 0.02, "freq {freq}");
        }
    }

    #[test]
    fn schedule_sampling_is_deterministic() {
        let sched = AttackSchedule::new(vec![
            AttackSpec::weighted(AttackKind::Identity, 0.5),
            AttackSpec::weighted(AttackKind::Gaussian { sigma: 0.1 }, 1.5),
        ])
        .unwrap();
        let seq = |seed| {
            let mut r = rng(seed);
            (0..50)
                .map(|_| sched.sample(&mut r).kind.label())
                .collect::<Vec<_>>()
        };
        assert_eq!(seq(7), seq(7));
        assert_ne!(seq(7), seq(8));
    }

    #[test]
    fn schedule_rejects_degenerate_weights() {
        assert!(AttackSchedule::new(vec![]).is_err());
        assert!(
            AttackSchedule::new(vec![AttackSpec::weighted(AttackKind::Identity, 0.0)]).is_err()
        );
        assert!(
            AttackSchedule::new(vec![AttackSpec::weighted(AttackKind::Identity, -1.0)]).is_err()
        );
        let probs = AttackSchedule::new(vec![
            AttackSpec::weighted(AttackKind::Identity, 1.0),
            AttackSpec::weighted(AttackKind::Gaussian { sigma: 0.1 }, 3.0),
        ])
        .unwrap()
        .probabilities();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
