//! 8x8 two-dimensional DCT-II with JPEG normalization.
//!
//! Implemented separably as D * X * D^T with the orthonormal basis, which
//! equals the textbook quarter-scaled double sum. The inverse is the
//! transpose pair, so idct(dct(x)) reconstructs x to machine precision.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Orthonormal DCT basis matrix, row u, column x.
fn basis() -> &'static [f64; 64] {
    static BASIS: OnceLock<[f64; 64]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut m = [0.0; 64];
        for u in 0..8 {
            let amp = if u == 0 {
                (1.0f64 / 8.0).sqrt()
            } else {
                (2.0f64 / 8.0).sqrt()
            };
            for x in 0..8 {
                m[u * 8 + x] = amp * ((2.0 * x as f64 + 1.0) * u as f64 * PI / 16.0).cos();
            }
        }
        m
    })
}

/// Sandwich product A * X * A^T for 8x8 matrices.
fn apply(block: &[f64; 64], a: &[f64; 64]) -> [f64; 64] {
    let mut tmp = [0.0; 64];
    for i in 0..8 {
        for p in 0..8 {
            let av = a[i * 8 + p];
            for j in 0..8 {
                tmp[i * 8 + j] += av * block[p * 8 + j];
            }
        }
    }
    let mut out = [0.0; 64];
    for i in 0..8 {
        for j in 0..8 {
            let mut acc = 0.0;
            for p in 0..8 {
                acc += tmp[i * 8 + p] * a[j * 8 + p];
            }
            out[i * 8 + j] = acc;
        }
    }
    out
}

/// Forward 2-D DCT of a level-shifted 8x8 block: Y = D X D^T.
pub fn dct8x8(block: &[f64; 64]) -> [f64; 64] {
    apply(block, basis())
}

/// Inverse 2-D DCT: X = D^T Y D.
pub fn idct8x8(coeffs: &[f64; 64]) -> [f64; 64] {
    let d = basis();
    let mut dt = [0.0; 64];
    for i in 0..8 {
        for j in 0..8 {
            dt[j * 8 + i] = d[i * 8 + j];
        }
    }
    apply(coeffs, &dt)
}

/// Zig-zag scan order: `ZIGZAG[k]` is the natural (row-major) index of
/// the k-th coefficient along the scan.
pub const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27,
    20, 13, 6, 7, 14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58,
    59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63,
];

/// Zig-zag rank of each natural-order coefficient (inverse of [`ZIGZAG`]).
pub fn zigzag_rank() -> [usize; 64] {
    let mut rank = [0usize; 64];
    for (k, &nat) in ZIGZAG.iter().enumerate() {
        rank[nat] = k;
    }
    rank
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    /// Direct O(64^2) double-sum DCT-II with JPEG quarter normalization.
    fn dct_oracle(block: &[f64; 64]) -> [f64; 64] {
        let c = |u: usize| if u == 0 { 1.0 / 2.0f64.sqrt() } else { 1.0 };
        let mut out = [0.0; 64];
        for u in 0..8 {
            for v in 0..8 {
                let mut acc = 0.0;
                for x in 0..8 {
                    for y in 0..8 {
                        acc += block[x * 8 + y]
                            * ((2.0 * x as f64 + 1.0) * u as f64 * PI / 16.0).cos()
                            * ((2.0 * y as f64 + 1.0) * v as f64 * PI / 16.0).cos();
                    }
                }
                out[u * 8 + v] = 0.25 * c(u) * c(v) * acc;
            }
        }
        out
    }

    #[test]
    fn zero_block_transforms_to_zero() {
        let z = [0.0; 64];
        assert!(dct8x8(&z).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_block_has_only_dc() {
        let block = [13.0; 64];
        let coeffs = dct8x8(&block);
        assert!((coeffs[0] - 8.0 * 13.0).abs() < 1e-9);
        assert!(coeffs[1..].iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn matches_double_sum_oracle_and_inverts() {
        let mut rng = ChaCha12Rng::seed_from_u64(88);
        for _ in 0..1000 {
            let mut block = [0.0; 64];
            for b in block.iter_mut() {
                *b = rng.gen_range(-128.0..128.0);
            }
            let fwd = dct8x8(&block);
            let oracle = dct_oracle(&block);
            for (a, b) in fwd.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-9);
            }
            let back = idct8x8(&fwd);
            for (a, b) in back.iter().zip(&block) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zigzag_is_a_permutation() {
        let mut seen = [false; 64];
        for &i in ZIGZAG.iter() {
            assert!(!seen[i]);
            seen[i] = true;
        }
        // First few entries follow the standard scan.
        assert_eq!(&ZIGZAG[..6], &[0, 1, 8, 16, 9, 2]);
        let rank = zigzag_rank();
        assert_eq!(rank[0], 0);
        assert_eq!(rank[63], 63);
    }
}
