//! Dense compute kernels behind the tape ops.
//!
//! Convolution goes through im2col + a row-major matmul whose inner loop
//! runs over output columns, so the per-element accumulation order is
//! fixed regardless of how the compiler vectorizes it.

use super::{sc, Scalar};

/// out[m,n] += a[m,k] * b[k,n], all row-major.
///
/// Accumulation over p runs in index order for every output element, so
/// results are identical however the compiler vectorizes the j loop.
/// Wide outputs go through a 4-row block that reuses each B row.
pub(crate) fn matmul_acc<S: Scalar>(
    a: &[S],
    b: &[S],
    m: usize,
    k: usize,
    n: usize,
    out: &mut [S],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if n >= 64 {
        matmul_acc_blocked(a, b, m, k, n, out);
    } else {
        matmul_acc_rows(a, b, 0, m, k, n, out);
    }
}

fn matmul_acc_rows<S: Scalar>(
    a: &[S],
    b: &[S],
    i_start: usize,
    i_end: usize,
    k: usize,
    n: usize,
    out: &mut [S],
) {
    for i in i_start..i_end {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

fn matmul_acc_blocked<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    let mut rows: Vec<&mut [S]> = out.chunks_exact_mut(n).collect();
    let mut i = 0;
    while i + 4 <= m {
        if let [r0, r1, r2, r3] = &mut rows[i..i + 4] {
            let r0 = &mut r0[..n];
            let r1 = &mut r1[..n];
            let r2 = &mut r2[..n];
            let r3 = &mut r3[..n];
            for p in 0..k {
                let brow = &b[p * n..(p + 1) * n];
                let a0 = a[i * k + p];
                let a1 = a[(i + 1) * k + p];
                let a2 = a[(i + 2) * k + p];
                let a3 = a[(i + 3) * k + p];
                for (j, &bv) in brow.iter().enumerate() {
                    r0[j] = r0[j] + a0 * bv;
                    r1[j] = r1[j] + a1 * bv;
                    r2[j] = r2[j] + a2 * bv;
                    r3[j] = r3[j] + a3 * bv;
                }
            }
        }
        i += 4;
    }
    drop(rows);
    matmul_acc_rows(a, b, i, m, k, n, out);
}

pub(crate) fn transpose<S: Scalar>(src: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut dst = vec![S::zero(); src.len()];
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
    dst
}

struct ConvDims {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvDims {
    fn k_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn n_cols(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfold one item's [C,H,W] plane into [C*kh*kw, Ho*Wo] patch columns.
fn im2col<S: Scalar>(input: &[S], d: &ConvDims, cols: &mut [S]) {
    debug_assert_eq!(cols.len(), d.k_rows() * d.n_cols());
    cols.fill(S::zero());
    let n_cols = d.n_cols();
    let mut row = 0;
    for ci in 0..d.c {
        let plane = &input[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let dst_row = &mut cols[row * n_cols..(row + 1) * n_cols];
                for oy in 0..d.ho {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    let dst = &mut dst_row[oy * d.wo..(oy + 1) * d.wo];
                    if d.stride == 1 {
                        // ix = ox + kx - pad must land in [0, w)
                        let ox_lo = d.pad.saturating_sub(kx);
                        let ox_hi = (d.w + d.pad - kx).min(d.wo);
                        if ox_lo < ox_hi {
                            let ix_lo = ox_lo + kx - d.pad;
                            dst[ox_lo..ox_hi]
                                .copy_from_slice(&src_row[ix_lo..ix_lo + (ox_hi - ox_lo)]);
                        }
                    } else {
                        for (ox, dv) in dst.iter_mut().enumerate() {
                            let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                            if ix >= 0 && ix < d.w as isize {
                                *dv = src_row[ix as usize];
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add of patch-column gradients back onto the input plane.
fn col2im<S: Scalar>(cols: &[S], d: &ConvDims, dinput: &mut [S]) {
    let n_cols = d.n_cols();
    let mut row = 0;
    for ci in 0..d.c {
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let src_row = &cols[row * n_cols..(row + 1) * n_cols];
                for oy in 0..d.ho {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let base = ci * d.h * d.w + iy as usize * d.w;
                    for ox in 0..d.wo {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            let idx = base + ix as usize;
                            dinput[idx] = dinput[idx] + src_row[oy * d.wo + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_forward<S: Scalar>(
    input: &[S],
    (n, c, h, w): (usize, usize, usize, usize),
    kernel: &[S],
    (f, kh, kw): (usize, usize, usize),
    bias: Option<&[S]>,
    stride: usize,
    pad: usize,
) -> Vec<S> {
    let d = ConvDims {
        c,
        h,
        w,
        kh,
        kw,
        stride,
        pad,
        ho: (h + 2 * pad - kh) / stride + 1,
        wo: (w + 2 * pad - kw) / stride + 1,
    };
    let n_cols = d.n_cols();
    let mut out = vec![S::zero(); n * f * n_cols];
    let mut cols = vec![S::zero(); d.k_rows() * n_cols];
    for item in 0..n {
        im2col(&input[item * c * h * w..(item + 1) * c * h * w], &d, &mut cols);
        let out_item = &mut out[item * f * n_cols..(item + 1) * f * n_cols];
        matmul_acc(kernel, &cols, f, d.k_rows(), n_cols, out_item);
        if let Some(b) = bias {
            for (fi, row) in out_item.chunks_exact_mut(n_cols).enumerate() {
                let bv = b[fi];
                for o in row.iter_mut() {
                    *o = *o + bv;
                }
            }
        }
    }
    out
}

/// Gradients of conv2d. Any of the three outputs can be skipped.
#[allow(clippy::too_many_arguments, clippy::type_complexity)]
pub(crate) fn conv2d_backward<S: Scalar>(
    input: &[S],
    (n, c, h, w): (usize, usize, usize, usize),
    kernel: &[S],
    (f, kh, kw): (usize, usize, usize),
    upstream: &[S],
    stride: usize,
    pad: usize,
    want_dinput: bool,
    want_dkernel: bool,
    want_dbias: bool,
) -> (Option<Vec<S>>, Option<Vec<S>>, Option<Vec<S>>) {
    let d = ConvDims {
        c,
        h,
        w,
        kh,
        kw,
        stride,
        pad,
        ho: (h + 2 * pad - kh) / stride + 1,
        wo: (w + 2 * pad - kw) / stride + 1,
    };
    let n_cols = d.n_cols();
    let k_rows = d.k_rows();

    let mut dinput = want_dinput.then(|| vec![S::zero(); n * c * h * w]);
    let mut dkernel = want_dkernel.then(|| vec![S::zero(); f * k_rows]);
    let mut dbias = want_dbias.then(|| vec![S::zero(); f]);

    let kernel_t = want_dinput.then(|| transpose(kernel, f, k_rows));
    let mut cols = vec![S::zero(); k_rows * n_cols];
    let mut dcols = vec![S::zero(); k_rows * n_cols];

    let mut dkt = want_dkernel.then(|| vec![S::zero(); k_rows * f]);
    for item in 0..n {
        let up_item = &upstream[item * f * n_cols..(item + 1) * f * n_cols];
        if let Some(dkt) = dkt.as_mut() {
            im2col(&input[item * c * h * w..(item + 1) * c * h * w], &d, &mut cols);
            // dK^T[kq, f] += sum_j cols[kq, j] * up[f, j]; transposing the
            // small upstream factor keeps the matmul in streaming form.
            let up_t = transpose(up_item, f, n_cols);
            matmul_acc(&cols, &up_t, k_rows, n_cols, f, dkt);
        }
        if let (Some(kt), Some(di)) = (kernel_t.as_ref(), dinput.as_mut()) {
            dcols.fill(S::zero());
            matmul_acc(kt, up_item, k_rows, f, n_cols, &mut dcols);
            col2im(
                &dcols,
                &d,
                &mut di[item * c * h * w..(item + 1) * c * h * w],
            );
        }
        if let Some(db) = dbias.as_mut() {
            for (fi, row) in up_item.chunks_exact(n_cols).enumerate() {
                let total: S = row.iter().copied().sum();
                db[fi] = db[fi] + total;
            }
        }
    }
    if let (Some(dkt), Some(dk)) = (dkt.as_ref(), dkernel.as_mut()) {
        for q in 0..k_rows {
            for fi in 0..f {
                dk[fi * k_rows + q] = dkt[q * f + fi];
            }
        }
    }
    (dinput, dkernel, dbias)
}

/// Orthonormal 8-point DCT-II basis, row u, column x.
fn dct8_basis<S: Scalar>() -> [S; 64] {
    let mut m = [S::zero(); 64];
    for u in 0..8 {
        let amp = if u == 0 {
            (1.0f64 / 8.0).sqrt()
        } else {
            (2.0f64 / 8.0).sqrt()
        };
        for x in 0..8 {
            let angle = (2.0 * x as f64 + 1.0) * u as f64 * std::f64::consts::PI / 16.0;
            m[u * 8 + x] = sc(amp * angle.cos());
        }
    }
    m
}

fn mat8_mul<S: Scalar>(a: &[S; 64], b: &[S; 64]) -> [S; 64] {
    let mut out = [S::zero(); 64];
    for i in 0..8 {
        for p in 0..8 {
            let av = a[i * 8 + p];
            for j in 0..8 {
                out[i * 8 + j] = out[i * 8 + j] + av * b[p * 8 + j];
            }
        }
    }
    out
}

fn mat8_t<S: Scalar>(a: &[S; 64]) -> [S; 64] {
    let mut out = [S::zero(); 64];
    for i in 0..8 {
        for j in 0..8 {
            out[j * 8 + i] = a[i * 8 + j];
        }
    }
    out
}

/// Blockwise Y = A X A^T over every 8x8 spatial tile, A = DCT basis
/// (or its transpose for the inverse direction).
pub(crate) fn block_dct<S: Scalar>(data: &[S], shape: &[usize], inverse: bool) -> Vec<S> {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let basis = dct8_basis::<S>();
    let a = if inverse { mat8_t(&basis) } else { basis };
    let at = mat8_t(&a);
    let mut out = vec![S::zero(); data.len()];
    let plane = h * w;
    for pi in 0..n * c {
        let src = &data[pi * plane..(pi + 1) * plane];
        let dst = &mut out[pi * plane..(pi + 1) * plane];
        for by in (0..h).step_by(8) {
            for bx in (0..w).step_by(8) {
                let mut block = [S::zero(); 64];
                for y in 0..8 {
                    for x in 0..8 {
                        block[y * 8 + x] = src[(by + y) * w + bx + x];
                    }
                }
                let tmp = mat8_mul(&a, &block);
                let res = mat8_mul(&tmp, &at);
                for y in 0..8 {
                    for x in 0..8 {
                        dst[(by + y) * w + bx + x] = res[y * 8 + x];
                    }
                }
            }
        }
    }
    out
}

/// Full-range BT.601 RGB<->YCbCr matrices, derived from Kr/Kb.
pub(crate) fn ycc_forward_matrix() -> ([[f64; 3]; 3], [f64; 3]) {
    let (kr, kb) = (0.299, 0.114);
    let kg = 1.0 - kr - kb;
    let m = [
        [kr, kg, kb],
        [-0.5 * kr / (1.0 - kb), -0.5 * kg / (1.0 - kb), 0.5],
        [0.5, -0.5 * kg / (1.0 - kr), -0.5 * kb / (1.0 - kr)],
    ];
    (m, [0.0, 128.0, 128.0])
}

pub(crate) fn ycc_inverse_matrix() -> ([[f64; 3]; 3], [f64; 3]) {
    let (kr, kb) = (0.299, 0.114);
    let kg = 1.0 - kr - kb;
    let cr_r = 2.0 * (1.0 - kr);
    let cb_b = 2.0 * (1.0 - kb);
    let m = [
        [1.0, 0.0, cr_r],
        [1.0, -kb * cb_b / kg, -kr * cr_r / kg],
        [1.0, cb_b, 0.0],
    ];
    (m, [0.0, 128.0, 128.0])
}

/// Apply the color matrix per pixel on [N,3,H,W] planes (0..255 scale).
/// Forward: y = M*rgb + off. Inverse: y = M_inv*(ycc - off).
pub(crate) fn color_transform<S: Scalar>(data: &[S], shape: &[usize], inverse: bool) -> Vec<S> {
    let (n, h, w) = (shape[0], shape[2], shape[3]);
    let plane = h * w;
    let (m, off) = if inverse {
        ycc_inverse_matrix()
    } else {
        ycc_forward_matrix()
    };
    let ms: [[S; 3]; 3] = conv_mat(m);
    let offs: [S; 3] = [sc(off[0]), sc(off[1]), sc(off[2])];
    let mut out = vec![S::zero(); data.len()];
    for item in 0..n {
        let base = item * 3 * plane;
        for p in 0..plane {
            let v = [
                data[base + p],
                data[base + plane + p],
                data[base + 2 * plane + p],
            ];
            for ch in 0..3 {
                let row = &ms[ch];
                let val = if inverse {
                    row[0] * (v[0] - offs[0]) + row[1] * (v[1] - offs[1]) + row[2] * (v[2] - offs[2])
                } else {
                    row[0] * v[0] + row[1] * v[1] + row[2] * v[2] + offs[ch]
                };
                out[base + ch * plane + p] = val;
            }
        }
    }
    out
}

/// Gradient of [`color_transform`]: multiply by the transposed matrix.
pub(crate) fn color_transform_transposed<S: Scalar>(
    upstream: &[S],
    shape: &[usize],
    inverse: bool,
) -> Vec<S> {
    let (n, h, w) = (shape[0], shape[2], shape[3]);
    let plane = h * w;
    let (m, _) = if inverse {
        ycc_inverse_matrix()
    } else {
        ycc_forward_matrix()
    };
    let ms: [[S; 3]; 3] = conv_mat(m);
    let mut out = vec![S::zero(); upstream.len()];
    for item in 0..n {
        let base = item * 3 * plane;
        for p in 0..plane {
            let u = [
                upstream[base + p],
                upstream[base + plane + p],
                upstream[base + 2 * plane + p],
            ];
            for ch in 0..3 {
                // d/dx_ch = sum_r M[r][ch] * u[r]
                out[base + ch * plane + p] =
                    ms[0][ch] * u[0] + ms[1][ch] * u[1] + ms[2][ch] * u[2];
            }
        }
    }
    out
}

fn conv_mat<S: Scalar>(m: [[f64; 3]; 3]) -> [[S; 3]; 3] {
    let mut out = [[S::zero(); 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[i][j] = sc(v);
        }
    }
    out
}
