//! Operation records and their forward/backward rules.

use super::kernels;
use super::{sc, validate_shape, Scalar, Tape, TensorId};
use crate::error::{Error, Result};

/// One recorded operation. Parent links point backwards in the tape.
#[derive(Debug, Clone)]
pub enum Op<S: Scalar> {
    Leaf,
    /// Values copied from another node; contributes no gradient anywhere.
    StopGradient,
    /// Forward values were overwritten by the caller; backward is the
    /// identity into `a`. This is the straight-through primitive: the
    /// output behaves like `a + stop_gradient(target - a)`.
    StraightThrough { a: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    AddScalar { a: TensorId },
    MulScalar { a: TensorId, c: S },
    Relu { a: TensorId },
    Sigmoid { a: TensorId },
    Clamp01 { a: TensorId },
    /// round(x) + (x - round(x))^3, the differentiable rounding surrogate.
    PolyRound { a: TensorId },
    Mean { a: TensorId },
    MseLoss { a: TensorId, b: TensorId },
    BceLogits { logits: TensorId, targets: TensorId },
    Conv2d {
        input: TensorId,
        kernel: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        pad: usize,
    },
    Linear {
        input: TensorId,
        weight: TensorId,
        bias: TensorId,
    },
    AvgPoolSpatial { a: TensorId },
    TileSpatial { a: TensorId },
    ConcatChannels { parts: Vec<TensorId> },
    /// Per-8x8-block 2-D DCT (orthonormal); `inverse` selects the IDCT.
    BlockDct { a: TensorId, inverse: bool },
    /// Full-range BT.601 color transform on [N,3,H,W] in the 0..255 scale;
    /// `inverse` maps YCbCr back to RGB.
    ColorYcc { a: TensorId, inverse: bool },
}

impl<S: Scalar> Op<S> {
    pub(crate) fn parents(&self) -> Vec<TensorId> {
        match self {
            Op::Leaf | Op::StopGradient => vec![],
            Op::StraightThrough { a }
            | Op::AddScalar { a }
            | Op::MulScalar { a, .. }
            | Op::Relu { a }
            | Op::Sigmoid { a }
            | Op::Clamp01 { a }
            | Op::PolyRound { a }
            | Op::Mean { a }
            | Op::AvgPoolSpatial { a }
            | Op::TileSpatial { a }
            | Op::BlockDct { a, .. }
            | Op::ColorYcc { a, .. } => vec![*a],
            Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } | Op::MseLoss { a, b } => {
                vec![*a, *b]
            }
            Op::BceLogits { logits, targets } => vec![*logits, *targets],
            Op::Conv2d {
                input,
                kernel,
                bias,
                ..
            } => {
                let mut p = vec![*input, *kernel];
                if let Some(b) = bias {
                    p.push(*b);
                }
                p
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => vec![*input, *weight, *bias],
            Op::ConcatChannels { parts } => parts.clone(),
        }
    }
}

fn binary_shapes<'t, S: Scalar>(
    tape: &'t Tape<S>,
    op: &'static str,
    a: TensorId,
    b: TensorId,
) -> Result<(&'t [usize], bool, bool)> {
    let sa = tape.shape(a);
    let sb = tape.shape(b);
    if sa == sb {
        Ok((sa, false, false))
    } else if sb == [1] {
        Ok((sa, false, true))
    } else if sa == [1] {
        Ok((sb, true, false))
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })
    }
}

impl<S: Scalar> Tape<S> {
    /// Elementwise sum. Shapes must match, or one side may be a `[1]` scalar.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (shape, a_scalar, b_scalar) = binary_shapes(self, "add", a, b)?;
        let shape = shape.to_vec();
        let (da, db) = (self.data(a), self.data(b));
        let out: Vec<S> = if b_scalar {
            let bv = db[0];
            da.iter().map(|&x| x + bv).collect()
        } else if a_scalar {
            let av = da[0];
            db.iter().map(|&x| av + x).collect()
        } else {
            da.iter().zip(db).map(|(&x, &y)| x + y).collect()
        };
        let needs = self.any_needs_grad(&[a, b]);
        Ok(self.push(out, shape, Op::Add { a, b }, needs))
    }

    /// Elementwise difference, same broadcasting rules as [`Tape::add`].
    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (shape, a_scalar, b_scalar) = binary_shapes(self, "sub", a, b)?;
        let shape = shape.to_vec();
        let (da, db) = (self.data(a), self.data(b));
        let out: Vec<S> = if b_scalar {
            let bv = db[0];
            da.iter().map(|&x| x - bv).collect()
        } else if a_scalar {
            let av = da[0];
            db.iter().map(|&x| av - x).collect()
        } else {
            da.iter().zip(db).map(|(&x, &y)| x - y).collect()
        };
        let needs = self.any_needs_grad(&[a, b]);
        Ok(self.push(out, shape, Op::Sub { a, b }, needs))
    }

    /// Elementwise product, same broadcasting rules as [`Tape::add`].
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (shape, a_scalar, b_scalar) = binary_shapes(self, "mul", a, b)?;
        let shape = shape.to_vec();
        let (da, db) = (self.data(a), self.data(b));
        let out: Vec<S> = if b_scalar {
            let bv = db[0];
            da.iter().map(|&x| x * bv).collect()
        } else if a_scalar {
            let av = da[0];
            db.iter().map(|&x| av * x).collect()
        } else {
            da.iter().zip(db).map(|(&x, &y)| x * y).collect()
        };
        let needs = self.any_needs_grad(&[a, b]);
        Ok(self.push(out, shape, Op::Mul { a, b }, needs))
    }

    pub fn add_scalar(&mut self, a: TensorId, c: S) -> TensorId {
        let out: Vec<S> = self.data(a).iter().map(|&x| x + c).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs_grad(a);
        self.push(out, shape, Op::AddScalar { a }, needs)
    }

    pub fn mul_scalar(&mut self, a: TensorId, c: S) -> TensorId {
        let out: Vec<S> = self.data(a).iter().map(|&x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs_grad(a);
        self.push(out, shape, Op::MulScalar { a, c }, needs)
    }

    /// Alias for scalar multiplication.
    pub fn scale(&mut self, a: TensorId, c: S) -> TensorId {
        self.mul_scalar(a, c)
    }

    /// max(x, 0); the subgradient at 0 is taken as 0.
    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let out: Vec<S> = self
            .data(a)
            .iter()
            .map(|&x| if x > S::zero() { x } else { S::zero() })
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs_grad(a);
        self.push(out, shape, Op::Relu { a }, needs)
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let out: Vec<S> = self.data(a).iter().map(|&x| sigmoid_stable(x)).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs_grad(a);
        self.push(out, shape, Op::Sigmoid { a }, needs)
    }

    /// Clamp to [0, 1]. Gradient passes through inside the range
    /// (boundaries inclusive) and is zero outside.
    pub fn clamp01(&mut self, a: TensorId) -> TensorId {
        let one = S::one();
        let out: Vec<S> = self
            .data(a)
            .iter()
            .map(|&x| {
                if x < S::zero() {
                    S::zero()
                } else if x > one {
                    one
                } else {
                    x
                }
            })
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs_grad(a);
        self.push(out, shape, Op::Clamp01 { a }, needs)
    }

    /// Differentiable rounding surrogate round(x) + (x - round(x))^3.
    /// round is half-away-from-zero; the residual is cubed, so the output
    /// never deviates from true rounding by more than 0.125.
    pub fn poly_round(&mut self, a: TensorId) -> TensorId {
        let out: Vec<S> = self
            .data(a)
            .iter()
            .map(|&x| {
                let r = x - x.round();
                x.round() + r * r * r
            })
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs_grad(a);
        self.push(out, shape, Op::PolyRound { a }, needs)
    }

    /// Mean over all elements, producing a `[1]` scalar.
    pub fn mean(&mut self, a: TensorId) -> Result<TensorId> {
        let data = self.data(a);
        let n = sc::<S>(data.len() as f64);
        let total: S = data.iter().copied().sum();
        let m = total / n;
        if !m.is_finite() {
            return Err(Error::NonFinite {
                what: "mean".into(),
            });
        }
        let needs = self.needs_grad(a);
        Ok(self.push(vec![m], vec![1], Op::Mean { a }, needs))
    }

    /// Mean squared error between same-shape tensors, as a `[1]` scalar.
    pub fn mse_loss(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "mse_loss",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let (da, db) = (self.data(a), self.data(b));
        let n = sc::<S>(da.len() as f64);
        let total: S = da
            .iter()
            .zip(db)
            .map(|(&x, &y)| {
                let d = x - y;
                d * d
            })
            .sum();
        let m = total / n;
        if !m.is_finite() {
            return Err(Error::NonFinite {
                what: "mse_loss".into(),
            });
        }
        let needs = self.any_needs_grad(&[a, b]);
        Ok(self.push(vec![m], vec![1], Op::MseLoss { a, b }, needs))
    }

    /// Binary cross-entropy on logits, mean-reduced, in the numerically
    /// stable form max(x,0) - x*t + ln(1 + exp(-|x|)).
    pub fn bce_with_logits(&mut self, logits: TensorId, targets: TensorId) -> Result<TensorId> {
        if self.shape(logits) != self.shape(targets) {
            return Err(Error::ShapeMismatch {
                op: "bce_with_logits",
                lhs: self.shape(logits).to_vec(),
                rhs: self.shape(targets).to_vec(),
            });
        }
        let (dl, dt) = (self.data(logits), self.data(targets));
        if dt.iter().any(|&t| t != S::zero() && t != S::one()) {
            return Err(Error::BadDimensions {
                op: "bce_with_logits",
                msg: "targets must be exactly 0 or 1".into(),
            });
        }
        let n = sc::<S>(dl.len() as f64);
        let total: S = dl
            .iter()
            .zip(dt)
            .map(|(&x, &t)| x.max(S::zero()) - x * t + (S::one() + (-x.abs()).exp()).ln())
            .sum();
        let m = total / n;
        if !m.is_finite() {
            return Err(Error::NonFinite {
                what: "bce_with_logits".into(),
            });
        }
        let needs = self.any_needs_grad(&[logits, targets]);
        Ok(self.push(vec![m], vec![1], Op::BceLogits { logits, targets }, needs))
    }

    /// Copy values of `a` into a fresh graph leaf. Backward contributes
    /// zero gradient to `a` through this edge.
    pub fn stop_gradient(&mut self, a: TensorId) -> TensorId {
        let data = self.data(a).to_vec();
        let shape = self.shape(a).to_vec();
        self.push(data, shape, Op::StopGradient, false)
    }

    /// Straight-through node: forward takes `target` verbatim, backward
    /// treats the op as the identity on `a`. Equivalent to
    /// `a + stop_gradient(target - a)` with the forward value pinned
    /// bit-exactly to `target`.
    pub fn straight_through(&mut self, a: TensorId, target: Vec<S>) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        validate_shape(target.len(), &shape, "straight_through")?;
        let needs = self.needs_grad(a);
        Ok(self.push(target, shape, Op::StraightThrough { a }, needs))
    }

    /// 2-D convolution of [N,C,H,W] with kernel [F,C,k,k], optional per-
    /// filter bias [F]. Output is [N,F,H',W'] with
    /// H' = (H + 2*pad - k) / stride + 1 (floor).
    pub fn conv2d(
        &mut self,
        input: TensorId,
        kernel: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        pad: usize,
    ) -> Result<TensorId> {
        let ishape = self.shape(input).to_vec();
        let kshape = self.shape(kernel).to_vec();
        if ishape.len() != 4 || kshape.len() != 4 {
            return Err(Error::BadDimensions {
                op: "conv2d",
                msg: format!("expected 4-D input and kernel, got {ishape:?} and {kshape:?}"),
            });
        }
        let (n, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
        let (f, kc, kh, kw) = (kshape[0], kshape[1], kshape[2], kshape[3]);
        if kc != c {
            return Err(Error::BadDimensions {
                op: "conv2d",
                msg: format!("kernel expects {kc} input channels, input has {c}"),
            });
        }
        if stride == 0 {
            return Err(Error::BadDimensions {
                op: "conv2d",
                msg: "stride must be >= 1".into(),
            });
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::BadDimensions {
                op: "conv2d",
                msg: format!(
                    "kernel {kh}x{kw} larger than padded input {}x{}",
                    h + 2 * pad,
                    w + 2 * pad
                ),
            });
        }
        if let Some(b) = bias {
            if self.shape(b) != [f] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: self.shape(b).to_vec(),
                    rhs: vec![f],
                });
            }
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let out = kernels::conv2d_forward(
            self.data(input),
            (n, c, h, w),
            self.data(kernel),
            (f, kh, kw),
            bias.map(|b| self.data(b)),
            stride,
            pad,
        );
        let mut parents = vec![input, kernel];
        if let Some(b) = bias {
            parents.push(b);
        }
        let needs = self.any_needs_grad(&parents);
        Ok(self.push(
            out,
            vec![n, f, ho, wo],
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            },
            needs,
        ))
    }

    /// Fully connected layer: [N,Ci] x [Ci,Co] + [Co] -> [N,Co].
    pub fn linear(&mut self, input: TensorId, weight: TensorId, bias: TensorId) -> Result<TensorId> {
        let ishape = self.shape(input).to_vec();
        let wshape = self.shape(weight).to_vec();
        if ishape.len() != 2 || wshape.len() != 2 || ishape[1] != wshape[0] {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: ishape,
                rhs: wshape,
            });
        }
        let (n, ci, co) = (ishape[0], ishape[1], wshape[1]);
        if self.shape(bias) != [co] {
            return Err(Error::ShapeMismatch {
                op: "linear bias",
                lhs: self.shape(bias).to_vec(),
                rhs: vec![co],
            });
        }
        let mut out = vec![S::zero(); n * co];
        kernels::matmul_acc(self.data(input), self.data(weight), n, ci, co, &mut out);
        let bdata = self.data(bias);
        for row in out.chunks_exact_mut(co) {
            for (o, &b) in row.iter_mut().zip(bdata) {
                *o = *o + b;
            }
        }
        let needs = self.any_needs_grad(&[input, weight, bias]);
        Ok(self.push(
            out,
            vec![n, co],
            Op::Linear {
                input,
                weight,
                bias,
            },
            needs,
        ))
    }

    /// Global average over the spatial dimensions: [N,C,H,W] -> [N,C].
    pub fn avg_pool_spatial(&mut self, a: TensorId) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 4 {
            return Err(Error::BadDimensions {
                op: "avg_pool_spatial",
                msg: format!("expected 4-D input, got {shape:?}"),
            });
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let hw = sc::<S>((h * w) as f64);
        let data = self.data(a);
        let mut out = vec![S::zero(); n * c];
        for (i, o) in out.iter_mut().enumerate() {
            let plane = &data[i * h * w..(i + 1) * h * w];
            let total: S = plane.iter().copied().sum();
            *o = total / hw;
        }
        let needs = self.needs_grad(a);
        Ok(self.push(out, vec![n, c], Op::AvgPoolSpatial { a }, needs))
    }

    /// Replicate each [N,C] entry over an HxW plane: [N,C] -> [N,C,H,W].
    pub fn tile_spatial(&mut self, a: TensorId, h: usize, w: usize) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 || h == 0 || w == 0 {
            return Err(Error::BadDimensions {
                op: "tile_spatial",
                msg: format!("expected 2-D input and positive target size, got {shape:?}, {h}x{w}"),
            });
        }
        let (n, c) = (shape[0], shape[1]);
        let data = self.data(a);
        let mut out = vec![S::zero(); n * c * h * w];
        for (i, &v) in data.iter().enumerate() {
            out[i * h * w..(i + 1) * h * w].fill(v);
        }
        let needs = self.needs_grad(a);
        Ok(self.push(out, vec![n, c, h, w], Op::TileSpatial { a }, needs))
    }

    /// Concatenate [N,Ci,H,W] tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::BadDimensions {
                op: "concat_channels",
                msg: "need at least one tensor".into(),
            });
        }
        let first = self.shape(parts[0]).to_vec();
        if first.len() != 4 {
            return Err(Error::BadDimensions {
                op: "concat_channels",
                msg: format!("expected 4-D inputs, got {first:?}"),
            });
        }
        let (n, h, w) = (first[0], first[2], first[3]);
        let mut c_total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 4 || s[0] != n || s[2] != h || s[3] != w {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            c_total += s[1];
        }
        let plane = h * w;
        let mut out = vec![S::zero(); n * c_total * plane];
        for item in 0..n {
            let mut c_off = 0;
            for &p in parts {
                let cp = self.shape(p)[1];
                let src = &self.data(p)[item * cp * plane..(item + 1) * cp * plane];
                let dst_start = item * c_total * plane + c_off * plane;
                out[dst_start..dst_start + cp * plane].copy_from_slice(src);
                c_off += cp;
            }
        }
        let needs = self.any_needs_grad(parts);
        Ok(self.push(
            out,
            vec![n, c_total, h, w],
            Op::ConcatChannels {
                parts: parts.to_vec(),
            },
            needs,
        ))
    }

    /// Orthonormal 2-D DCT applied to each 8x8 spatial block of every
    /// channel. Requires H and W to be multiples of 8.
    pub fn block_dct8(&mut self, a: TensorId) -> Result<TensorId> {
        self.block_dct_impl(a, false)
    }

    /// Inverse of [`Tape::block_dct8`].
    pub fn block_idct8(&mut self, a: TensorId) -> Result<TensorId> {
        self.block_dct_impl(a, true)
    }

    fn block_dct_impl(&mut self, a: TensorId, inverse: bool) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 4 || shape[2] % 8 != 0 || shape[3] % 8 != 0 {
            return Err(Error::BadDimensions {
                op: "block_dct8",
                msg: format!("expected [N,C,8m,8n] input, got {shape:?}"),
            });
        }
        let out = kernels::block_dct(self.data(a), &shape, inverse);
        let needs = self.needs_grad(a);
        Ok(self.push(out, shape, Op::BlockDct { a, inverse }, needs))
    }

    /// RGB -> YCbCr (BT.601 full range) on [N,3,H,W] in the 0..255 scale.
    pub fn rgb_to_ycc(&mut self, a: TensorId) -> Result<TensorId> {
        self.color_impl(a, false)
    }

    /// YCbCr -> RGB inverse of [`Tape::rgb_to_ycc`].
    pub fn ycc_to_rgb(&mut self, a: TensorId) -> Result<TensorId> {
        self.color_impl(a, true)
    }

    fn color_impl(&mut self, a: TensorId, inverse: bool) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::BadDimensions {
                op: "color transform",
                msg: format!("expected [N,3,H,W] input, got {shape:?}"),
            });
        }
        let out = kernels::color_transform(self.data(a), &shape, inverse);
        let needs = self.needs_grad(a);
        Ok(self.push(out, shape, Op::ColorYcc { a, inverse }, needs))
    }

    /// Backward rule dispatch: accumulate `upstream` into the parents of
    /// node `i`.
    pub(super) fn accumulate_parents(&mut self, i: usize, upstream: &[S]) -> Result<()> {
        // Split borrows: nodes are read-only here, grads are written.
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf | Op::StopGradient => {}
            Op::StraightThrough { a } => {
                if self.nodes[a.0].needs_grad {
                    for (g, &u) in self.grad_buf(a).iter_mut().zip(upstream) {
                        *g = *g + u;
                    }
                }
            }
            Op::Add { a, b } => {
                self.acc_linear(a, upstream, S::one());
                self.acc_linear(b, upstream, S::one());
            }
            Op::Sub { a, b } => {
                self.acc_linear(a, upstream, S::one());
                self.acc_linear(b, upstream, -S::one());
            }
            Op::Mul { a, b } => {
                if self.nodes[a.0].needs_grad {
                    let factors: Vec<S> = self.mul_factor(b, a, upstream);
                    for (g, f) in self.grad_buf(a).iter_mut().zip(factors) {
                        *g = *g + f;
                    }
                }
                if self.nodes[b.0].needs_grad {
                    let factors: Vec<S> = self.mul_factor(a, b, upstream);
                    for (g, f) in self.grad_buf(b).iter_mut().zip(factors) {
                        *g = *g + f;
                    }
                }
            }
            Op::AddScalar { a } => self.acc_linear(a, upstream, S::one()),
            Op::MulScalar { a, c } => self.acc_linear(a, upstream, c),
            Op::Relu { a } => {
                if self.nodes[a.0].needs_grad {
                    let mask: Vec<S> = self.nodes[a.0]
                        .data
                        .iter()
                        .zip(upstream)
                        .map(|(&x, &u)| if x > S::zero() { u } else { S::zero() })
                        .collect();
                    for (g, m) in self.grad_buf(a).iter_mut().zip(mask) {
                        *g = *g + m;
                    }
                }
            }
            Op::Sigmoid { a } => {
                if self.nodes[a.0].needs_grad {
                    let contrib: Vec<S> = self.nodes[i]
                        .data
                        .iter()
                        .zip(upstream)
                        .map(|(&y, &u)| u * y * (S::one() - y))
                        .collect();
                    for (g, c) in self.grad_buf(a).iter_mut().zip(contrib) {
                        *g = *g + c;
                    }
                }
            }
            Op::Clamp01 { a } => {
                if self.nodes[a.0].needs_grad {
                    let contrib: Vec<S> = self.nodes[a.0]
                        .data
                        .iter()
                        .zip(upstream)
                        .map(|(&x, &u)| {
                            if x >= S::zero() && x <= S::one() {
                                u
                            } else {
                                S::zero()
                            }
                        })
                        .collect();
                    for (g, c) in self.grad_buf(a).iter_mut().zip(contrib) {
                        *g = *g + c;
                    }
                }
            }
            Op::PolyRound { a } => {
                if self.nodes[a.0].needs_grad {
                    let three = sc::<S>(3.0);
                    let contrib: Vec<S> = self.nodes[a.0]
                        .data
                        .iter()
                        .zip(upstream)
                        .map(|(&x, &u)| {
                            let r = x - x.round();
                            u * three * r * r
                        })
                        .collect();
                    for (g, c) in self.grad_buf(a).iter_mut().zip(contrib) {
                        *g = *g + c;
                    }
                }
            }
            Op::Mean { a } => {
                if self.nodes[a.0].needs_grad {
                    let n = sc::<S>(self.nodes[a.0].data.len() as f64);
                    let u = upstream[0] / n;
                    for g in self.grad_buf(a).iter_mut() {
                        *g = *g + u;
                    }
                }
            }
            Op::MseLoss { a, b } => {
                let n = sc::<S>(self.nodes[a.0].data.len() as f64);
                let coef = sc::<S>(2.0) * upstream[0] / n;
                if self.nodes[a.0].needs_grad {
                    let contrib: Vec<S> = self.nodes[a.0]
                        .data
                        .iter()
                        .zip(&self.nodes[b.0].data)
                        .map(|(&x, &y)| coef * (x - y))
                        .collect();
                    for (g, c) in self.grad_buf(a).iter_mut().zip(contrib) {
                        *g = *g + c;
                    }
                }
                if self.nodes[b.0].needs_grad {
                    let contrib: Vec<S> = self.nodes[a.0]
                        .data
                        .iter()
                        .zip(&self.nodes[b.0].data)
                        .map(|(&x, &y)| -coef * (x - y))
                        .collect();
                    for (g, c) in self.grad_buf(b).iter_mut().zip(contrib) {
                        *g = *g + c;
                    }
                }
            }
            Op::BceLogits { logits, targets } => {
                if self.nodes[logits.0].needs_grad {
                    let n = sc::<S>(self.nodes[logits.0].data.len() as f64);
                    let coef = upstream[0] / n;
                    let contrib: Vec<S> = self.nodes[logits.0]
                        .data
                        .iter()
                        .zip(&self.nodes[targets.0].data)
                        .map(|(&x, &t)| coef * (sigmoid_stable(x) - t))
                        .collect();
                    for (g, c) in self.grad_buf(logits).iter_mut().zip(contrib) {
                        *g = *g + c;
                    }
                }
                // Targets are labels; no gradient is defined for them.
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            } => {
                let ishape = self.nodes[input.0].shape.clone();
                let kshape = self.nodes[kernel.0].shape.clone();
                let want_din = self.nodes[input.0].needs_grad;
                let want_dk = self.nodes[kernel.0].needs_grad;
                let want_db = bias.map(|b| self.nodes[b.0].needs_grad).unwrap_or(false);
                let (din, dk, db) = kernels::conv2d_backward(
                    &self.nodes[input.0].data,
                    (ishape[0], ishape[1], ishape[2], ishape[3]),
                    &self.nodes[kernel.0].data,
                    (kshape[0], kshape[2], kshape[3]),
                    upstream,
                    stride,
                    pad,
                    want_din,
                    want_dk,
                    want_db,
                );
                if let Some(d) = din {
                    for (g, v) in self.grad_buf(input).iter_mut().zip(d) {
                        *g = *g + v;
                    }
                }
                if let Some(d) = dk {
                    for (g, v) in self.grad_buf(kernel).iter_mut().zip(d) {
                        *g = *g + v;
                    }
                }
                if let (Some(d), Some(b)) = (db, bias) {
                    for (g, v) in self.grad_buf(b).iter_mut().zip(d) {
                        *g = *g + v;
                    }
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let n = self.nodes[input.0].shape[0];
                let ci = self.nodes[input.0].shape[1];
                let co = self.nodes[weight.0].shape[1];
                if self.nodes[input.0].needs_grad {
                    // dIn = upstream [N,Co] x W^T [Co,Ci]
                    let wt = kernels::transpose(&self.nodes[weight.0].data, ci, co);
                    let mut din = vec![S::zero(); n * ci];
                    kernels::matmul_acc(upstream, &wt, n, co, ci, &mut din);
                    for (g, v) in self.grad_buf(input).iter_mut().zip(din) {
                        *g = *g + v;
                    }
                }
                if self.nodes[weight.0].needs_grad {
                    // dW = in^T [Ci,N] x upstream [N,Co]
                    let it = kernels::transpose(&self.nodes[input.0].data, n, ci);
                    let mut dw = vec![S::zero(); ci * co];
                    kernels::matmul_acc(&it, upstream, ci, n, co, &mut dw);
                    for (g, v) in self.grad_buf(weight).iter_mut().zip(dw) {
                        *g = *g + v;
                    }
                }
                if self.nodes[bias.0].needs_grad {
                    let mut db = vec![S::zero(); co];
                    for row in upstream.chunks_exact(co) {
                        for (d, &u) in db.iter_mut().zip(row) {
                            *d = *d + u;
                        }
                    }
                    for (g, v) in self.grad_buf(bias).iter_mut().zip(db) {
                        *g = *g + v;
                    }
                }
            }
            Op::AvgPoolSpatial { a } => {
                if self.nodes[a.0].needs_grad {
                    let shape = &self.nodes[a.0].shape;
                    let (h, w) = (shape[2], shape[3]);
                    let hw = sc::<S>((h * w) as f64);
                    let ups = upstream.to_vec();
                    let buf = self.grad_buf(a);
                    for (i, &u) in ups.iter().enumerate() {
                        let v = u / hw;
                        for g in buf[i * h * w..(i + 1) * h * w].iter_mut() {
                            *g = *g + v;
                        }
                    }
                }
            }
            Op::TileSpatial { a } => {
                if self.nodes[a.0].needs_grad {
                    let oshape = self.nodes[i].shape.clone();
                    let (h, w) = (oshape[2], oshape[3]);
                    let sums: Vec<S> = upstream
                        .chunks_exact(h * w)
                        .map(|plane| plane.iter().copied().sum())
                        .collect();
                    for (g, v) in self.grad_buf(a).iter_mut().zip(sums) {
                        *g = *g + v;
                    }
                }
            }
            Op::ConcatChannels { parts } => {
                let oshape = self.nodes[i].shape.clone();
                let (n, c_total, h, w) = (oshape[0], oshape[1], oshape[2], oshape[3]);
                let plane = h * w;
                let mut c_off = 0;
                for &p in &parts {
                    let cp = self.nodes[p.0].shape[1];
                    if self.nodes[p.0].needs_grad {
                        let mut contrib = vec![S::zero(); n * cp * plane];
                        for item in 0..n {
                            let src_start = item * c_total * plane + c_off * plane;
                            contrib[item * cp * plane..(item + 1) * cp * plane]
                                .copy_from_slice(&upstream[src_start..src_start + cp * plane]);
                        }
                        for (g, v) in self.grad_buf(p).iter_mut().zip(contrib) {
                            *g = *g + v;
                        }
                    }
                    c_off += cp;
                }
            }
            Op::BlockDct { a, inverse } => {
                if self.nodes[a.0].needs_grad {
                    // Orthonormal transform: backward is the opposite direction.
                    let shape = self.nodes[i].shape.clone();
                    let contrib = kernels::block_dct(upstream, &shape, !inverse);
                    for (g, v) in self.grad_buf(a).iter_mut().zip(contrib) {
                        *g = *g + v;
                    }
                }
            }
            Op::ColorYcc { a, inverse } => {
                if self.nodes[a.0].needs_grad {
                    let shape = self.nodes[i].shape.clone();
                    let contrib = kernels::color_transform_transposed(upstream, &shape, inverse);
                    for (g, v) in self.grad_buf(a).iter_mut().zip(contrib) {
                        *g = *g + v;
                    }
                }
            }
        }
        Ok(())
    }

    /// Accumulate `coef * upstream` into the gradient of `target`,
    /// summing when the target is a broadcast `[1]` scalar.
    fn acc_linear(&mut self, target: TensorId, upstream: &[S], coef: S) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        let tlen = self.nodes[target.0].data.len();
        if tlen == upstream.len() {
            for (g, &u) in self.grad_buf(target).iter_mut().zip(upstream) {
                *g = *g + coef * u;
            }
        } else {
            debug_assert_eq!(tlen, 1);
            let total: S = upstream.iter().copied().sum();
            self.grad_buf(target)[0] = self.grad_buf(target)[0] + coef * total;
        }
    }

    /// Per-element product of `upstream` with the co-factor node, shaped
    /// for the gradient of `target` (handles `[1]` broadcasting).
    fn mul_factor(&self, cofactor: TensorId, target: TensorId, upstream: &[S]) -> Vec<S> {
        let co = &self.nodes[cofactor.0].data;
        let tlen = self.nodes[target.0].data.len();
        if tlen == upstream.len() {
            if co.len() == 1 {
                upstream.iter().map(|&u| u * co[0]).collect()
            } else {
                upstream.iter().zip(co).map(|(&u, &c)| u * c).collect()
            }
        } else {
            // Target was the broadcast scalar: reduce.
            debug_assert_eq!(tlen, 1);
            let total: S = upstream.iter().zip(co).map(|(&u, &c)| u * c).sum();
            vec![total]
        }
    }
}

#[inline]
fn sigmoid_stable<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}
