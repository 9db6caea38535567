//! Encoder and decoder networks: embed a bit message into a cover image
//! with minimal distortion, and recover it from the attacked image.
//!
//! The encoder runs two conv blocks over the cover, concatenates the
//! spatially replicated message and the cover itself, runs two more conv
//! blocks and a sigmoid head, producing an encoded image in [0,1]. The
//! decoder stacks five conv blocks (strides configurable), global average
//! pooling and a linear head to one logit per message bit. All sizes live
//! in the descriptor so small configurations are first-class.

use crate::error::{Error, Result};
use crate::tensor::{sc, Scalar, Tape, TensorId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Architecture description: everything needed to size the parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelDescriptor {
    /// Square image side in pixels.
    pub image_size: usize,
    /// Message length L in bits.
    pub message_len: usize,
    /// Channel width of the encoder conv blocks.
    pub enc_width: usize,
    /// Channel width of the decoder conv blocks.
    pub dec_width: usize,
    /// Stride of each of the five decoder blocks.
    pub dec_strides: [usize; 5],
}

impl ModelDescriptor {
    pub fn new(image_size: usize, message_len: usize) -> Self {
        ModelDescriptor {
            image_size,
            message_len,
            enc_width: 32,
            dec_width: 32,
            dec_strides: [1, 2, 1, 2, 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 {
            return Err(Error::Config(format!(
                "image_size must be >= 8, got {}",
                self.image_size
            )));
        }
        if self.message_len == 0 {
            return Err(Error::Config("message_len must be >= 1".into()));
        }
        if self.enc_width == 0 || self.dec_width == 0 {
            return Err(Error::Config("channel widths must be >= 1".into()));
        }
        if self.dec_strides.iter().any(|&s| s == 0) {
            return Err(Error::Config("decoder strides must be >= 1".into()));
        }
        Ok(())
    }
}

/// One parameter tensor with a stable name.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Ordered collection of all encoder and decoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub desc: ModelDescriptor,
    pub tensors: Vec<NamedTensor>,
}

/// Shapes of every parameter tensor, in serialization order.
fn parameter_shapes(desc: &ModelDescriptor) -> Vec<(String, Vec<usize>)> {
    let (w, d, l) = (desc.enc_width, desc.dec_width, desc.message_len);
    let cat = w + l + 3;
    let mut shapes = vec![
        ("enc.conv1.w".into(), vec![w, 3, 3, 3]),
        ("enc.conv1.b".into(), vec![w]),
        ("enc.conv2.w".into(), vec![w, w, 3, 3]),
        ("enc.conv2.b".into(), vec![w]),
        ("enc.conv3.w".into(), vec![w, cat, 3, 3]),
        ("enc.conv3.b".into(), vec![w]),
        ("enc.conv4.w".into(), vec![w, w, 3, 3]),
        ("enc.conv4.b".into(), vec![w]),
        ("enc.head.w".into(), vec![3, w, 3, 3]),
        ("enc.head.b".into(), vec![3]),
    ];
    let mut c_in = 3;
    for i in 1..=5 {
        shapes.push((format!("dec.conv{i}.w"), vec![d, c_in, 3, 3]));
        shapes.push((format!("dec.conv{i}.b"), vec![d]));
        c_in = d;
    }
    shapes.push(("dec.fc.w".into(), vec![d, l]));
    shapes.push(("dec.fc.b".into(), vec![l]));
    shapes
}

/// Deterministic fan-in-scaled uniform initialization.
///
/// Weights draw from U(-b, b) with b = sqrt(6 / fan_in), giving a target
/// standard deviation of sqrt(2 / fan_in); biases start at zero.
pub fn init_params(desc: &ModelDescriptor, seed: u64) -> Result<ModelParams> {
    desc.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let tensors = parameter_shapes(desc)
        .into_iter()
        .map(|(name, shape)| {
            let numel: usize = shape.iter().product();
            let data = if name.ends_with(".b") {
                vec![0.0f32; numel]
            } else {
                let fan_in: usize = if shape.len() == 4 {
                    shape[1] * shape[2] * shape[3]
                } else {
                    shape[0]
                };
                let bound = (6.0 / fan_in as f64).sqrt();
                (0..numel)
                    .map(|_| rng.gen_range(-bound..bound) as f32)
                    .collect()
            };
            NamedTensor { name, shape, data }
        })
        .collect();
    Ok(ModelParams {
        desc: desc.clone(),
        tensors,
    })
}

impl ModelParams {
    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Insert every parameter as a tape leaf, in order.
    pub fn insert_into<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        requires_grad: bool,
    ) -> Result<TapeParams> {
        let mut ids = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let data: Vec<S> = t.data.iter().map(|&v| sc(v as f64)).collect();
            let id = tape.leaf(data, &t.shape, requires_grad)?;
            ids.push((t.name.clone(), id));
        }
        Ok(TapeParams { ids })
    }
}

/// Tape-resident handles of the parameter leaves.
pub struct TapeParams {
    ids: Vec<(String, TensorId)>,
}

impl TapeParams {
    pub fn id(&self, name: &str) -> TensorId {
        self.ids
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, TensorId)> {
        self.ids.iter().map(|(n, id)| (n.as_str(), *id))
    }
}

/// Fixed-length bit message, the hidden payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message(Vec<u8>);

impl Message {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::Message("message must have at least one bit".into()));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Message("bits must be 0 or 1".into()));
        }
        Ok(Message(bits))
    }

    pub fn random(len: usize, rng: &mut ChaCha12Rng) -> Self {
        Message((0..len).map(|_| rng.gen_range(0..=1u8)).collect())
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Parse from a hex string, most-significant bit first. The string
    /// must have exactly ceil(L/4) digits and any bits above L must be 0.
    pub fn from_hex(s: &str, len: usize) -> Result<Self> {
        let digits = len.div_ceil(4);
        let s = s.trim();
        if s.len() != digits {
            return Err(Error::Message(format!(
                "expected {digits} hex digits for {len} bits, got {}",
                s.len()
            )));
        }
        let mut all_bits = Vec::with_capacity(digits * 4);
        for ch in s.chars() {
            let v = ch
                .to_digit(16)
                .ok_or_else(|| Error::Message(format!("invalid hex digit `{ch}`")))?;
            for k in (0..4).rev() {
                all_bits.push(((v >> k) & 1) as u8);
            }
        }
        let pad = digits * 4 - len;
        if all_bits[..pad].iter().any(|&b| b != 0) {
            return Err(Error::Message(format!(
                "top {pad} pad bits must be zero for a {len}-bit message"
            )));
        }
        Message::new(all_bits[pad..].to_vec())
    }

    /// Hex rendering, inverse of [`Message::from_hex`].
    pub fn to_hex(&self) -> String {
        let len = self.0.len();
        let digits = len.div_ceil(4);
        let pad = digits * 4 - len;
        let mut padded = vec![0u8; pad];
        padded.extend_from_slice(&self.0);
        padded
            .chunks_exact(4)
            .map(|nib| {
                let v = (nib[0] << 3) | (nib[1] << 2) | (nib[2] << 1) | nib[3];
                char::from_digit(v as u32, 16).expect("nibble")
            })
            .collect()
    }
}

/// Pack a batch of messages into a [N,L] tensor of 0/1 values.
pub fn messages_to_tensor<S: Scalar>(
    tape: &mut Tape<S>,
    msgs: &[Message],
    message_len: usize,
) -> Result<TensorId> {
    if msgs.is_empty() {
        return Err(Error::Message("empty message batch".into()));
    }
    let mut data = Vec::with_capacity(msgs.len() * message_len);
    for m in msgs {
        if m.len() != message_len {
            return Err(Error::Message(format!(
                "message length {} does not match model length {message_len}",
                m.len()
            )));
        }
        data.extend(m.bits().iter().map(|&b| sc::<S>(b as f64)));
    }
    tape.constant(data, &[msgs.len(), message_len])
}

/// Threshold logits at zero; ties decode as 0.
pub fn logits_to_bits<S: Scalar>(logits: &[S]) -> Vec<u8> {
    logits
        .iter()
        .map(|&v| if v > S::zero() { 1 } else { 0 })
        .collect()
}

/// Run the encoder: cover [N,3,H,W] in [0,1] plus messages [N,L] to an
/// encoded image of the same shape, bounded to [0,1] by the sigmoid head.
pub fn encode<S: Scalar>(
    tape: &mut Tape<S>,
    desc: &ModelDescriptor,
    params: &TapeParams,
    cover: TensorId,
    msgs: TensorId,
) -> Result<TensorId> {
    let shape = tape.shape(cover).to_vec();
    let side = desc.image_size;
    if shape.len() != 4 || shape[1] != 3 || shape[2] != side || shape[3] != side {
        return Err(Error::BadDimensions {
            op: "encode",
            msg: format!("expected [N,3,{side},{side}] cover, got {shape:?}"),
        });
    }
    let mshape = tape.shape(msgs).to_vec();
    if mshape != [shape[0], desc.message_len] {
        return Err(Error::BadDimensions {
            op: "encode",
            msg: format!(
                "expected [{},{}] messages, got {mshape:?}",
                shape[0], desc.message_len
            ),
        });
    }

    let conv_relu = |t: &mut Tape<S>, x: TensorId, name: &str| -> Result<TensorId> {
        let y = t.conv2d(
            x,
            params.id(&format!("{name}.w")),
            Some(params.id(&format!("{name}.b"))),
            1,
            1,
        )?;
        Ok(t.relu(y))
    };

    let h1 = conv_relu(tape, cover, "enc.conv1")?;
    let h2 = conv_relu(tape, h1, "enc.conv2")?;
    let msg_map = tape.tile_spatial(msgs, side, side)?;
    let cat = tape.concat_channels(&[h2, msg_map, cover])?;
    let h3 = conv_relu(tape, cat, "enc.conv3")?;
    let h4 = conv_relu(tape, h3, "enc.conv4")?;
    let head = tape.conv2d(
        h4,
        params.id("enc.head.w"),
        Some(params.id("enc.head.b")),
        1,
        1,
    )?;
    Ok(tape.sigmoid(head))
}

/// Run the decoder: image [N,3,H,W] in [0,1] to [N,L] logits.
/// Bit i is decoded as 1 iff logit i > 0.
pub fn decode<S: Scalar>(
    tape: &mut Tape<S>,
    desc: &ModelDescriptor,
    params: &TapeParams,
    img: TensorId,
) -> Result<TensorId> {
    let shape = tape.shape(img).to_vec();
    let side = desc.image_size;
    if shape.len() != 4 || shape[1] != 3 || shape[2] != side || shape[3] != side {
        return Err(Error::BadDimensions {
            op: "decode",
            msg: format!("expected [N,3,{side},{side}] image, got {shape:?}"),
        });
    }
    let mut x = img;
    for i in 1..=5 {
        let y = tape.conv2d(
            x,
            params.id(&format!("dec.conv{i}.w")),
            Some(params.id(&format!("dec.conv{i}.b"))),
            desc.dec_strides[i - 1],
            1,
        )?;
        x = tape.relu(y);
    }
    let pooled = tape.avg_pool_spatial(x)?;
    tape.linear(pooled, params.id("dec.fc.w"), params.id("dec.fc.b"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_desc() -> ModelDescriptor {
        ModelDescriptor {
            image_size: 16,
            message_len: 8,
            enc_width: 8,
            dec_width: 8,
            dec_strides: [1, 2, 1, 2, 1],
        }
    }

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn random_cover(n: usize, side: usize, seed: u64) -> Vec<f32> {
        let mut r = rng(seed);
        (0..n * 3 * side * side)
            .map(|_| r.gen_range(0.0..1.0))
            .collect()
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let desc = toy_desc();
        let a = init_params(&desc, 1).unwrap();
        let b = init_params(&desc, 1).unwrap();
        let c = init_params(&desc, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_std_matches_fan_in_target() {
        // Kernel with >= 10^4 entries: enc.conv3 at width 32, L=30.
        let desc = ModelDescriptor::new(64, 30);
        let params = init_params(&desc, 7).unwrap();
        let k = params.tensor("enc.conv3.w").unwrap();
        assert!(k.data.len() >= 10_000);
        let fan_in = (k.shape[1] * k.shape[2] * k.shape[3]) as f64;
        let target = (2.0 / fan_in).sqrt();
        let mean = k.data.iter().map(|&v| v as f64).sum::<f64>() / k.data.len() as f64;
        let var = k
            .data
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / k.data.len() as f64;
        let std = var.sqrt();
        assert!(
            (std - target).abs() / target < 0.2,
            "std {std} vs target {target}"
        );
    }

    #[test]
    fn encode_preserves_shape_and_range() {
        let desc = toy_desc();
        let params = init_params(&desc, 3).unwrap();
        let mut t: Tape<f32> = Tape::new();
        let tp = params.insert_into(&mut t, false).unwrap();
        let cover = t
            .leaf(random_cover(2, 16, 4), &[2, 3, 16, 16], false)
            .unwrap();
        let msgs = vec![
            Message::random(8, &mut rng(5)),
            Message::random(8, &mut rng(6)),
        ];
        let m = messages_to_tensor(&mut t, &msgs, 8).unwrap();
        let enc = encode(&mut t, &desc, &tp, cover, m).unwrap();
        assert_eq!(t.shape(enc), &[2, 3, 16, 16]);
        assert!(t.data(enc).iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn encode_rejects_wrong_message_length() {
        let desc = toy_desc();
        let params = init_params(&desc, 3).unwrap();
        let mut t: Tape<f32> = Tape::new();
        let tp = params.insert_into(&mut t, false).unwrap();
        let cover = t
            .leaf(random_cover(1, 16, 4), &[1, 3, 16, 16], false)
            .unwrap();
        let msgs = vec![Message::random(5, &mut rng(5))];
        assert!(messages_to_tensor(&mut t, &msgs, 8).is_err());
        let wrong = t.constant(vec![0.0; 5], &[1, 5]).unwrap();
        assert!(encode(&mut t, &desc, &tp, cover, wrong).is_err());
    }

    #[test]
    fn decode_shape_and_determinism() {
        let desc = toy_desc();
        let params = init_params(&desc, 8).unwrap();
        let run = || {
            let mut t: Tape<f32> = Tape::new();
            let tp = params.insert_into(&mut t, false).unwrap();
            let img = t
                .leaf(random_cover(3, 16, 9), &[3, 3, 16, 16], false)
                .unwrap();
            let logits = decode(&mut t, &desc, &tp, img).unwrap();
            assert_eq!(t.shape(logits), &[3, 8]);
            t.data(logits).to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn random_decoder_scores_chance_ber_against_random_messages() {
        let desc = toy_desc();
        let params = init_params(&desc, 10).unwrap();
        let mut errors = 0usize;
        let mut total = 0usize;
        let mut r = rng(11);
        let trials = 1000;
        let batch = 50;
        for chunk in 0..trials / batch {
            let mut t: Tape<f32> = Tape::new();
            let tp = params.insert_into(&mut t, false).unwrap();
            let img = t
                .leaf(
                    random_cover(batch, 16, 100 + chunk as u64),
                    &[batch, 3, 16, 16],
                    false,
                )
                .unwrap();
            let logits = decode(&mut t, &desc, &tp, img).unwrap();
            let bits = logits_to_bits(t.data(logits));
            for item in 0..batch {
                let msg = Message::random(8, &mut r);
                for (b, &m) in bits[item * 8..(item + 1) * 8].iter().zip(msg.bits()) {
                    if *b != m {
                        errors += 1;
                    }
                    total += 1;
                }
            }
        }
        let ber = errors as f64 / total as f64;
        assert!((ber - 0.5).abs() < 0.05, "ber {ber}");
    }

    #[test]
    fn encoder_distortion_gradient_passes_fd_spot_check() {
        // d ||encode - cover||^2 / d enc.conv1.w on a 16x16 toy config,
        // checked at a handful of coordinates.
        let desc = toy_desc();
        let params = init_params(&desc, 12).unwrap();
        let cover = random_cover(1, 16, 13)
            .into_iter()
            .map(|v| v as f64)
            .collect::<Vec<_>>();
        let msgs = vec![Message::random(8, &mut rng(14))];

        let forward = |p: &ModelParams| -> f64 {
            let mut t: Tape<f64> = Tape::new();
            let tp = p.insert_into(&mut t, false).unwrap();
            let c = t.leaf(cover.clone(), &[1, 3, 16, 16], false).unwrap();
            let m = messages_to_tensor(&mut t, &msgs, 8).unwrap();
            let e = encode(&mut t, &desc, &tp, c, m).unwrap();
            let loss = t.mse_loss(e, c).unwrap();
            t.value(loss)
        };

        let mut t: Tape<f64> = Tape::new();
        let tp = params.insert_into(&mut t, true).unwrap();
        let c = t.leaf(cover.clone(), &[1, 3, 16, 16], false).unwrap();
        let m = messages_to_tensor(&mut t, &msgs, 8).unwrap();
        let e = encode(&mut t, &desc, &tp, c, m).unwrap();
        let loss = t.mse_loss(e, c).unwrap();
        t.backward(loss).unwrap();
        let analytic = t.grad(tp.id("enc.conv1.w")).unwrap().to_vec();

        let eps = 1e-6f32;
        for &idx in &[0usize, 7, 31, 100, 215] {
            let mut plus = params.clone();
            let mut minus = params.clone();
            let ti = plus
                .tensors
                .iter()
                .position(|t| t.name == "enc.conv1.w")
                .unwrap();
            plus.tensors[ti].data[idx] += eps;
            minus.tensors[ti].data[idx] -= eps;
            // f32 parameter storage limits the perturbation accuracy, so
            // use the step that was actually applied.
            let applied = (plus.tensors[ti].data[idx] - minus.tensors[ti].data[idx]) as f64;
            let numeric = (forward(&plus) - forward(&minus)) / applied;
            let a = analytic[idx];
            assert!(
                (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3) < 1e-2,
                "idx {idx}: analytic {a} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let desc = toy_desc();
        let params = init_params(&desc, 15).unwrap();
        let mut t: Tape<f32> = Tape::new();
        let tp = params.insert_into(&mut t, true).unwrap();
        let cover = t
            .leaf(random_cover(2, 16, 16), &[2, 3, 16, 16], false)
            .unwrap();
        let msgs = vec![
            Message::random(8, &mut rng(17)),
            Message::random(8, &mut rng(18)),
        ];
        let m = messages_to_tensor(&mut t, &msgs, 8).unwrap();
        let enc = encode(&mut t, &desc, &tp, cover, m).unwrap();
        let logits = decode(&mut t, &desc, &tp, enc).unwrap();
        let mse = t.mse_loss(enc, cover).unwrap();
        let bce = t.bce_with_logits(logits, m).unwrap();
        let mse_w = t.mul_scalar(mse, 0.7);
        let loss = t.add(mse_w, bce).unwrap();
        t.backward(loss).unwrap();
        for (name, id) in tp.iter() {
            let g = t.grad(id).unwrap_or_else(|| panic!("no grad for {name}"));
            assert!(
                g.iter().any(|&v| v != 0.0),
                "parameter {name} has all-zero gradient"
            );
        }
    }

    #[test]
    fn message_hex_roundtrip() {
        let mut r = rng(19);
        for len in [8usize, 16, 30, 5] {
            for _ in 0..20 {
                let m = Message::random(len, &mut r);
                let hex = m.to_hex();
                assert_eq!(hex.len(), len.div_ceil(4));
                let back = Message::from_hex(&hex, len).unwrap();
                assert_eq!(m, back);
            }
        }
        // 30-bit message: 8 digits, top 2 bits must be zero.
        assert!(Message::from_hex("ffffffff", 30).is_err());
        assert!(Message::from_hex("3fffffff", 30).is_ok());
        assert!(Message::from_hex("12g4", 16).is_err());
        assert!(Message::from_hex("123", 16).is_err());
    }

    #[test]
    fn descriptor_validation() {
        let mut d = toy_desc();
        d.image_size = 4;
        assert!(d.validate().is_err());
        let mut d = toy_desc();
        d.dec_strides = [1, 0, 1, 1, 1];
        assert!(d.validate().is_err());
        let mut d = toy_desc();
        d.message_len = 0;
        assert!(d.validate().is_err());
        assert!(toy_desc().validate().is_ok());
    }
}
