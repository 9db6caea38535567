//! Evaluation against true codecs.
//!
//! Whatever approximation trained the model, evaluation always encodes,
//! quantizes to 8-bit, runs a real codec (or none), and decodes. The
//! attack rows accept only [`EvalAttack`], which cannot express an
//! approximation, so no surrogate module is reachable from here.

use super::stream_rng;
use crate::codec::{apd, psnr, CodecSpec, Image};
use crate::error::{Error, Result};
use crate::model::{decode, encode, logits_to_bits, messages_to_tensor, Message, ModelParams};
use crate::tensor::Tape;

/// One evaluation condition: the clean pass or a true codec.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalAttack {
    None,
    Codec(CodecSpec),
}

impl EvalAttack {
    pub fn label(&self) -> String {
        match self {
            EvalAttack::None => "none".into(),
            EvalAttack::Codec(c) => c.label(),
        }
    }
}

/// One report row.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub attack: String,
    /// BER in percent, rounded to two decimals; `None` when the codec
    /// failed and the row was skipped.
    pub ber_percent: Option<f64>,
}

/// Full evaluation result.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Mean absolute cover-vs-encoded difference on the 0..255 scale.
    pub apd: f64,
    /// Mean cover-vs-encoded PSNR in dB (infinite when identical).
    pub psnr: f64,
    /// Number of (image, message) samples per row.
    pub samples: usize,
    pub fingerprint: String,
}

/// Bit error rate in percent.
pub fn ber(pred: &[u8], truth: &[u8]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Message(format!(
            "bit length mismatch: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let errors = pred.iter().zip(truth).filter(|(a, b)| a != b).count();
    Ok(100.0 * errors as f64 / pred.len() as f64)
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

const EVAL_BATCH: usize = 16;

/// Evaluate a trained model.
///
/// For each of `samples` (image, message) pairs: encode, quantize to
/// 8-bit, then for every attack row run the true codec and decode. The
/// same messages are used for every row, so rows are directly
/// comparable. A codec failure marks its row failed and the remaining
/// rows proceed.
pub fn evaluate(
    params: &ModelParams,
    images: &[Image],
    attacks: &[EvalAttack],
    samples: usize,
    seed: u64,
    fingerprint: &str,
) -> Result<EvalReport> {
    if images.is_empty() {
        return Err(Error::EmptyDataset {
            path: "<evaluation set>".into(),
        });
    }
    if samples == 0 {
        return Err(Error::Config("evaluation needs samples >= 1".into()));
    }
    let desc = &params.desc;
    let side = desc.image_size;
    let plane = side * side;
    let msg_len = desc.message_len;

    // Encode every sample once; measure imperceptibility on the quantized
    // 8-bit images a real attacker would see.
    let mut encoded_imgs: Vec<Image> = Vec::with_capacity(samples);
    let mut messages: Vec<Message> = Vec::with_capacity(samples);
    let mut apd_sum = 0.0;
    let mut psnr_sum = 0.0;
    for chunk_start in (0..samples).step_by(EVAL_BATCH) {
        let n = EVAL_BATCH.min(samples - chunk_start);
        let mut cover_data = vec![0.0f32; n * 3 * plane];
        let mut covers = Vec::with_capacity(n);
        let mut batch_msgs = Vec::with_capacity(n);
        for b in 0..n {
            let i = chunk_start + b;
            let img = &images[i % images.len()];
            cover_data[b * 3 * plane..(b + 1) * 3 * plane].copy_from_slice(&img.to_chw::<f32>());
            covers.push(img.clone());
            batch_msgs.push(Message::random(
                msg_len,
                &mut stream_rng(seed, "eval-msg", i as u64),
            ));
        }
        let mut tape: Tape<f32> = Tape::new();
        let tp = params.insert_into(&mut tape, false)?;
        let cover = tape.leaf(cover_data, &[n, 3, side, side], false)?;
        let m = messages_to_tensor(&mut tape, &batch_msgs, msg_len)?;
        let enc = encode(&mut tape, desc, &tp, cover, m)?;
        for b in 0..n {
            let img = Image::from_chw(
                &tape.data(enc)[b * 3 * plane..(b + 1) * 3 * plane],
                side,
                side,
            )?;
            apd_sum += apd(&covers[b], &img);
            psnr_sum += psnr(&covers[b], &img);
            encoded_imgs.push(img);
        }
        messages.extend(batch_msgs);
    }

    let mut rows = Vec::with_capacity(attacks.len());
    for attack in attacks {
        let mut attacked: Vec<Image> = Vec::with_capacity(samples);
        let mut failed = false;
        for (i, img) in encoded_imgs.iter().enumerate() {
            let out = match attack {
                EvalAttack::None => Ok(img.clone()),
                EvalAttack::Codec(codec) => codec.apply(img),
            };
            match out {
                Ok(img) => attacked.push(img),
                Err(e) => {
                    eprintln!(
                        "warning: attack row {} failed on sample {i}: {e}",
                        attack.label()
                    );
                    failed = true;
                    break;
                }
            }
        }
        if failed {
            rows.push(EvalRow {
                attack: attack.label(),
                ber_percent: None,
            });
            continue;
        }

        let mut errors = 0usize;
        let mut total = 0usize;
        for chunk_start in (0..samples).step_by(EVAL_BATCH) {
            let n = EVAL_BATCH.min(samples - chunk_start);
            let mut data = vec![0.0f32; n * 3 * plane];
            for b in 0..n {
                data[b * 3 * plane..(b + 1) * 3 * plane]
                    .copy_from_slice(&attacked[chunk_start + b].to_chw::<f32>());
            }
            let mut tape: Tape<f32> = Tape::new();
            let tp = params.insert_into(&mut tape, false)?;
            let imgs = tape.leaf(data, &[n, 3, side, side], false)?;
            let logits = decode(&mut tape, desc, &tp, imgs)?;
            let bits = logits_to_bits(tape.data(logits));
            for b in 0..n {
                let truth = messages[chunk_start + b].bits();
                let pred = &bits[b * msg_len..(b + 1) * msg_len];
                errors += pred.iter().zip(truth).filter(|(a, b)| a != b).count();
                total += msg_len;
            }
        }
        rows.push(EvalRow {
            attack: attack.label(),
            ber_percent: Some(round2(100.0 * errors as f64 / total as f64)),
        });
    }

    Ok(EvalReport {
        rows,
        apd: round2(apd_sum / samples as f64),
        psnr: round2(psnr_sum / samples as f64),
        samples,
        fingerprint: fingerprint.to_string(),
    })
}
