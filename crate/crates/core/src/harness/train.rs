//! The training loop: encode, attack, decode, loss, Adam step.

use super::config::TrainConfig;
use super::dataset::{load_dataset, DatasetSource};
use super::{stream_rng, stream_seed};
use crate::codec::Image;
use crate::error::{Error, Result};
use crate::model::{
    decode, encode, init_params, logits_to_bits, messages_to_tensor, Message, ModelParams,
};
use crate::tensor::{adam_step, AdamState, Tape};
use rand::Rng;
use std::path::PathBuf;

/// One logged snapshot of the loss terms and training-batch BER.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub total_loss: f64,
    pub image_mse: f64,
    pub message_bce: f64,
    pub train_ber_percent: f64,
    pub attack: String,
}

/// Trained parameters plus the periodic loss log.
#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<StepLog>,
    pub checkpoints: Vec<PathBuf>,
}

/// Load the configured dataset and train.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let source = DatasetSource::parse(&config.train.dataset)?;
    let ds = load_dataset(
        &source,
        config.model.image_size,
        stream_seed(config.train.seed, "dataset", 0),
    )?;
    train_with_dataset(config, &ds.images)
}

/// Train on an already-loaded image set. Fully deterministic for a given
/// (config, dataset) pair: batch composition, messages, attack draws and
/// attack randomness all come from named streams of the master seed.
pub fn train_with_dataset(config: &TrainConfig, images: &[Image]) -> Result<TrainOutcome> {
    config.validate()?;
    if images.is_empty() {
        return Err(Error::EmptyDataset {
            path: config.train.dataset.clone(),
        });
    }
    let desc = config.descriptor();
    let schedule = config.schedule()?;
    let hyper = config.adam();
    let seed = config.train.seed;
    let side = desc.image_size;
    let batch = config.train.batch_size;
    let msg_len = desc.message_len;
    let plane = side * side;

    let mut params = init_params(&desc, stream_seed(seed, "init", 0))?;
    let names: Vec<String> = params.tensors.iter().map(|t| t.name.clone()).collect();
    let sizes: Vec<usize> = params.tensors.iter().map(|t| t.data.len()).collect();
    let mut state = AdamState::new(&sizes);

    let mut batch_rng = stream_rng(seed, "batch", 0);
    let mut msg_rng = stream_rng(seed, "msg", 0);
    let mut pick_rng = stream_rng(seed, "attack-pick", 0);

    let ckpt_dir = config.train.checkpoint_dir.as_ref().map(PathBuf::from);
    if let Some(dir) = &ckpt_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut log = Vec::new();
    let mut checkpoints = Vec::new();

    for step in 1..=config.train.steps {
        // Assemble the batch.
        let mut cover_data = vec![0.0f32; batch * 3 * plane];
        for b in 0..batch {
            let idx = batch_rng.gen_range(0..images.len());
            let chw: Vec<f32> = images[idx].to_chw();
            cover_data[b * 3 * plane..(b + 1) * 3 * plane].copy_from_slice(&chw);
        }
        let msgs: Vec<Message> = (0..batch)
            .map(|_| Message::random(msg_len, &mut msg_rng))
            .collect();

        let mut tape: Tape<f32> = Tape::new();
        let tp = params.insert_into(&mut tape, true)?;
        let cover = tape.leaf(cover_data, &[batch, 3, side, side], false)?;
        let m = messages_to_tensor(&mut tape, &msgs, msg_len)?;

        let encoded = encode(&mut tape, &desc, &tp, cover, m)?;
        let spec = schedule.sample(&mut pick_rng);
        let mut attack_rng = stream_rng(seed, "attack", step as u64);
        let attacked = spec.kind.apply(&mut tape, encoded, &mut attack_rng)?;
        let logits = decode(&mut tape, &desc, &tp, attacked)?;

        let mse = tape.mse_loss(encoded, cover)?;
        let bce = tape.bce_with_logits(logits, m)?;
        let mse_w = tape.mul_scalar(mse, config.train.lambda_image as f32);
        let bce_w = tape.mul_scalar(bce, config.train.lambda_message as f32);
        let loss = tape.add(mse_w, bce_w)?;

        let loss_v = tape.value(loss) as f64;
        if !loss_v.is_finite() {
            return Err(Error::NonFiniteLoss {
                what: "training loss".into(),
                step,
            });
        }
        tape.backward(loss)?;

        let grads: Vec<Vec<f32>> = tp
            .iter()
            .map(|(_, id)| {
                tape.grad(id)
                    .map(|g| g.to_vec())
                    // A zero loss weight can freeze one of the nets.
                    .unwrap_or_else(|| vec![0.0; tape.data(id).len()])
            })
            .collect();

        let should_log =
            step == 1 || step == config.train.steps || step % config.train.log_every == 0;
        if should_log {
            let bits = logits_to_bits(tape.data(logits));
            let mut errors = 0usize;
            for (b, msg) in msgs.iter().enumerate() {
                for (p, t) in bits[b * msg_len..(b + 1) * msg_len].iter().zip(msg.bits()) {
                    if p != t {
                        errors += 1;
                    }
                }
            }
            let entry = StepLog {
                step,
                total_loss: loss_v,
                image_mse: tape.value(mse) as f64,
                message_bce: tape.value(bce) as f64,
                train_ber_percent: 100.0 * errors as f64 / (batch * msg_len) as f64,
                attack: spec.kind.label(),
            };
            eprintln!(
                "step {:>6}  loss {:.5}  mse {:.6}  bce {:.5}  ber {:>6.2}%  [{}]",
                entry.step,
                entry.total_loss,
                entry.image_mse,
                entry.message_bce,
                entry.train_ber_percent,
                entry.attack
            );
            log.push(entry);
        }

        {
            let grad_views: Vec<&[f32]> = grads.iter().map(|g| g.as_slice()).collect();
            let mut param_views: Vec<&mut [f32]> = params
                .tensors
                .iter_mut()
                .map(|t| t.data.as_mut_slice())
                .collect();
            adam_step(&names, &mut param_views, &grad_views, &mut state, &hyper)?;
        }

        if config.train.checkpoint_every > 0 && step % config.train.checkpoint_every == 0 {
            if let Some(dir) = &ckpt_dir {
                let path = dir.join(format!("step_{step:06}.ckpt"));
                super::checkpoint::save_checkpoint(&params, &config.fingerprint(), &path)?;
                checkpoints.push(path);
            }
        }
    }

    if let Some(dir) = &ckpt_dir {
        let path = dir.join("final.ckpt");
        super::checkpoint::save_checkpoint(&params, &config.fingerprint(), &path)?;
        checkpoints.push(path);
    }

    Ok(TrainOutcome {
        params,
        log,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::dataset::synth_image;

    fn tiny_config(steps: usize, attacks: &str) -> TrainConfig {
        TrainConfig::from_toml_str(&format!(
            r#"
[model]
image_size = 16
message_len = 4
enc_width = 6
dec_width = 6

[train]
dataset = "synth:8"
batch_size = 4
steps = {steps}
seed = 11
log_every = 5

[attack]
specs = [{{ spec = "{attacks}" }}]
"#
        ))
        .unwrap()
    }

    #[test]
    fn same_seed_gives_identical_loss_logs_and_params() {
        let cfg = tiny_config(12, "pseudo:jpeg:50");
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn distortion_only_objective_decreases_mse_on_fixed_batch() {
        // lambda_message = 0: the encoder is free to reproduce the cover.
        let toml = r#"
[model]
image_size = 16
message_len = 4
enc_width = 6
dec_width = 6

[train]
dataset = "synth:4"
batch_size = 4
steps = 100
seed = 3
log_every = 1
lambda_message = 0.0
learning_rate = 2e-3

[attack]
specs = [{ spec = "identity" }]
"#;
        let cfg = TrainConfig::from_toml_str(toml).unwrap();
        // One image repeated keeps the batch fixed across steps.
        let img = synth_image(16, &mut crate::harness::stream_rng(1, "synth", 0));
        let images = vec![img];
        let out = train_with_dataset(&cfg, &images).unwrap();
        let first = out.log.first().unwrap().image_mse;
        let last = out.log.last().unwrap().image_mse;
        assert!(
            last < first * 0.25,
            "mse did not decrease: {first} -> {last}"
        );
        // Decreasing trend across thirds of the run (Adam wobbles a
        // little step to step, the trend must not).
        let vals: Vec<f64> = out.log.iter().map(|l| l.image_mse).collect();
        let third = vals.len() / 3;
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let (a, b, c) = (
            mean(&vals[..third]),
            mean(&vals[third..2 * third]),
            mean(&vals[2 * third..]),
        );
        assert!(a > b && b > c, "trend not decreasing: {a} {b} {c}");
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let cfg = tiny_config(1, "identity");
        let err = train_with_dataset(&cfg, &[]).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset { .. }));
    }

    #[test]
    fn attack_failure_aborts_with_context() {
        let cfg = TrainConfig::from_toml_str(
            r#"
[model]
image_size = 16
message_len = 4
enc_width = 6
dec_width = 6

[train]
dataset = "synth:4"
batch_size = 2
steps = 3
seed = 3

[attack]
specs = [{ spec = "pseudo:ext:50:false" }]
"#,
        )
        .unwrap();
        let err = train(&cfg).unwrap_err();
        assert!(err.to_string().contains("batch item"), "{err}");
    }
}
