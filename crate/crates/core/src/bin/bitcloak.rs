//! Command-line interface for training, evaluating and using hiding
//! models, plus codec utilities and the gradient-check suite.

use anyhow::{bail, Context};
use bitcloak::attack::approx::gradcheck_pipelines;
use bitcloak::attack::parse::parse_codec_spec;
use bitcloak::codec::{external, psnr, CodecSpec, Image};
use bitcloak::harness::{
    emit_machine, emit_text, evaluate, load_checkpoint, load_dataset, synth_image, train,
    DatasetSource, EvalAttack, TrainConfig,
};
use bitcloak::model::{decode, encode, logits_to_bits, messages_to_tensor, Message, ModelParams};
use bitcloak::tensor::{run_gradcheck_suite, Tape};
use clap::{Parser, Subcommand};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "bitcloak",
    about = "Robust data hiding in images that survives lossy compression",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a TOML config file.
    Train {
        #[arg(long)]
        config: String,
    },
    /// Evaluate a checkpoint under true codecs.
    Evaluate {
        #[arg(long)]
        checkpoint: String,
        /// Attack rows: `none`, `jpeg:<q>`, `jpeg420:<q>` or
        /// `ext:<q>:<command>`. Repeatable.
        #[arg(long = "attacks", required = true)]
        attacks: Vec<String>,
        /// Evaluation images: a directory or `synth:<count>`.
        #[arg(long, default_value = "synth:64")]
        dataset: String,
        #[arg(long, default_value_t = 256)]
        samples: usize,
        #[arg(long, default_value_t = 1799)]
        seed: u64,
        /// Print machine-readable rows instead of the aligned table.
        #[arg(long)]
        machine: bool,
    },
    /// Embed a message into a cover image.
    Embed {
        #[arg(long)]
        checkpoint: String,
        #[arg(long)]
        cover: String,
        /// Hex message, most-significant bit first, ceil(L/4) digits.
        #[arg(long)]
        message: String,
        #[arg(long)]
        out: String,
    },
    /// Extract the message from an encoded image.
    Extract {
        #[arg(long)]
        checkpoint: String,
        #[arg(long)]
        image: String,
    },
    /// Run one true codec over an image file.
    Attack {
        /// `jpeg`, `jpeg420` or `ext:<command template>`.
        #[arg(long)]
        codec: String,
        #[arg(long)]
        quality: i64,
        #[arg(long = "in")]
        input: String,
        #[arg(long)]
        out: String,
    },
    /// PSNR of the internal JPEG round trip at one quality.
    CodecRoundtrip {
        #[arg(long)]
        quality: u8,
        /// Measure on this image instead of the synthetic set.
        #[arg(long = "in")]
        input: Option<String>,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful exits; everything else is
            // a usage error.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<bitcloak::Error>().is_some_and(|err| {
                matches!(
                    err,
                    bitcloak::Error::Config(_)
                        | bitcloak::Error::Message(_)
                        | bitcloak::Error::QualityOutOfRange { .. }
                )
            });
            ExitCode::from(if usage { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config } => cmd_train(&config),
        Command::Evaluate {
            checkpoint,
            attacks,
            dataset,
            samples,
            seed,
            machine,
        } => cmd_evaluate(&checkpoint, &attacks, &dataset, samples, seed, machine),
        Command::Embed {
            checkpoint,
            cover,
            message,
            out,
        } => cmd_embed(&checkpoint, &cover, &message, &out),
        Command::Extract { checkpoint, image } => cmd_extract(&checkpoint, &image),
        Command::Attack {
            codec,
            quality,
            input,
            out,
        } => cmd_attack(&codec, quality, &input, &out),
        Command::CodecRoundtrip { quality, input } => {
            cmd_codec_roundtrip(quality, input.as_deref())
        }
        Command::Gradcheck => cmd_gradcheck(),
    }
}

fn cmd_train(config_path: &str) -> anyhow::Result<()> {
    let config = TrainConfig::load(config_path)?;
    eprintln!(
        "training: {} steps, batch {}, dataset {}, fingerprint {}",
        config.train.steps,
        config.train.batch_size,
        config.train.dataset,
        config.fingerprint()
    );
    let outcome = train(&config)?;
    if let Some(last) = outcome.log.last() {
        println!(
            "final: loss {:.5} mse {:.6} bce {:.5} train-ber {:.2}%",
            last.total_loss, last.image_mse, last.message_bce, last.train_ber_percent
        );
    }
    for path in &outcome.checkpoints {
        println!("checkpoint: {}", path.display());
    }
    if outcome.checkpoints.is_empty() {
        eprintln!("note: no checkpoint_dir configured; trained parameters were discarded");
    }
    Ok(())
}

fn cmd_evaluate(
    checkpoint: &str,
    attack_specs: &[String],
    dataset: &str,
    samples: usize,
    seed: u64,
    machine: bool,
) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let attacks = attack_specs
        .iter()
        .map(|s| {
            Ok(if s.trim() == "none" {
                EvalAttack::None
            } else {
                EvalAttack::Codec(parse_codec_spec(s)?)
            })
        })
        .collect::<Result<Vec<_>, bitcloak::Error>>()?;
    let source = DatasetSource::parse(dataset)?;
    let images = load_dataset(&source, ckpt.params.desc.image_size, seed)?.images;
    let report = evaluate(
        &ckpt.params,
        &images,
        &attacks,
        samples,
        seed,
        &ckpt.fingerprint,
    )?;
    if machine {
        print!("{}", emit_machine(&report));
    } else {
        print!("{}", emit_text(&report));
    }
    Ok(())
}

fn load_model_image(path: &str, params: &ModelParams) -> anyhow::Result<Image> {
    let img = external::read_image(path).with_context(|| format!("reading {path}"))?;
    let side = params.desc.image_size;
    if img.width() == side && img.height() == side {
        return Ok(img);
    }
    eprintln!(
        "note: resizing {}x{} input to the model size {side}x{side}",
        img.width(),
        img.height()
    );
    let buf =
        image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.pixels().to_vec())
            .expect("valid buffer");
    let resized = image::DynamicImage::ImageRgb8(buf)
        .resize_exact(
            side as u32,
            side as u32,
            image::imageops::FilterType::Triangle,
        )
        .to_rgb8();
    Ok(Image::new(side, side, resized.into_raw())?)
}

fn cmd_embed(checkpoint: &str, cover: &str, message: &str, out: &str) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let desc = ckpt.params.desc.clone();
    let msg = Message::from_hex(message, desc.message_len)?;
    let cover_img = load_model_image(cover, &ckpt.params)?;
    let side = desc.image_size;

    let mut tape: Tape<f32> = Tape::new();
    let tp = ckpt.params.insert_into(&mut tape, false)?;
    let c = tape.leaf(cover_img.to_chw(), &[1, 3, side, side], false)?;
    let m = messages_to_tensor(&mut tape, std::slice::from_ref(&msg), desc.message_len)?;
    let enc = encode(&mut tape, &desc, &tp, c, m)?;
    let enc_img = Image::from_chw(tape.data(enc), side, side)?;
    external::write_png(&enc_img, out)?;
    println!(
        "embedded {} bits into {out} (psnr vs cover: {:.2} dB)",
        desc.message_len,
        psnr(&cover_img, &enc_img)
    );
    Ok(())
}

fn cmd_extract(checkpoint: &str, image_path: &str) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let desc = ckpt.params.desc.clone();
    let img = load_model_image(image_path, &ckpt.params)?;
    let side = desc.image_size;

    let mut tape: Tape<f32> = Tape::new();
    let tp = ckpt.params.insert_into(&mut tape, false)?;
    let x = tape.leaf(img.to_chw(), &[1, 3, side, side], false)?;
    let logits = decode(&mut tape, &desc, &tp, x)?;
    let bits = logits_to_bits(tape.data(logits));
    let msg = Message::new(bits)?;
    println!("{}", msg.to_hex());
    Ok(())
}

fn cmd_attack(codec: &str, quality: i64, input: &str, out: &str) -> anyhow::Result<()> {
    let in_range = u8::try_from(quality).ok().filter(|q| (1..=100).contains(q));
    let spec = match codec {
        "jpeg" | "jpeg420" => match in_range {
            Some(q) if codec == "jpeg" => CodecSpec::internal_jpeg(q)?,
            Some(q) => CodecSpec::internal_jpeg_420(q)?,
            None => bail!(bitcloak::Error::QualityOutOfRange {
                quality,
                min: 1,
                max: 100
            }),
        },
        other => match other.strip_prefix("ext:") {
            Some(cmd) => CodecSpec::external(cmd, quality),
            None => bail!(bitcloak::Error::Config(format!(
                "unknown codec `{other}` (expected jpeg, jpeg420 or ext:<command>)"
            ))),
        },
    };
    let img = external::read_image(input).with_context(|| format!("reading {input}"))?;
    let result = spec.apply(&img)?;
    external::write_png(&result, out)?;
    println!(
        "{} -> {out}: psnr {:.2} dB",
        spec.label(),
        psnr(&img, &result)
    );
    Ok(())
}

fn cmd_codec_roundtrip(quality: u8, input: Option<&str>) -> anyhow::Result<()> {
    let images: Vec<Image> = match input {
        Some(path) => vec![external::read_image(path)?],
        None => {
            let mut rng = bitcloak::harness::stream_rng(7, "codec-roundtrip", 0);
            (0..20).map(|_| synth_image(64, &mut rng)).collect()
        }
    };
    let mut total = 0.0;
    for img in &images {
        let out = bitcloak::codec::jpeg_roundtrip(img, quality)?;
        total += psnr(img, &out);
    }
    println!(
        "jpeg quality {quality}: mean psnr {:.2} dB over {} image(s)",
        total / images.len() as f64,
        images.len()
    );
    Ok(())
}

fn cmd_gradcheck() -> anyhow::Result<()> {
    let mut results = run_gradcheck_suite()?;
    results.extend(gradcheck_pipelines()?);
    let mut all_ok = true;
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "{status:>4}  {:<32} rel err {:.3e}  (tol {:.0e})",
            r.name, r.rel_err, r.tolerance
        );
        all_ok &= r.passed();
    }
    if !all_ok {
        bail!("gradient checks failed");
    }
    println!("{} checks passed", results.len());
    Ok(())
}
