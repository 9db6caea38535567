//! Textual grammar for codec and attack specifications, shared by the
//! config file and the CLI.
//!
//! Codec specs:
//!   jpeg:<q>            internal JPEG, 4:4:4, quality 1..=100
//!   jpeg420:<q>         internal JPEG, 4:2:0 chroma
//!   ext:<q>:<command>   external command template; `{input}`,
//!                       `{output}` and `{quality}` are substituted.
//!                       The quality is the tool's native rate parameter.
//!
//! Attack specs:
//!   identity
//!   gaussian:<sigma>
//!   jpeg_mask[:<keep_luma>,<keep_chroma>]
//!   jpeg_drop[:<p0>,<p1>]      linear drop-probability ramp
//!   jpeg_poly:<q>
//!   pseudo:<codec spec>

use super::{AttackKind, DropProfile, DEFAULT_KEEP_CHROMA, DEFAULT_KEEP_LUMA};
use crate::codec::CodecSpec;
use crate::error::{Error, Result};

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Parse a codec spec string.
pub fn parse_codec_spec(s: &str) -> Result<CodecSpec> {
    let s = s.trim();
    if let Some(rest) = s.strip_prefix("jpeg420:") {
        let q: u8 = rest
            .parse()
            .map_err(|_| config_err(format!("bad jpeg quality `{rest}`")))?;
        return CodecSpec::internal_jpeg_420(q);
    }
    if let Some(rest) = s.strip_prefix("jpeg:") {
        let q: u8 = rest
            .parse()
            .map_err(|_| config_err(format!("bad jpeg quality `{rest}`")))?;
        return CodecSpec::internal_jpeg(q);
    }
    if let Some(rest) = s.strip_prefix("ext:") {
        let (q, cmd) = rest
            .split_once(':')
            .ok_or_else(|| config_err("ext codec needs `ext:<quality>:<command>`"))?;
        let quality: i64 = q
            .parse()
            .map_err(|_| config_err(format!("bad ext quality `{q}`")))?;
        if cmd.trim().is_empty() {
            return Err(config_err("ext codec command is empty"));
        }
        return Ok(CodecSpec::external(cmd, quality));
    }
    Err(config_err(format!(
        "unknown codec spec `{s}` (expected jpeg:<q>, jpeg420:<q> or ext:<q>:<command>)"
    )))
}

/// Parse an attack spec string.
pub fn parse_attack_spec(s: &str) -> Result<AttackKind> {
    let s = s.trim();
    if s == "identity" {
        return Ok(AttackKind::Identity);
    }
    if let Some(rest) = s.strip_prefix("gaussian:") {
        let sigma: f64 = rest
            .parse()
            .map_err(|_| config_err(format!("bad gaussian sigma `{rest}`")))?;
        if sigma < 0.0 || !sigma.is_finite() {
            return Err(config_err(format!("gaussian sigma must be >= 0, got {sigma}")));
        }
        return Ok(AttackKind::Gaussian { sigma });
    }
    if s == "jpeg_mask" {
        return Ok(AttackKind::JpegMask {
            keep_luma: DEFAULT_KEEP_LUMA,
            keep_chroma: DEFAULT_KEEP_CHROMA,
        });
    }
    if let Some(rest) = s.strip_prefix("jpeg_mask:") {
        let (l, c) = rest
            .split_once(',')
            .ok_or_else(|| config_err("jpeg_mask needs `jpeg_mask:<luma>,<chroma>`"))?;
        let keep_luma: usize = l
            .parse()
            .map_err(|_| config_err(format!("bad keep count `{l}`")))?;
        let keep_chroma: usize = c
            .parse()
            .map_err(|_| config_err(format!("bad keep count `{c}`")))?;
        return Ok(AttackKind::JpegMask {
            keep_luma,
            keep_chroma,
        });
    }
    if s == "jpeg_drop" {
        return Ok(AttackKind::JpegDrop {
            profile: DropProfile::default(),
        });
    }
    if let Some(rest) = s.strip_prefix("jpeg_drop:") {
        let (p0, p1) = rest
            .split_once(',')
            .ok_or_else(|| config_err("jpeg_drop needs `jpeg_drop:<p0>,<p1>`"))?;
        let p0: f64 = p0
            .parse()
            .map_err(|_| config_err(format!("bad probability `{p0}`")))?;
        let p1: f64 = p1
            .parse()
            .map_err(|_| config_err(format!("bad probability `{p1}`")))?;
        return Ok(AttackKind::JpegDrop {
            profile: DropProfile::ramp(p0, p1)?,
        });
    }
    if let Some(rest) = s.strip_prefix("jpeg_poly:") {
        let q: u8 = rest
            .parse()
            .map_err(|_| config_err(format!("bad jpeg quality `{rest}`")))?;
        crate::codec::jpeg::luma_table(q)?;
        return Ok(AttackKind::JpegPolyRound { quality: q });
    }
    if let Some(rest) = s.strip_prefix("pseudo:") {
        return Ok(AttackKind::PseudoDiff {
            codec: parse_codec_spec(rest)?,
        });
    }
    Err(config_err(format!("unknown attack spec `{s}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Subsampling;

    #[test]
    fn codec_specs_parse() {
        assert_eq!(
            parse_codec_spec("jpeg:50").unwrap(),
            CodecSpec::InternalJpeg {
                quality: 50,
                subsampling: Subsampling::S444
            }
        );
        assert_eq!(
            parse_codec_spec("jpeg420:75").unwrap(),
            CodecSpec::InternalJpeg {
                quality: 75,
                subsampling: Subsampling::S420
            }
        );
        let ext = parse_codec_spec("ext:50:cwebp -q {quality} {input} -o {output}").unwrap();
        match ext {
            CodecSpec::External { command, quality } => {
                assert_eq!(quality, 50);
                assert!(command.contains("{input}"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn codec_spec_errors() {
        assert!(parse_codec_spec("jpeg:0").is_err());
        assert!(parse_codec_spec("jpeg:abc").is_err());
        assert!(parse_codec_spec("ext:50").is_err());
        assert!(parse_codec_spec("png").is_err());
    }

    #[test]
    fn attack_specs_parse() {
        assert_eq!(parse_attack_spec("identity").unwrap(), AttackKind::Identity);
        assert_eq!(
            parse_attack_spec("gaussian:0.05").unwrap(),
            AttackKind::Gaussian { sigma: 0.05 }
        );
        assert_eq!(
            parse_attack_spec("jpeg_mask").unwrap(),
            AttackKind::JpegMask {
                keep_luma: 25,
                keep_chroma: 9
            }
        );
        assert_eq!(
            parse_attack_spec("jpeg_mask:16,4").unwrap(),
            AttackKind::JpegMask {
                keep_luma: 16,
                keep_chroma: 4
            }
        );
        assert!(matches!(
            parse_attack_spec("jpeg_drop").unwrap(),
            AttackKind::JpegDrop { .. }
        ));
        assert_eq!(
            parse_attack_spec("jpeg_poly:50").unwrap(),
            AttackKind::JpegPolyRound { quality: 50 }
        );
        match parse_attack_spec("pseudo:jpeg:50").unwrap() {
            AttackKind::PseudoDiff { codec } => {
                assert_eq!(codec.label(), "jpeg:50");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn attack_spec_errors() {
        assert!(parse_attack_spec("gaussian:-1").is_err());
        assert!(parse_attack_spec("jpeg_poly:0").is_err());
        assert!(parse_attack_spec("mystery").is_err());
        assert!(parse_attack_spec("pseudo:png").is_err());
    }

    #[test]
    fn labels_roundtrip_through_the_parser() {
        for spec in [
            "identity",
            "gaussian:0.05",
            "jpeg_mask:25,9",
            "jpeg_poly:50",
            "pseudo:jpeg:50",
            "pseudo:jpeg420:30",
        ] {
            let parsed = parse_attack_spec(spec).unwrap();
            assert_eq!(parse_attack_spec(&parsed.label()).unwrap(), parsed);
        }
    }
}
