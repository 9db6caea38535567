//! Report rendering: an aligned human-readable table plus
//! machine-readable CSV rows that parse back to the identical report.

use super::eval::{EvalReport, EvalRow};
use crate::error::{Error, Result};

fn fmt_ber(b: Option<f64>) -> String {
    match b {
        Some(v) => format!("{v:.2}"),
        None => "failed".into(),
    }
}

fn fmt_psnr(p: f64) -> String {
    if p.is_infinite() {
        "inf".into()
    } else {
        format!("{p:.2}")
    }
}

/// Aligned table for humans; BER to two decimals.
pub fn emit_text(report: &EvalReport) -> String {
    let label_w = report
        .rows
        .iter()
        .map(|r| r.attack.len())
        .chain(["attack".len()])
        .max()
        .unwrap_or(6);
    let mut out = String::new();
    out.push_str(&format!("{:<label_w$}  {:>8}\n", "attack", "BER(%)"));
    for row in &report.rows {
        out.push_str(&format!(
            "{:<label_w$}  {:>8}\n",
            row.attack,
            fmt_ber(row.ber_percent)
        ));
    }
    out.push_str(&format!(
        "APD {:.2}/255   PSNR {} dB   samples {}   config {}\n",
        report.apd,
        fmt_psnr(report.psnr),
        report.samples,
        report.fingerprint
    ));
    out
}

/// Delimiter-separated rows with a header and a metadata footer.
pub fn emit_machine(report: &EvalReport) -> String {
    let mut out = String::from("attack,ber_percent\n");
    for row in &report.rows {
        out.push_str(&format!("{},{}\n", row.attack, fmt_ber(row.ber_percent)));
    }
    out.push_str(&format!(
        "#meta apd={:.2} psnr={} samples={} fingerprint={}\n",
        report.apd,
        fmt_psnr(report.psnr),
        report.samples,
        report.fingerprint
    ));
    out
}

/// Parse [`emit_machine`] output back into an [`EvalReport`].
pub fn parse_machine(text: &str) -> Result<EvalReport> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("empty report".into()))?;
    if header != "attack,ber_percent" {
        return Err(Error::Config(format!("unexpected report header `{header}`")));
    }
    let mut rows = Vec::new();
    let mut meta = None;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#meta ") {
            meta = Some(rest.to_string());
            continue;
        }
        let (attack, ber) = line
            .rsplit_once(',')
            .ok_or_else(|| Error::Config(format!("bad report row `{line}`")))?;
        let ber_percent = if ber == "failed" {
            None
        } else {
            Some(
                ber.parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad BER value `{ber}`")))?,
            )
        };
        rows.push(EvalRow {
            attack: attack.to_string(),
            ber_percent,
        });
    }
    let meta = meta.ok_or_else(|| Error::Config("missing #meta footer".into()))?;
    let mut apd = None;
    let mut psnr = None;
    let mut samples = None;
    let mut fingerprint = None;
    for kv in meta.split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("bad meta entry `{kv}`")))?;
        match k {
            "apd" => apd = Some(v.parse::<f64>().map_err(|_| bad_meta(kv))?),
            "psnr" => {
                psnr = Some(if v == "inf" {
                    f64::INFINITY
                } else {
                    v.parse::<f64>().map_err(|_| bad_meta(kv))?
                })
            }
            "samples" => samples = Some(v.parse::<usize>().map_err(|_| bad_meta(kv))?),
            "fingerprint" => fingerprint = Some(v.to_string()),
            _ => return Err(Error::Config(format!("unknown meta key `{k}`"))),
        }
    }
    Ok(EvalReport {
        rows,
        apd: apd.ok_or_else(|| Error::Config("meta missing apd".into()))?,
        psnr: psnr.ok_or_else(|| Error::Config("meta missing psnr".into()))?,
        samples: samples.ok_or_else(|| Error::Config("meta missing samples".into()))?,
        fingerprint: fingerprint.ok_or_else(|| Error::Config("meta missing fingerprint".into()))?,
    })
}

fn bad_meta(kv: &str) -> Error {
    Error::Config(format!("bad meta entry `{kv}`"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> EvalReport {
        EvalReport {
            rows: vec![
                EvalRow {
                    attack: "none".into(),
                    ber_percent: Some(0.0),
                },
                EvalRow {
                    attack: "jpeg:50".into(),
                    ber_percent: Some(12.63),
                },
                EvalRow {
                    attack: "ext:50".into(),
                    ber_percent: None,
                },
            ],
            apd: 9.13,
            psnr: 28.41,
            samples: 256,
            fingerprint: "0123456789abcdef".into(),
        }
    }

    #[test]
    fn single_row_report_renders_header_and_row() {
        let mut r = sample_report();
        r.rows.truncate(1);
        let text = emit_text(&r);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("attack"));
        assert!(lines[1].starts_with("none"));
    }

    #[test]
    fn ber_is_formatted_to_two_decimals() {
        let text = emit_text(&sample_report());
        assert!(text.contains("12.63"), "{text}");
        let machine = emit_machine(&sample_report());
        assert!(machine.contains("jpeg:50,12.63"), "{machine}");
    }

    #[test]
    fn machine_rows_roundtrip_exactly() {
        let report = sample_report();
        let parsed = parse_machine(&emit_machine(&report)).unwrap();
        assert_eq!(parsed, report);
    }

    #[test]
    fn infinite_psnr_roundtrips() {
        let mut report = sample_report();
        report.psnr = f64::INFINITY;
        let parsed = parse_machine(&emit_machine(&report)).unwrap();
        assert_eq!(parsed, report);
    }

    #[test]
    fn parser_rejects_garbage() {
        assert!(parse_machine("").is_err());
        assert!(parse_machine("wrong,header\n").is_err());
        assert!(parse_machine("attack,ber_percent\njpeg:50,abc\n#meta apd=1 psnr=2 samples=3 fingerprint=f\n").is_err());
        assert!(parse_machine("attack,ber_percent\njpeg:50,1.00\n").is_err());
    }
}
