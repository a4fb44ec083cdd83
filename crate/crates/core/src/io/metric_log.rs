//! JSON-lines training log.
//!
//! One object per optimizer step with keys in this order:
//! `epoch, step, phase, applied_lambda, applied_beta, loss_clip, loss_kd_diag,
//! loss_kd_offdiag, loss_conf, loss_feat, logit_scale, eval, geometry`.
//! `eval` and `geometry` are `null` except on the last step of each epoch.
//! Floats are written in exponent form with 17 significant digits, which
//! round-trips every double exactly; non-finite values become `null` and read
//! back as NaN.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;

use crate::error::Result;
use crate::eval::EvalSummary;
use crate::geometry::GeometryReport;
use crate::schedule::Phase;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    /// Step index within the epoch.
    pub step: usize,
    pub phase: Phase,
    #[serde(deserialize_with = "nullable_f64")]
    pub applied_lambda: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub applied_beta: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub loss_clip: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub loss_kd_diag: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub loss_kd_offdiag: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub loss_conf: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub loss_feat: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub logit_scale: f64,
    pub eval: Option<EvalSummary>,
    pub geometry: Option<GeometryReport>,
}

/// Reads `null` back as NaN, mirroring how non-finite values are written.
fn nullable_f64<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// Writes every float as `{:.16e}`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactFloatFormatter;

impl Formatter for ExactFloatFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Serializes any value as compact JSON with exact floats.
pub fn to_exact_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloatFormatter);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_metric_log<W: Write>(mut out: W, records: &[MetricRecord]) -> Result<()> {
    for r in records {
        writeln!(out, "{}", to_exact_json(r)?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metric_log<R: BufRead>(input: R) -> Result<Vec<MetricRecord>> {
    let mut records = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(x: f64) -> MetricRecord {
        MetricRecord {
            epoch: 3,
            step: 1,
            phase: Phase::Repulsive,
            applied_lambda: 1.0,
            applied_beta: x,
            loss_clip: x * 3.0,
            loss_kd_diag: 0.1,
            loss_kd_offdiag: 1.0 / 3.0,
            loss_conf: 0.0,
            loss_feat: -0.0,
            logit_scale: 14.285714285714286,
            eval: Some(EvalSummary {
                f1_macro: 0.5,
                f1_all: 0.25,
                validity_rate: 0.875,
                avg_selection: x.abs().min(1.0),
            }),
            geometry: None,
        }
    }

    #[test]
    fn key_order_is_fixed() {
        let line = to_exact_json(&record(-0.16)).unwrap();
        let keys = [
            "epoch",
            "step",
            "phase",
            "applied_lambda",
            "applied_beta",
            "loss_clip",
            "loss_kd_diag",
            "loss_kd_offdiag",
            "loss_conf",
            "loss_feat",
            "logit_scale",
            "eval",
            "geometry",
        ];
        let pos: Vec<usize> = keys
            .iter()
            .map(|k| line.find(&format!("\"{k}\"")).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{line}");
        assert!(line.contains("\"phase\":\"repulsive\""));
        assert!(line.contains("\"applied_lambda\":1.0000000000000000e0"));
    }

    #[test]
    fn non_finite_becomes_null() {
        let line = to_exact_json(&record(f64::NAN)).unwrap();
        assert!(line.contains("\"applied_beta\":null"));
    }

    proptest! {
        #[test]
        fn numbers_round_trip(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let mut buf = Vec::new();
            write_metric_log(&mut buf, &[record(x)]).unwrap();
            let parsed = read_metric_log(&buf[..]).unwrap();
            prop_assert_eq!(parsed[0].applied_beta.to_bits(), x.to_bits());
            let mut again = Vec::new();
            write_metric_log(&mut again, &parsed).unwrap();
            prop_assert_eq!(buf, again);
        }
    }
}
