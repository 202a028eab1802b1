//! Diagnostics series serialization: one JSON object per line, a header
//! object carrying the configuration hash followed by one record per
//! sample. Numbers use the shortest round-tripping decimal form and map
//! keys have a fixed order, so identical series produce identical bytes.

use std::io::Write;

use serde_json::json;

use crate::diagnostics::{DiagnosticsSeries, NormSpec};
use crate::error::{FragkinError, Result};

pub const SCHEMA: &str = "fragkin-series-v1";

pub fn write_header(out: &mut impl Write, config_hash: &str) -> Result<()> {
    let header = json!({ "schema": SCHEMA, "config_sha256": config_hash });
    writeln!(out, "{header}")?;
    Ok(())
}

pub fn write_row(out: &mut impl Write, series: &DiagnosticsSeries, idx: usize) -> Result<()> {
    if idx >= series.len() {
        return Err(FragkinError::Config(format!(
            "sample index {idx} out of range for a series of {}",
            series.len()
        )));
    }
    let norms: serde_json::Map<String, serde_json::Value> = series
        .norms
        .iter()
        .map(|(k, v)| (k.clone(), json!(v[idx])))
        .collect();
    let row = json!({
        "t": series.times[idx],
        "mass": series.mass[idx],
        "number": series.number[idx],
        "norms": norms,
        "posmin": series.positivity_min[idx],
        "underflow": series.underflow_mass[idx],
        "overflow": series.overflow_mass[idx],
    });
    writeln!(out, "{row}")?;
    Ok(())
}

pub fn emit_series(
    series: &DiagnosticsSeries,
    config_hash: &str,
    out: &mut impl Write,
) -> Result<()> {
    write_header(out, config_hash)?;
    for idx in 0..series.len() {
        write_row(out, series, idx)?;
    }
    Ok(())
}

/// Parse an emitted document back into a series (the inverse of
/// `emit_series` up to the overflow particle count, which only checkpoints
/// carry). Returns the configuration hash from the header.
pub fn read_series(text: &str) -> Result<(String, DiagnosticsSeries)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: serde_json::Value = match lines.next() {
        Some(l) => serde_json::from_str(l)
            .map_err(|e| FragkinError::Config(format!("bad series header: {e}")))?,
        None => return Err(FragkinError::Config("series document is empty".into())),
    };
    if header["schema"] != SCHEMA {
        return Err(FragkinError::Config(format!(
            "unsupported series schema {}",
            header["schema"]
        )));
    }
    let hash = header["config_sha256"].as_str().unwrap_or_default().to_string();
    let mut series = DiagnosticsSeries::new(Vec::new());
    let mut specs_set = false;
    for (lineno, line) in lines.enumerate() {
        let row: serde_json::Value = serde_json::from_str(line).map_err(|e| {
            FragkinError::Config(format!("bad series record on line {}: {e}", lineno + 2))
        })?;
        let num = |v: &serde_json::Value, key: &str| -> Result<f64> {
            v[key].as_f64().ok_or_else(|| {
                FragkinError::Config(format!(
                    "series record on line {} misses a numeric {key:?}",
                    lineno + 2
                ))
            })
        };
        let norms = row["norms"].as_object().cloned().unwrap_or_default();
        if !specs_set {
            let specs: Vec<NormSpec> =
                norms.keys().filter_map(|k| NormSpec::from_key(k)).collect();
            series = DiagnosticsSeries::new(specs);
            specs_set = true;
        }
        series.times.push(num(&row, "t")?);
        series.mass.push(num(&row, "mass")?);
        series.number.push(num(&row, "number")?);
        series.positivity_min.push(num(&row, "posmin")?);
        series.underflow_mass.push(num(&row, "underflow")?);
        series.overflow_mass.push(num(&row, "overflow")?);
        series.overflow_number.push(0.0);
        for (k, v) in &norms {
            let val = v.as_f64().ok_or_else(|| {
                FragkinError::Config(format!(
                    "series record on line {} has a non-numeric norm {k:?}",
                    lineno + 2
                ))
            })?;
            if let Some(slot) = series.norms.get_mut(k) {
                slot.push(val);
            }
        }
    }
    Ok((hash, series))
}

/// Flat comma-separated view for plotting pipelines: fixed columns, then
/// the tracked norms in key order.
pub fn to_csv(series: &DiagnosticsSeries) -> String {
    let mut out = String::from("t,mass,number,posmin,underflow,overflow");
    for key in series.norms.keys() {
        out.push(',');
        out.push_str(key);
    }
    out.push('\n');
    for idx in 0..series.len() {
        out.push_str(&format!(
            "{},{},{},{},{},{}",
            series.times[idx],
            series.mass[idx],
            series.number[idx],
            series.positivity_min[idx],
            series.underflow_mass[idx],
            series.overflow_mass[idx],
        ));
        for v in series.norms.values() {
            out.push_str(&format!(",{}", v[idx]));
        }
        out.push('\n');
    }
    out
}
