//! CSV and JSON writers.

use std::io::Write;

use serde_json::{json, Map, Value};

use crate::config::RunConfig;

/// One named column of a table. `None` entries are written as empty CSV fields
/// and JSON `null`.
pub struct Column {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

impl Column {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Column {
            name: name.into(),
            values: values.into_iter().map(Some).collect(),
        }
    }

    pub fn sparse(name: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        Column {
            name: name.into(),
            values,
        }
    }
}

/// Full-precision decimal form, exactly 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Resolved config as embedded in output files. The output path is left out
/// so that the same run written to two places gives identical bytes.
fn embedded_entries(cfg: &RunConfig) -> Vec<(&'static str, String)> {
    cfg.entries().into_iter().filter(|(k, _)| *k != "output").collect()
}

fn preamble(command: &str, cfg: &RunConfig, notes: &[(String, String)]) -> String {
    let mut s = format!("# qsmooth {command} {}\n", env!("CARGO_PKG_VERSION"));
    for (k, v) in embedded_entries(cfg) {
        s.push_str(&format!("# {k} = {v}\n"));
    }
    for (k, v) in notes {
        s.push_str(&format!("# {k}: {v}\n"));
    }
    s
}

pub fn csv(command: &str, cfg: &RunConfig, notes: &[(String, String)], columns: &[Column]) -> String {
    let mut s = preamble(command, cfg, notes);
    let names: Vec<&str> = columns.iter().map(|c| c.name.as_str()).collect();
    s.push_str(&names.join(","));
    s.push('\n');
    let rows = columns.first().map_or(0, |c| c.values.len());
    for r in 0..rows {
        let fields: Vec<String> = columns
            .iter()
            .map(|c| c.values[r].map(fmt_f64).unwrap_or_default())
            .collect();
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    s
}

pub fn config_json(cfg: &RunConfig) -> Value {
    let mut m = Map::new();
    for (k, v) in embedded_entries(cfg) {
        m.insert(k.to_string(), Value::String(v));
    }
    Value::Object(m)
}

fn number(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

/// `{config, command, times, series, checks}`; the first column is the time axis.
pub fn json_document(command: &str, cfg: &RunConfig, columns: &[Column], checks: Value) -> String {
    let times: Vec<Value> = columns
        .first()
        .map(|c| c.values.iter().map(|v| v.map_or(Value::Null, number)).collect())
        .unwrap_or_default();
    let mut series = Map::new();
    for c in columns.iter().skip(1) {
        series.insert(
            c.name.clone(),
            Value::Array(c.values.iter().map(|v| v.map_or(Value::Null, number)).collect()),
        );
    }
    let doc = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config_json(cfg),
        "times": times,
        "series": series,
        "checks": checks,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("JSON values serialise");
    s.push('\n');
    s
}

pub fn json_f64(v: f64) -> Value {
    number(v)
}

/// Writes to `cfg.output`, or standard output when unset.
pub fn emit(cfg: &RunConfig, text: &str) -> std::io::Result<()> {
    match &cfg.output {
        Some(path) => std::fs::write(path, text),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 1.0 - f64::EPSILON] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(fmt_f64(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn csv_blank_fields_and_header() {
        let cfg = RunConfig::default();
        let cols = [
            Column::new("t", vec![0.0, 1.0]),
            Column::sparse("y", vec![Some(1.0), None]),
        ];
        let s = csv("test", &cfg, &[], &cols);
        let body: Vec<&str> = s.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body[0], "t,y");
        assert!(body[2].ends_with(','));
    }
}
