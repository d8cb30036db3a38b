//! Report assembly and serialization.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::JobConfig;

#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub label: String,
    pub tool_version: String,
    /// SHA-256 of the effective configuration after command-line overrides.
    pub config_hash: String,
    pub seed: u64,
    pub jet_order: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub provenance: Provenance,
    pub analyses: BTreeMap<String, Value>,
    pub summary: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Text,
    Csv,
}

pub fn config_hash(cfg: &JobConfig) -> String {
    let digest = Sha256::digest(cfg.to_toml().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Report {
    pub fn new(cfg: &JobConfig, analyses: BTreeMap<String, Value>) -> Self {
        let summary = analyses.iter().map(|(k, v)| format!("{k}: {}", status(v))).collect();
        Report {
            provenance: Provenance {
                label: cfg.label.clone(),
                tool_version: env!("CARGO_PKG_VERSION").into(),
                config_hash: config_hash(cfg),
                seed: cfg.seed,
                jet_order: cfg.options.jet_order,
            },
            analyses,
            summary,
        }
    }

    pub fn has_errors(&self) -> bool {
        self.analyses.values().any(|v| v.get("error").is_some())
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("report serializes")
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => serde_json::to_string_pretty(self).expect("report serializes") + "\n",
            Format::Text => {
                let p = &self.provenance;
                let mut s = format!("{} (distlap {}, seed {}, config {})\n", p.label, p.tool_version, p.seed, &p.config_hash[..12]);
                for line in &self.summary {
                    s.push_str("  ");
                    s.push_str(line);
                    s.push('\n');
                }
                s
            }
            Format::Csv => {
                let mut rows = vec![];
                flatten("", &self.to_value(), &mut rows);
                let mut s = String::from("path,value\n");
                for (k, v) in rows {
                    s.push_str(&format!("{},{}\n", csv_field(&k), csv_field(&v)));
                }
                s
            }
        }
    }
}

fn status(v: &Value) -> String {
    if let Some(e) = v.get("error") {
        return format!("error ({})", e["kind"].as_str().unwrap_or("?"));
    }
    if let Some(s) = v.get("skipped") {
        return format!("skipped ({})", s["upstream"].as_str().unwrap_or("?"));
    }
    match v.get("pass").and_then(Value::as_bool) {
        Some(true) => "pass".into(),
        Some(false) => "FAIL".into(),
        None => "done".into(),
    }
}

/// Leaf values keyed by dotted paths.
pub fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(m) => m.iter().for_each(|(k, v)| flatten(&join(k), v, out)),
        Value::Array(a) => a.iter().enumerate().for_each(|(i, v)| flatten(&join(&i.to_string()), v, out)),
        Value::String(s) => out.push((prefix.into(), s.clone())),
        _ => out.push((prefix.into(), v.to_string())),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn flatten_and_csv() {
        let mut rows = vec![];
        flatten("", &json!({"a": {"b": [1, "x,y"]}, "c": true}), &mut rows);
        assert_eq!(rows, vec![("a.b.0".into(), "1".into()), ("a.b.1".into(), "x,y".into()), ("c".into(), "true".into())]);
        assert_eq!(csv_field("x,y"), "\"x,y\"");
    }

    #[test]
    fn statuses() {
        assert_eq!(status(&json!({"error": {"kind": "NotInvolutive"}})), "error (NotInvolutive)");
        assert_eq!(status(&json!({"pass": false})), "FAIL");
        assert_eq!(status(&json!({"skipped": {"upstream": "laplacian"}})), "skipped (laplacian)");
    }
}
