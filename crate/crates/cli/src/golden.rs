//! Golden reports: selected paths of a report with expected values.
//!
//! Strings that parse as expressions on the golden's chart are compared canonically,
//! numbers within a relative tolerance, everything else exactly.

use std::collections::BTreeMap;

use distlap_core::symexpr::equal;
use distlap_core::{Chart, Expr};
use serde::Deserialize;
use serde_json::Value;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Golden {
    pub example: String,
    pub chart: Vec<String>,
    pub tolerance: f64,
    /// Per-field tolerances keyed by path prefix; the longest matching prefix wins.
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    /// Dotted report path to expected value.
    pub expected: BTreeMap<String, Value>,
}

impl Golden {
    pub fn parse(src: &str) -> Result<Self> {
        let g: Golden = serde_json::from_str(src).map_err(|e| CliError::Golden(e.to_string()))?;
        Chart::from_names(g.chart.clone(), None).map_err(|e| CliError::Golden(e.to_string()))?;
        Ok(g)
    }

    /// Paths where `report` disagrees with the golden, with a short reason each.
    pub fn compare(&self, report: &Value, tolerance: Option<f64>) -> Vec<String> {
        let chart = Chart::from_names(self.chart.clone(), None).expect("checked in parse");
        let mut diffs = vec![];
        for (path, want) in &self.expected {
            let tol = tolerance.unwrap_or_else(|| self.tolerance_for(path));
            match lookup(report, path) {
                Some(got) => compare_values(path, want, got, &chart, tol, &mut diffs),
                None => diffs.push(format!("{path}: missing from report")),
            }
        }
        diffs
    }

    pub fn tolerance_for(&self, path: &str) -> f64 {
        self.tolerances
            .iter()
            .filter(|(k, _)| path == k.as_str() || path.starts_with(&format!("{k}.")))
            .max_by_key(|(k, _)| k.len())
            .map_or(self.tolerance, |(_, t)| *t)
    }
}

pub fn lookup<'a>(v: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(v, |v, seg| match v {
        Value::Object(m) => m.get(seg),
        Value::Array(a) => seg.parse::<usize>().ok().and_then(|i| a.get(i)),
        _ => None,
    })
}

fn same_expression(a: &str, b: &str, chart: &Chart) -> bool {
    match (Expr::parse(a, chart), Expr::parse(b, chart)) {
        (Ok(x), Ok(y)) => equal(&x, &y).holds(),
        _ => false,
    }
}

fn compare_values(path: &str, want: &Value, got: &Value, chart: &Chart, tol: f64, diffs: &mut Vec<String>) {
    match (want, got) {
        (Value::Object(w), Value::Object(g)) => {
            for k in g.keys().filter(|k| !w.contains_key(*k)) {
                diffs.push(format!("{path}.{k}: unexpected entry"));
            }
            for (k, wv) in w {
                match g.get(k) {
                    Some(gv) => compare_values(&format!("{path}.{k}"), wv, gv, chart, tol, diffs),
                    None => diffs.push(format!("{path}.{k}: missing from report")),
                }
            }
        }
        (Value::Array(w), Value::Array(g)) => {
            if w.len() != g.len() {
                diffs.push(format!("{path}: length {} expected, got {}", w.len(), g.len()));
                return;
            }
            for (i, (wv, gv)) in w.iter().zip(g).enumerate() {
                compare_values(&format!("{path}.{i}"), wv, gv, chart, tol, diffs);
            }
        }
        (Value::Number(w), Value::Number(g)) => {
            let (w, g) = (w.as_f64().unwrap_or(f64::NAN), g.as_f64().unwrap_or(f64::NAN));
            let within = (w - g).abs() <= tol * w.abs().max(1.0);
            if !within {
                diffs.push(format!("{path}: expected {w}, got {g}"));
            }
        }
        (Value::String(w), Value::String(g)) => {
            if w != g && !same_expression(w, g, chart) {
                diffs.push(format!("{path}: expected `{w}`, got `{g}`"));
            }
        }
        _ if want == got => {}
        _ => diffs.push(format!("{path}: expected {want}, got {got}")),
    }
}
