//! Built-in example configurations and their goldens.

use crate::config::JobConfig;
use crate::error::{CliError, Result};

struct Entry {
    label: &'static str,
    config: &'static str,
    golden: &'static str,
}

macro_rules! entry {
    ($l:literal) => {
        Entry {
            label: $l,
            config: include_str!(concat!("../registry/", $l, ".toml")),
            golden: include_str!(concat!("../goldens/", $l, ".json")),
        }
    };
}

const ENTRIES: &[Entry] = &[
    entry!("gl2_vanishing_origin"),
    entry!("pathological_flat"),
    entry!("heisenberg"),
    entry!("grushin"),
    entry!("martinet"),
    entry!("exs_distr_i"),
    entry!("bump_line"),
];

pub fn registry_list() -> Vec<&'static str> {
    ENTRIES.iter().map(|e| e.label).collect()
}

fn entry(label: &str) -> Result<&'static Entry> {
    ENTRIES.iter().find(|e| e.label == label).ok_or_else(|| CliError::UnknownLabel(label.into()))
}

pub fn registry_source(label: &str) -> Result<&'static str> {
    Ok(entry(label)?.config)
}

pub fn registry_get(label: &str) -> Result<JobConfig> {
    JobConfig::from_toml(registry_source(label)?)
}

pub fn registry_golden(label: &str) -> Result<&'static str> {
    Ok(entry(label)?.golden)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_entry_parses() {
        for l in registry_list() {
            let c = registry_get(l).unwrap();
            assert_eq!(c.label, l);
            crate::golden::Golden::parse(registry_golden(l).unwrap()).unwrap();
        }
        assert!(matches!(registry_get("nope"), Err(CliError::UnknownLabel(_))));
    }
}
