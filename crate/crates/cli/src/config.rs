//! TOML job configuration.

use std::collections::BTreeMap;

use distlap_core::{Chart, Expr, Region};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const ANALYSES: &[&str] = &[
    "fibers",
    "presentation",
    "metric",
    "laplacian",
    "symbol",
    "ims",
    "hull",
    "derham",
    "isometry",
    "discretize",
    "spectrum",
    "probe",
];

/// Tolerances with their defaults. Keys outside this table are rejected.
pub const TOLERANCES: &[(&str, f64)] = &[
    ("quadrature", 1e-8),
    ("positivity", 1e-10),
    ("grid_symmetry", 1e-12),
    ("grid_dirichlet", 1e-12),
    ("spectrum_residual", 1e-8),
    ("isometry", 1e-10),
    ("golden", 1e-9),
];

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub label: String,
    #[serde(default)]
    pub notes: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub analyses: Vec<String>,
    pub chart: ChartBlock,
    #[serde(rename = "distribution")]
    pub distributions: Vec<DistributionBlock>,
    #[serde(default)]
    pub density: DensityBlock,
    #[serde(default, rename = "presentation")]
    pub presentations: Vec<PresentationBlock>,
    #[serde(default)]
    pub partition: Option<PartitionBlock>,
    #[serde(default, rename = "map")]
    pub maps: Vec<MapBlock>,
    #[serde(default)]
    pub options: Options,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartBlock {
    pub names: Vec<String>,
    /// Analysis box, one `[lo, hi]` per coordinate.
    pub bounds: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionBlock {
    pub label: String,
    /// One coefficient list per generator.
    pub generators: Vec<Vec<String>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityBlock {
    pub weight: String,
}

impl Default for DensityBlock {
    fn default() -> Self {
        DensityBlock { weight: "1".into() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresentationBlock {
    pub distribution: String,
    /// Anchor fields; the generators of the distribution when absent.
    #[serde(default)]
    pub anchor: Option<Vec<Vec<String>>>,
    /// Frame metric `G`; the identity when absent.
    #[serde(default)]
    pub frame_metric: Option<Vec<Vec<String>>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionBlock {
    /// Coordinate name the two pieces vary along.
    pub var: String,
    /// Overlap interval as exact rationals, e.g. `["-1/2", "1/2"]`.
    pub overlap: [String; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapBlock {
    pub label: String,
    pub forward: Vec<String>,
    pub inverse: Vec<String>,
    /// Source and target distributions; the primary one when absent.
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default)]
    pub target: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Options {
    pub jet_order: usize,
    pub fiber_points: Vec<Vec<f64>>,
    pub hull_depth: usize,
    /// Nodes per axis; chosen from the dimension when absent.
    pub grid_n: Option<usize>,
    pub boundary: String,
    pub spectrum_count: usize,
    pub probe_times: Vec<f64>,
    /// Heat probe start point; the box center when absent.
    pub probe_point: Option<Vec<f64>>,
    pub trials: usize,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            jet_order: distlap_core::distribution::DEFAULT_JET_ORDER,
            fiber_points: vec![],
            hull_depth: 3,
            grid_n: None,
            boundary: "dirichlet".into(),
            spectrum_count: 4,
            probe_times: vec![0.01, 0.05, 0.1],
            probe_point: None,
            trials: 10,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default)]
    pub dir: Option<String>,
}

impl JobConfig {
    pub fn from_toml(src: &str) -> Result<Self> {
        let cfg: JobConfig = toml::from_str(src).map_err(|e| CliError::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn dim(&self) -> usize {
        self.chart.names.len()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.chart.bounds.iter().map(|b| (b[0], b[1])).collect()
    }

    pub fn chart(&self) -> Result<Chart> {
        let region = Region::new(self.bounds()).map_err(|e| CliError::InvalidConfig(format!("chart bounds: {e}")))?;
        Chart::from_names(self.chart.names.clone(), Some(region)).map_err(|e| CliError::InvalidConfig(format!("chart: {e}")))
    }

    pub fn tolerance(&self, key: &str) -> f64 {
        self.tolerances
            .get(key)
            .copied()
            .or_else(|| TOLERANCES.iter().find(|(k, _)| *k == key).map(|(_, v)| *v))
            .expect("known tolerance key")
    }

    /// Analyses to run, in the canonical order.
    pub fn analysis_list(&self) -> Vec<&'static str> {
        ANALYSES.iter().copied().filter(|a| self.analyses.iter().any(|b| b == a)).collect()
    }

    pub fn distribution(&self, label: &str) -> Result<&DistributionBlock> {
        self.distributions
            .iter()
            .find(|d| d.label == label)
            .ok_or_else(|| CliError::InvalidConfig(format!("no distribution labelled `{label}`")))
    }

    pub fn primary(&self) -> &DistributionBlock {
        &self.distributions[0]
    }

    pub fn set_tolerance(&mut self, spec: &str) -> Result<()> {
        let (k, v) = spec
            .split_once('=')
            .ok_or_else(|| CliError::InvalidConfig(format!("tolerance override `{spec}` is not key=value")))?;
        let k = k.trim();
        if !TOLERANCES.iter().any(|(t, _)| *t == k) {
            return Err(CliError::UnknownTolerance(k.into()));
        }
        let v: f64 = v.trim().parse().map_err(|_| CliError::InvalidConfig(format!("tolerance `{k}` is not a number")))?;
        self.tolerances.insert(k.into(), v);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::InvalidConfig(m));
        let n = self.dim();
        if n == 0 || self.chart.bounds.len() != n {
            return bad(format!("chart has {} names and {} bounds", n, self.chart.bounds.len()));
        }
        let chart = self.chart()?;
        let parse = |s: &str, what: &str| -> Result<Expr> {
            Expr::parse(s, &chart).map_err(|e| CliError::InvalidConfig(format!("{what}: `{s}`: {e}")))
        };
        let fields = |gens: &[Vec<String>], what: &str| -> Result<()> {
            for g in gens {
                if g.len() != n {
                    return Err(CliError::InvalidConfig(format!("{what}: field with {} coefficients on a {n}-dimensional chart", g.len())));
                }
                for c in g {
                    parse(c, what)?;
                }
            }
            Ok(())
        };
        if self.distributions.is_empty() {
            return bad("at least one distribution block is required".into());
        }
        for (i, d) in self.distributions.iter().enumerate() {
            if self.distributions[..i].iter().any(|e| e.label == d.label) {
                return bad(format!("duplicate distribution label `{}`", d.label));
            }
            fields(&d.generators, &format!("distribution `{}`", d.label))?;
        }
        parse(&self.density.weight, "density")?;
        for p in &self.presentations {
            self.distribution(&p.distribution)?;
            if let Some(a) = &p.anchor {
                fields(a, "presentation anchor")?;
            }
            if let Some(g) = &p.frame_metric {
                let k = p.anchor.as_ref().map_or_else(|| self.distribution(&p.distribution).map(|d| d.generators.len()), |a| Ok(a.len()))?;
                if g.len() != k || g.iter().any(|r| r.len() != k) {
                    return bad(format!("frame metric must be {k}x{k}"));
                }
                for c in g.iter().flatten() {
                    parse(c, "frame metric")?;
                }
            }
        }
        if let Some(pu) = &self.partition {
            if chart.index_of(&pu.var).is_none() {
                return bad(format!("partition variable `{}` is not a coordinate", pu.var));
            }
            for s in &pu.overlap {
                if parse(s, "partition overlap")?.as_constant().is_none() {
                    return bad(format!("partition overlap `{s}` is not a rational constant"));
                }
            }
        }
        for m in &self.maps {
            if m.forward.len() != n || m.inverse.len() != n {
                return bad(format!("map `{}` needs {n} forward and inverse components", m.label));
            }
            for c in m.forward.iter().chain(&m.inverse) {
                parse(c, &format!("map `{}`", m.label))?;
            }
            for l in m.source.iter().chain(&m.target) {
                self.distribution(l)?;
            }
        }
        for a in &self.analyses {
            if !ANALYSES.contains(&a.as_str()) {
                return Err(CliError::UnknownAnalysis(a.clone()));
            }
        }
        for k in self.tolerances.keys() {
            if !TOLERANCES.iter().any(|(t, _)| t == k) {
                return Err(CliError::UnknownTolerance(k.clone()));
            }
        }
        for p in &self.options.fiber_points {
            if p.len() != n {
                return bad(format!("fiber point {p:?} has the wrong dimension"));
            }
        }
        if let Some(p) = &self.options.probe_point {
            if p.len() != n {
                return bad(format!("probe point {p:?} has the wrong dimension"));
            }
        }
        if !matches!(self.options.boundary.as_str(), "dirichlet" | "periodic") {
            return bad(format!("boundary `{}` must be dirichlet or periodic", self.options.boundary));
        }
        Ok(())
    }
}
