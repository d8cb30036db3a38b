use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Open box `(lo_i, hi_i)` per coordinate; bounds may be infinite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub bounds: Vec<(f64, f64)>,
}

impl Region {
    pub fn unbounded(n: usize) -> Self {
        Region { bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); n] }
    }

    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if lo.is_nan() || hi.is_nan() || lo >= hi {
                return Err(Error::InvalidInput(format!("region bound {i} is not ordered: ({lo}, {hi})")));
            }
        }
        Ok(Region { bounds })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim() && self.bounds.iter().zip(p).all(|(&(lo, hi), &x)| x > lo && x < hi)
    }

    /// Intersection with another box; `None` when empty.
    pub fn intersect(&self, other: &Region) -> Option<Region> {
        let b: Vec<_> = self
            .bounds
            .iter()
            .zip(&other.bounds)
            .map(|(&(a, b), &(c, d))| (a.max(c), b.min(d)))
            .collect();
        if b.iter().all(|&(lo, hi)| lo < hi) {
            Some(Region { bounds: b })
        } else {
            None
        }
    }

    /// Finite box used for sampling: infinite sides are replaced by a window of width 4.
    pub fn sampling_box(&self) -> Vec<(f64, f64)> {
        self.bounds
            .iter()
            .map(|&(lo, hi)| match (lo.is_finite(), hi.is_finite()) {
                (true, true) => (lo, hi),
                (true, false) => (lo, lo.max(-2.0) + 4.0),
                (false, true) => (hi.min(2.0) - 4.0, hi),
                (false, false) => (-2.0, 2.0),
            })
            .collect()
    }

    /// Deterministic pseudo-random interior points (5% margin from each finite side).
    pub fn sample_points(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let bx = self.sampling_box();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                bx.iter()
                    .map(|&(lo, hi)| {
                        let m = 0.05 * (hi - lo);
                        rng.random_range((lo + m)..(hi - m))
                    })
                    .collect()
            })
            .collect()
    }

    /// Tensor grid with `per_axis` points per coordinate, including the sampling box ends
    /// pulled inward by a small margin so that points are interior.
    pub fn grid_points(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let bx = self.sampling_box();
        let axes: Vec<Vec<f64>> = bx
            .iter()
            .map(|&(lo, hi)| {
                let m = 1e-3 * (hi - lo);
                let (a, b) = (lo + m, hi - m);
                if per_axis == 1 {
                    vec![0.5 * (a + b)]
                } else {
                    (0..per_axis).map(|k| a + (b - a) * k as f64 / (per_axis - 1) as f64).collect()
                }
            })
            .collect();
        let mut pts = vec![vec![]];
        for ax in &axes {
            let mut next = Vec::with_capacity(pts.len() * ax.len());
            for p in &pts {
                for &v in ax {
                    let mut q = p.clone();
                    q.push(v);
                    next.push(q);
                }
            }
            pts = next;
        }
        pts
    }

    /// Box `p ± r` clipped to this region.
    pub fn around(&self, p: &[f64], r: f64) -> Option<Region> {
        let b = Region { bounds: p.iter().map(|&x| (x - r, x + r)).collect() };
        self.intersect(&b)
    }

    /// Whether coordinate `i` stays away from zero on the region.
    pub fn excludes_zero(&self, i: usize) -> bool {
        let (lo, hi) = self.bounds[i];
        lo >= 0.0 || hi <= 0.0
    }
}

/// A coordinate chart: coordinate names and an open box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    pub names: Vec<String>,
    pub region: Region,
}

impl Chart {
    pub fn new(names: &[&str], region: Option<Region>) -> Result<Self> {
        let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        Self::from_names(names, region)
    }

    pub fn from_names(names: Vec<String>, region: Option<Region>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidInput("chart needs at least one coordinate".into()));
        }
        for (i, a) in names.iter().enumerate() {
            let ok = a.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
                && a.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            if !ok || RESERVED.contains(&a.as_str()) {
                return Err(Error::InvalidInput(format!("bad coordinate name `{a}`")));
            }
            if names[..i].contains(a) {
                return Err(Error::InvalidInput(format!("duplicate coordinate name `{a}`")));
            }
        }
        let region = region.unwrap_or_else(|| Region::unbounded(names.len()));
        if region.dim() != names.len() {
            return Err(Error::DimensionMismatch(format!(
                "region has {} bounds for {} coordinates",
                region.dim(),
                names.len()
            )));
        }
        Ok(Chart { names, region })
    }

    /// Chart on `R^n` with names `x, y, z, w` (or `x0..` beyond four).
    pub fn standard(n: usize, region: Option<Region>) -> Self {
        let names: Vec<String> = if n <= 4 {
            ["x", "y", "z", "w"][..n].iter().map(|s| s.to_string()).collect()
        } else {
            (0..n).map(|i| format!("x{i}")).collect()
        };
        Chart::from_names(names, region).expect("standard names are valid")
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn with_region(&self, region: Region) -> Result<Chart> {
        Chart::from_names(self.names.clone(), Some(region))
    }
}

pub(crate) const RESERVED: &[&str] = &["exp", "sin", "cos", "recip", "flatplus", "piecewise", "pi"];
