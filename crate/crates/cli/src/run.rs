//! Builds the shared products of a job and runs its analyses.

use std::collections::BTreeMap;

use distlap_core::distribution::{fiber_dims, minimal_presentation, Distribution, LocalPresentation};
use distlap_core::forms::{d_squared_check, hodge_laplacian};
use distlap_core::isometry::{check_distribution_preserved, check_isometry, check_laplacian_commutation, Diffeo};
use distlap_core::laplacian::{
    d_star_d, dirichlet_form_check, ims_localization_check, laplacian_any_form, principal_symbol, symmetry_check, HorizontalLaplacian,
    PartitionOfUnity,
};
use distlap_core::liehull::{hull_generate, is_involutive, structure_coefficients};
use distlap_core::linalg::ExprMatrix;
use distlap_core::metric::induced_cometric;
use distlap_core::numerics::{
    delta_at, discrete_dirichlet_identity, discretize, low_spectrum, smoothing_probe, weighted_symmetry_check, Boundary, Grid, GridOperator,
};
use distlap_core::symexpr::equal;
use distlap_core::{Chart, Density, Error, Exec, Expr, VectorField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::JobConfig;
use crate::error::{CliError, Result};
use crate::report::Report;

/// File written next to the report when an output directory is given.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub report: Report,
    pub artifacts: Vec<Artifact>,
}

#[derive(Clone, Debug)]
struct Failure {
    stage: &'static str,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn new(stage: &'static str, e: &Error) -> Self {
        Failure { stage, kind: error_kind(e), message: e.to_string() }
    }
}

pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Parse { .. } => "Parse",
        Error::SingularPoint(_) => "SingularPoint",
        Error::NotRepresentable(_) => "NotRepresentable",
        Error::DimensionMismatch(_) => "DimensionMismatch",
        Error::InvalidInput(_) => "InvalidInput",
        Error::OrderOverflow(_) => "OrderOverflow",
        Error::Inconclusive { .. } => "Inconclusive",
        Error::JetUnstable { .. } => "JetUnstable",
        Error::NoStableBasis(_) => "NoStableBasis",
        Error::NotEquivalent(_) => "NotEquivalent",
        Error::RankDeficient(_) => "RankDeficient",
        Error::NonSymbolicCholesky(_) => "NonSymbolicCholesky",
        Error::SupportViolation(_) => "SupportViolation",
        Error::NotAMember(_) => "NotAMember",
        Error::NotInvolutive { .. } => "NotInvolutive",
        Error::DegreeOverflow(_) => "DegreeOverflow",
        Error::DensityMismatch(_) => "DensityMismatch",
        Error::CoefficientSingularOnGrid(_) => "CoefficientSingularOnGrid",
        Error::NoConvergence(_) => "NoConvergence",
    }
}

fn error_value(e: &Error) -> Value {
    json!({ "error": { "kind": error_kind(e), "message": e.to_string() } })
}

type Product<T> = std::result::Result<T, Failure>;

struct Job<'a> {
    cfg: &'a JobConfig,
    chart: Chart,
    bounds: Vec<(f64, f64)>,
    exec: Exec,
    dists: BTreeMap<String, Distribution>,
    density: Product<Density>,
    presentation: Product<(LocalPresentation, String)>,
    laplacian: Product<HorizontalLaplacian>,
    grid_op: Product<GridOperator>,
}

enum Step {
    Done(Value, Vec<Artifact>),
    Failed(Error),
    Skipped(Failure),
}

impl From<Error> for Step {
    fn from(e: Error) -> Self {
        Step::Failed(e)
    }
}

fn done(v: Value) -> std::result::Result<Step, Step> {
    Ok(Step::Done(v, vec![]))
}

fn skip<T>(p: &Product<T>) -> std::result::Result<&T, Step> {
    p.as_ref().map_err(|f| Step::Skipped(f.clone()))
}

fn render_matrix(m: &ExprMatrix, chart: &Chart) -> Vec<Vec<String>> {
    m.iter().map(|r| r.iter().map(|e| e.render(chart)).collect()).collect()
}

fn render_fields(fs: &[VectorField], chart: &Chart) -> Vec<Vec<String>> {
    fs.iter().map(|f| f.render(chart)).collect()
}

pub fn default_grid_n(dim: usize) -> usize {
    match dim {
        1 => 64,
        2 => 32,
        3 => 12,
        _ => 6,
    }
}

fn parse_matrix(rows: &[Vec<String>], chart: &Chart) -> Result<ExprMatrix> {
    rows.iter()
        .map(|r| r.iter().map(|s| Expr::parse(s, chart).map_err(|e| CliError::InvalidConfig(e.to_string()))).collect())
        .collect()
}

fn parse_fields(rows: &[Vec<String>], chart: &Chart) -> Result<Vec<VectorField>> {
    Ok(parse_matrix(rows, chart)?.into_iter().map(VectorField::new).collect())
}

impl<'a> Job<'a> {
    fn build(cfg: &'a JobConfig, exec: Exec) -> Result<Self> {
        let chart = cfg.chart()?;
        let bounds = cfg.bounds();
        let mut dists = BTreeMap::new();
        for d in &cfg.distributions {
            let gens = parse_fields(&d.generators, &chart)?;
            let dist = Distribution::new(chart.clone(), gens, d.label.clone()).map_err(|e| CliError::InvalidConfig(e.to_string()))?;
            dists.insert(d.label.clone(), dist);
        }
        let weight = Expr::parse(&cfg.density.weight, &chart).map_err(|e| CliError::InvalidConfig(e.to_string()))?;
        let density = Density::new(weight, &chart.region).map_err(|e| Failure::new("density", &e));
        let primary = &dists[&cfg.primary().label];
        let presentation = match cfg.presentations.iter().find(|p| p.distribution == cfg.primary().label) {
            Some(block) => {
                let anchor = match &block.anchor {
                    Some(a) => parse_fields(a, &chart)?,
                    None => primary.generators.clone(),
                };
                let built = match &block.frame_metric {
                    Some(g) => LocalPresentation::with_metric(chart.clone(), anchor, parse_matrix(g, &chart)?),
                    None => LocalPresentation::new(chart.clone(), anchor),
                };
                built.map(|p| (p, "configured".to_string()))
            }
            None => {
                let center: Vec<f64> = bounds.iter().map(|(a, b)| 0.5 * (a + b)).collect();
                minimal_presentation(primary, &center).map(|p| (p, format!("minimal at {center:?}")))
            }
        }
        .map_err(|e| Failure::new("presentation", &e));
        let wanted = cfg.analysis_list();
        let needs_lap = wanted.iter().any(|a| !matches!(*a, "fibers" | "presentation" | "metric" | "hull"));
        let laplacian = if needs_lap {
            match (&presentation, &density) {
                (Ok((p, _)), Ok(mu)) => laplacian_any_form(p, mu).map_err(|e| Failure::new("laplacian", &e)),
                (Err(f), _) | (_, Err(f)) => Err(f.clone()),
            }
        } else {
            Err(Failure { stage: "laplacian", kind: "NotRequested", message: "not requested".into() })
        };
        let needs_grid = wanted.iter().any(|a| matches!(*a, "discretize" | "spectrum" | "probe"));
        let grid_op = if needs_grid {
            laplacian.clone().and_then(|lap| {
                let boundary = if cfg.options.boundary == "periodic" { Boundary::Periodic } else { Boundary::Dirichlet };
                let n = cfg.options.grid_n.unwrap_or_else(|| default_grid_n(cfg.dim()));
                Grid::uniform(bounds.clone(), n, boundary).and_then(|g| discretize(&lap, &g, exec)).map_err(|e| Failure::new("discretize", &e))
            })
        } else {
            Err(Failure { stage: "discretize", kind: "NotRequested", message: "not requested".into() })
        };
        Ok(Job { cfg, chart, bounds, exec, dists, density, presentation, laplacian, grid_op })
    }

    fn primary(&self) -> &Distribution {
        &self.dists[&self.cfg.primary().label]
    }

    fn fiber_points(&self) -> Vec<Vec<f64>> {
        if self.cfg.options.fiber_points.is_empty() {
            vec![self.bounds.iter().map(|(a, b)| 0.5 * (a + b)).collect()]
        } else {
            self.cfg.options.fiber_points.clone()
        }
    }

    fn run(&self, name: &str) -> Value {
        let step = match name {
            "fibers" => self.fibers(),
            "presentation" => self.presentation(),
            "metric" => self.metric(),
            "laplacian" => self.laplacian(),
            "symbol" => self.symbol(),
            "ims" => self.ims(),
            "hull" => self.hull(),
            "derham" => self.derham(),
            "isometry" => self.isometry(),
            "discretize" => self.discretize(),
            "spectrum" => self.spectrum(),
            "probe" => self.probe(),
            _ => unreachable!("validated analysis name"),
        };
        let step = step.unwrap_or_else(|s| s);
        match step {
            Step::Done(v, arts) => {
                if arts.is_empty() {
                    v
                } else {
                    json!({ "result": v, "artifacts": arts.into_iter().map(|a| (a.name, Value::String(a.contents))).collect::<BTreeMap<_, _>>() })
                }
            }
            Step::Failed(e) => error_value(&e),
            Step::Skipped(f) => json!({ "skipped": { "upstream": f.stage, "kind": f.kind, "reason": f.message } }),
        }
    }

    fn fibers(&self) -> std::result::Result<Step, Step> {
        let d = self.primary();
        let rows: Vec<Value> = self
            .fiber_points()
            .iter()
            .map(|p| match fiber_dims(d, p, self.cfg.options.jet_order) {
                Ok(r) => json!({
                    "point": p,
                    "dim_fiber": r.dim_fiber,
                    "dim_dx": r.dim_dx,
                    "dim_kernel": r.dim_kernel,
                    "basis_indices": r.basis_indices,
                    "jet_order_used": r.jet_order_used,
                    "stable": r.stable,
                }),
                Err(e) => json!({ "point": p, "failure": error_value(&e)["error"] }),
            })
            .collect();
        done(json!({ "distribution": d.label, "points": rows }))
    }

    fn presentation(&self) -> std::result::Result<Step, Step> {
        let (p, origin) = skip(&self.presentation)?;
        done(json!({
            "origin": origin,
            "rank": p.rank(),
            "anchor": render_fields(&p.anchor, &self.chart),
            "frame_metric": render_matrix(&p.frame_metric, &self.chart),
            "base_region": p.base_region().bounds,
        }))
    }

    fn metric(&self) -> std::result::Result<Step, Step> {
        let (p, _) = skip(&self.presentation)?;
        let g = induced_cometric(p)?;
        let ranks = self
            .fiber_points()
            .iter()
            .map(|x| Ok(json!({ "point": x, "rank": g.rank_at(x)? })))
            .collect::<distlap_core::Result<Vec<Value>>>()?;
        done(json!({ "cometric": g.render(&self.chart), "ranks": ranks }))
    }

    fn trial_functions(&self) -> Vec<Expr> {
        let n = self.cfg.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let mut monomials = vec![vec![0i64; n]];
        for i in 0..n {
            let mut e = vec![0; n];
            e[i] = 1;
            monomials.push(e);
            for j in i..n {
                let mut e = vec![0; n];
                e[i] += 1;
                e[j] += 1;
                monomials.push(e);
            }
        }
        (0..self.cfg.options.trials)
            .map(|_| {
                Expr::sum(monomials.iter().map(|m| {
                    let c: i64 = rng.random_range(-4..=4);
                    Expr::coord_power(m).scale(&distlap_core::symexpr::qf(c, 4))
                }))
            })
            .collect()
    }

    fn laplacian(&self) -> std::result::Result<Step, Step> {
        let lap = skip(&self.laplacian)?;
        let mu = skip(&self.density)?;
        let dd = d_star_d(&lap.presentation, mu)?;
        let matches = dd.sub(&lap.operator).is_zero();
        let quad_tol = self.cfg.tolerance("quadrature");
        let pos_tol = self.cfg.tolerance("positivity");
        let trials = self.trial_functions();
        let mut worst_identity: f64 = 0.0;
        let mut min_energy = f64::INFINITY;
        let mut worst_symmetry: f64 = 0.0;
        for (i, u) in trials.iter().enumerate() {
            let c = dirichlet_form_check(lap, u, &self.bounds, self.exec)?;
            worst_identity = worst_identity.max(c.residual / c.lhs.abs().max(1.0));
            min_energy = min_energy.min(c.lhs);
            if let Some(v) = trials.get(i + 1) {
                let s = symmetry_check(lap, u, v, &self.bounds, self.exec)?;
                worst_symmetry = worst_symmetry.max(s);
            }
        }
        let trials_pass = trials.is_empty() || (worst_identity <= quad_tol && worst_symmetry <= quad_tol && min_energy >= -pos_tol);
        done(json!({
            "form": lap.form,
            "operator": lap.operator.keyed(&self.chart),
            "display": lap.operator.render(&self.chart),
            "fields": render_fields(&lap.fields, &self.chart),
            "matches_d_star_d": matches,
            "trials": {
                "count": trials.len(),
                "seed": self.cfg.seed,
                "max_dirichlet_residual": worst_identity,
                "max_symmetry_defect": worst_symmetry,
                "min_energy": if trials.is_empty() { 0.0 } else { min_energy },
            },
            "pass": matches && trials_pass,
        }))
    }

    fn symbol(&self) -> std::result::Result<Step, Step> {
        let lap = skip(&self.laplacian)?;
        let s = principal_symbol(lap)?;
        let a = s.coefficient_matrix();
        let equals = a.iter().zip(&lap.cometric.matrix).all(|(r, g)| r.iter().zip(g).all(|(x, y)| equal(x, y).holds()));
        done(json!({
            "symbol": s.render(),
            "coefficient_matrix": render_matrix(&a, &self.chart),
            "equals_cometric": equals,
            "pass": equals,
        }))
    }

    fn ims(&self) -> std::result::Result<Step, Step> {
        let lap = skip(&self.laplacian)?;
        let Some(pu) = &self.cfg.partition else {
            return Err(Step::Failed(Error::InvalidInput("ims needs a [partition] block".into())));
        };
        let var = self.chart.index_of(&pu.var).expect("validated");
        let c = |s: &str| Expr::parse(s, &self.chart).ok().and_then(|e| e.as_constant()).expect("validated");
        let part = PartitionOfUnity::trig_pair(self.chart.clone(), var, c(&pu.overlap[0]), c(&pu.overlap[1]))?;
        let r = ims_localization_check(lap, &part)?;
        done(json!({
            "canonical_zero": r.canonical_zero,
            "sampled_defect": r.sampled_defect,
            "max_remainder_order": r.max_remainder_order,
            "remainders": r.remainders.iter().map(|d| d.keyed(&self.chart)).collect::<Vec<_>>(),
            "pass": r.holds(),
        }))
    }

    fn hull(&self) -> std::result::Result<Step, Step> {
        let r = hull_generate(self.primary(), self.cfg.options.hull_depth, self.exec)?;
        let ranks: Vec<usize> = r.final_ranks().iter().flatten().copied().collect();
        done(json!({
            "depth": r.depth,
            "new_fields": r.new_fields,
            "grid_size": r.grid.len(),
            "final_rank_min": ranks.iter().min(),
            "final_rank_max": ranks.iter().max(),
            "singular_grid_points": r.final_ranks().len() - ranks.len(),
            "bracket_generating": r.bracket_generating,
            "membership_closed": r.membership_closed,
            "suspicious_growth": r.suspicious_growth,
            "max_pole_order": r.max_pole_order,
        }))
    }

    fn derham(&self) -> std::result::Result<Step, Step> {
        let inv = is_involutive(self.primary())?;
        if !inv.involutive {
            let witness = inv.witness.map(|w| format!("[{}]", w.join(", "))).unwrap_or_default();
            return Err(Step::Failed(Error::NotInvolutive { witness }));
        }
        let (p, _) = skip(&self.presentation)?;
        let mu = skip(&self.density)?;
        let sc = structure_coefficients(&p.as_distribution(&self.primary().label)?)?;
        let complex = d_squared_check(p, &sc, 2, self.exec)?;
        let h0 = hodge_laplacian(0, p, &sc, mu)?;
        let agrees = match &self.laplacian {
            Ok(lap) => h0.operator[0][0].sub(&lap.operator).is_zero(),
            Err(_) => false,
        };
        let sc_residual = sc.residual(&self.chart.region, 32, self.cfg.seed)?;
        done(json!({
            "complex": complex,
            "structure_residual": sc_residual,
            "hodge0_equals_laplacian": agrees,
            "pass": complex.holds() && agrees,
        }))
    }

    fn isometry(&self) -> std::result::Result<Step, Step> {
        let tol = self.cfg.tolerance("isometry");
        let primary = self.cfg.primary().label.clone();
        let mut maps = BTreeMap::new();
        let mut pass = true;
        for m in &self.cfg.maps {
            let src = m.source.clone().unwrap_or_else(|| primary.clone());
            let dst = m.target.clone().unwrap_or_else(|| primary.clone());
            let v = self.one_map(m, &src, &dst, tol).unwrap_or_else(|e| error_value(&e));
            pass &= v.get("pass").and_then(Value::as_bool).unwrap_or(false);
            maps.insert(m.label.clone(), v);
        }
        done(json!({ "maps": maps, "pass": pass }))
    }

    fn presentation_of(&self, label: &str) -> distlap_core::Result<LocalPresentation> {
        match &self.presentation {
            Ok((p, _)) if label == self.cfg.primary().label => Ok(p.clone()),
            _ => LocalPresentation::new(self.chart.clone(), self.dists[label].generators.clone()),
        }
    }

    fn laplacian_of(&self, label: &str, p: &LocalPresentation) -> distlap_core::Result<HorizontalLaplacian> {
        match &self.laplacian {
            Ok(l) if label == self.cfg.primary().label => Ok(l.clone()),
            _ => {
                let mu = self.density.clone().map_err(|f| Error::InvalidInput(f.message))?;
                laplacian_any_form(p, &mu)
            }
        }
    }

    fn one_map(&self, m: &crate::config::MapBlock, src: &str, dst: &str, tol: f64) -> distlap_core::Result<Value> {
        let fw: Vec<&str> = m.forward.iter().map(String::as_str).collect();
        let inv: Vec<&str> = m.inverse.iter().map(String::as_str).collect();
        let f = Diffeo::parse(self.chart.clone(), self.chart.clone(), &fw, &inv)?;
        let pres = check_distribution_preserved(&f, &self.dists[src], &self.dists[dst])?;
        let (p, p2) = (self.presentation_of(src)?, self.presentation_of(dst)?);
        let iso = check_isometry(&f, &p, &p2)?;
        let comm = if iso.isometry {
            let (l, l2) = (self.laplacian_of(src, &p)?, self.laplacian_of(dst, &p2)?);
            let c = check_laplacian_commutation(&f, &l, &l2, self.exec)?;
            json!(c)
        } else {
            Value::Null
        };
        let commutes = comm.get("canonical_zero").and_then(Value::as_bool).unwrap_or(false)
            || comm.get("max_sampled_residual").and_then(Value::as_f64).is_some_and(|r| r <= tol);
        Ok(json!({
            "source": src,
            "target": dst,
            "preservation": pres,
            "isometry": iso,
            "commutation": comm,
            "pass": pres.preserved && iso.isometry && iso.max_defect <= tol && commutes,
        }))
    }

    fn random_vector(&self, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x9e37_79b9);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn discretize(&self) -> std::result::Result<Step, Step> {
        let a = skip(&self.grid_op)?;
        let sym = weighted_symmetry_check(a);
        let id = discrete_dirichlet_identity(a, &self.random_vector(a.len()));
        let pass = sym <= self.cfg.tolerance("grid_symmetry") && id.relative_error <= self.cfg.tolerance("grid_dirichlet");
        let v = json!({
            "grid": { "n": a.grid.n, "boundary": self.cfg.options.boundary, "unknowns": a.len() },
            "nnz": a.nnz(),
            "weighted_symmetry": sym,
            "dirichlet_identity": id,
            "pass": pass,
        });
        Ok(Step::Done(v, vec![Artifact { name: format!("{}.triplets.txt", self.cfg.label), contents: a.triplets() }]))
    }

    fn spectrum(&self) -> std::result::Result<Step, Step> {
        let a = skip(&self.grid_op)?;
        let s = low_spectrum(a, self.cfg.options.spectrum_count)?;
        let tol = self.cfg.tolerance("spectrum_residual");
        let pass = s.residuals.iter().all(|r| *r <= tol) && s.values.first().is_none_or(|l| *l >= -tol);
        let mut csv = String::from("index,value,residual\n");
        for (i, (l, r)) in s.values.iter().zip(&s.residuals).enumerate() {
            csv.push_str(&format!("{i},{l:e},{r:e}\n"));
        }
        let v = json!({ "spectrum": s, "pass": pass });
        Ok(Step::Done(v, vec![Artifact { name: format!("{}.spectrum.csv", self.cfg.label), contents: csv }]))
    }

    fn probe(&self) -> std::result::Result<Step, Step> {
        let a = skip(&self.grid_op)?;
        let point = self.cfg.options.probe_point.clone().unwrap_or_else(|| self.bounds.iter().map(|(l, h)| 0.5 * (l + h)).collect());
        let u0 = delta_at(a, &point);
        let r = smoothing_probe(a, &u0, &self.cfg.options.probe_times)?;
        let mut csv = String::from("time,total_energy,tail_energy\n");
        for i in 0..r.times.len() {
            csv.push_str(&format!("{:e},{:e},{:e}\n", r.times[i], r.total_energy[i], r.tail_energy[i]));
        }
        let v = json!({ "point": point, "probe": r });
        Ok(Step::Done(v, vec![Artifact { name: format!("{}.probe.csv", self.cfg.label), contents: csv }]))
    }
}

/// Runs every analysis listed in the config. Analysis failures become error objects in the
/// report; only configuration problems are returned as `Err`.
pub fn run(cfg: &JobConfig, exec: Exec) -> Result<Outcome> {
    cfg.validate()?;
    let job = Job::build(cfg, exec)?;
    let names = cfg.analysis_list();
    let values = exec.map(&names, |n| job.run(n));
    let mut analyses = BTreeMap::new();
    let mut artifacts = vec![];
    for (n, mut v) in names.iter().zip(values) {
        if let Some(Value::Object(arts)) = v.get_mut("artifacts").map(Value::take) {
            for (name, c) in arts {
                artifacts.push(Artifact { name, contents: c.as_str().unwrap_or_default().to_string() });
            }
            v = v["result"].take();
        }
        analyses.insert(n.to_string(), v);
    }
    Ok(Outcome { report: Report::new(cfg, analyses), artifacts })
}
