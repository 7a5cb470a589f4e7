//! Experiment orchestration behind each subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::{Backend, ExperimentConfig, ModelBlock, Route, ScheduleBlock, SweepParam, Variant};
use super::report::ResultRow;
use crate::error::{Error, Result};
use crate::estimate::{estimate_alpha_hill, project_and_estimate, Directions};
use crate::kernel::GaussianDataModel;
use crate::schedule::{Schedule, ScheduleKind, StepsizeGrid};
use crate::sgdsim::{io, run_ensemble, EnsembleMatrix, RegressionProblem, SGDRunConfig};
use crate::stats::variance;
use crate::tailindex::{find_tail_index, threshold_report, KernelContext, ScheduleKernel, DEFAULT_S_MAX};

/// Rows plus the human-readable notes gathered on the way.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub rows: Vec<ResultRow>,
    pub warnings: Vec<String>,
    /// set when a simulated ensemble crossed the censoring threshold
    pub regime_warning: bool,
}

impl Report {
    pub fn refusals(&self) -> usize {
        self.rows.iter().filter(|r| r.is_refused()).count()
    }
}

/// Reason code written in place of α.
pub fn refusal_code(e: &Error) -> Option<&'static str> {
    match e {
        Error::NonNegativeRho { .. } => Some("rho_nonnegative"),
        Error::RootAboveCap { .. } => Some("root_above_cap"),
        Error::Divergence { .. } => Some("divergence"),
        Error::OutOfDomain { .. } => Some("out_of_domain"),
        Error::Degenerate(_) => Some("degenerate"),
        _ => None,
    }
}

pub fn build_schedule(variant: Variant, s: &ScheduleBlock) -> Result<Schedule> {
    let grid = || StepsizeGrid::new(s.eta_hat, s.range, s.k);
    match variant {
        Variant::Constant => Schedule::constant(s.eta_hat),
        Variant::IidGrid => Schedule::iid_grid(grid()?),
        Variant::Uniform => Schedule::iid_uniform(s.eta_hat, s.range),
        Variant::Cyclic => Schedule::cyclic(grid()?),
        Variant::Markov => Schedule::markov_folded(grid()?, s.p),
        Variant::MarkovTwoState => Schedule::markov_two_state(s.eta_hat - s.range, s.eta_hat + s.range, s.p),
    }
}

fn kernel_model(m: &ModelBlock) -> Result<GaussianDataModel> {
    GaussianDataModel::new(m.sigma_x, m.batch, m.dim)
}

pub fn kernel_context(cfg: &ExperimentConfig) -> Result<KernelContext> {
    let model = kernel_model(&cfg.model)?;
    match cfg.compute.backend {
        Backend::Quadrature => KernelContext::quadrature(model, cfg.compute.n_samples, cfg.compute.seed),
        Backend::MonteCarlo => KernelContext::monte_carlo(model, cfg.compute.n_samples, cfg.compute.seed),
    }
}

fn is_markov(s: &Schedule) -> bool {
    matches!(s.kind(), ScheduleKind::MarkovFolded { .. } | ScheduleKind::MarkovTwoState { .. })
}

fn elapsed(cfg: &ExperimentConfig, t: Instant) -> Option<u128> {
    cfg.compute.timing.then(|| t.elapsed().as_millis())
}

fn kernel_row(
    cfg: &ExperimentConfig,
    variant: Variant,
    route: Route,
    value: f64,
    schedule: &Schedule,
    ctx: &KernelContext,
) -> Result<ResultRow> {
    let t = Instant::now();
    let mut row = ResultRow::new(variant.tag(), value, route.tag());
    row.c_value = threshold_report(schedule, ctx.model(), cfg.compute.tol).ok().map(|r| r.c_value);
    let kernel = match route {
        Route::Kernel => ScheduleKernel::for_schedule(schedule, ctx),
        Route::LinearSystem => ScheduleKernel::markov_linear_system(schedule, ctx),
        Route::RegenMc => ScheduleKernel::markov_regen_mc(schedule, cfg.compute.n_paths, cfg.compute.seed, ctx),
        Route::Simulation => unreachable!("simulation rows are built separately"),
    }?;
    row.rho = Some(kernel.rho().value);
    match find_tail_index(&kernel, DEFAULT_S_MAX, cfg.compute.tol) {
        Ok(r) => {
            row.alpha = Some(r.alpha);
            row.stderr = Some(r.alpha_stderr);
        }
        Err(e) => match refusal_code(&e) {
            Some(code) => row.refusal = Some(code.to_string()),
            None => return Err(e),
        },
    }
    row.runtime_ms = elapsed(cfg, t);
    Ok(row)
}

/// Pooled projection estimate; the stderr column holds the spread of the
/// per-direction estimates over √(directions).
fn estimate_row(row: &mut ResultRow, ens: &EnsembleMatrix) -> Result<()> {
    match project_and_estimate(ens, &Directions::Coordinates, None) {
        Ok(rep) => {
            let a: Vec<f64> = rep.per_direction.iter().map(|e| e.alpha).collect();
            row.alpha = Some(rep.pooled);
            row.stderr = Some(if a.len() > 1 { (variance(&a) / a.len() as f64).sqrt() } else { 0.0 });
            Ok(())
        }
        Err(e) => match refusal_code(&e) {
            Some(code) => {
                row.refusal = Some(code.to_string());
                Ok(())
            }
            None => Err(e),
        },
    }
}

fn simulation_row(
    cfg: &ExperimentConfig,
    variant: Variant,
    value: f64,
    schedule: &Schedule,
) -> Result<(ResultRow, EnsembleMatrix)> {
    let t = Instant::now();
    let m = &cfg.model;
    let c = &cfg.compute;
    let problem = RegressionProblem::new(m.dim, m.sigma, m.sigma_x, m.sigma_y, c.seed)?;
    let run_cfg = SGDRunConfig::new(m.batch, schedule.clone(), c.n_iters, c.tail_window, c.seed)?;
    let ens = run_ensemble(&problem, &run_cfg, c.n_runs)?;
    let mut row = ResultRow::new(variant.tag(), value, Route::Simulation.tag());
    row.censored = Some(ens.censored());
    row.c_value = threshold_report(schedule, &kernel_model(m)?, c.tol).ok().map(|r| r.c_value);
    estimate_row(&mut row, &ens)?;
    row.runtime_ms = elapsed(cfg, t);
    Ok((row, ens))
}

/// Every applicable `(variant, route)` pair at one parameter point.
/// Markov-only routes are skipped for other variants.
fn rows_at(
    cfg: &ExperimentConfig,
    value: f64,
    ctx: &mut Option<KernelContext>,
    report: &mut Report,
    ensembles: &mut Vec<(Variant, EnsembleMatrix)>,
) -> Result<()> {
    for &variant in &cfg.schedule.variants {
        let schedule = build_schedule(variant, &cfg.schedule)?;
        for &route in &cfg.compute.routes {
            match route {
                Route::Simulation => {
                    let (row, ens) = simulation_row(cfg, variant, value, &schedule)?;
                    if ens.regime_warning() {
                        report.regime_warning = true;
                        report.warnings.push(format!(
                            "{} at {value}: {:.1}% of runs censored",
                            variant.tag(),
                            100.0 * ens.censored_fraction()
                        ));
                    }
                    report.rows.push(row);
                    ensembles.push((variant, ens));
                }
                Route::LinearSystem | Route::RegenMc if !is_markov(&schedule) => {}
                _ => {
                    if ctx.is_none() {
                        *ctx = Some(kernel_context(cfg)?);
                    }
                    let c = ctx.as_ref().expect("context just built");
                    report.rows.push(kernel_row(cfg, variant, route, value, &schedule, c)?);
                }
            }
        }
    }
    Ok(())
}

pub fn tail_index(cfg: &ExperimentConfig) -> Result<Report> {
    let mut report = Report::default();
    let mut ensembles = Vec::new();
    rows_at(cfg, cfg.schedule.eta_hat, &mut None, &mut report, &mut ensembles)?;
    Ok(report)
}

fn integral(v: f64, name: &str) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::Config(format!("sweep value {v} for {name} must be a positive integer")))
    }
}

/// Copy of `cfg` with the swept parameter set to `v`.
pub fn with_param(cfg: &ExperimentConfig, param: SweepParam, v: f64) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    match param {
        SweepParam::EtaHat => c.schedule.eta_hat = v,
        SweepParam::Range => c.schedule.range = v,
        SweepParam::K => c.schedule.k = integral(v, "K")?,
        SweepParam::P => c.schedule.p = v,
        SweepParam::Batch => c.model.batch = integral(v, "b")?,
        SweepParam::Dim => c.model.dim = integral(v, "d")?,
    }
    Ok(c)
}

/// One row per `(schedule, value, route)`. Kernel contexts are shared
/// across values with the same `(b, d)`, so panels are common random numbers.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Report> {
    let (param, values) = cfg
        .sweep
        .clone()
        .ok_or_else(|| Error::Config("sweep needs a [sweep] block".into()))?;
    let mut report = Report::default();
    let mut contexts: BTreeMap<(usize, usize), Option<KernelContext>> = BTreeMap::new();
    let mut ensembles = Vec::new();
    for v in values {
        let c = with_param(cfg, param, v)?;
        let ctx = contexts.entry((c.model.batch, c.model.dim)).or_default();
        rows_at(&c, v, ctx, &mut report, &mut ensembles)?;
    }
    Ok(report)
}

/// Path for one variant's ensemble; the tag is inserted before the
/// extension when several variants share an output path.
pub fn variant_path(path: &Path, variant: Variant, many: bool) -> PathBuf {
    if !many {
        return path.to_path_buf();
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("ensemble");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}.{}.{ext}", variant.tag()),
        None => format!("{stem}.{}", variant.tag()),
    };
    path.with_file_name(name)
}

/// Runs the simulation route for every variant and writes the ensembles.
pub fn simulate(cfg: &ExperimentConfig) -> Result<Report> {
    let mut sim = cfg.clone();
    sim.compute.routes = vec![Route::Simulation];
    let mut report = Report::default();
    let mut ensembles = Vec::new();
    rows_at(&sim, cfg.schedule.eta_hat, &mut None, &mut report, &mut ensembles)?;
    let many = ensembles.len() > 1;
    for (variant, ens) in &ensembles {
        if let Some(p) = &cfg.output.binary {
            io::write_binary(ens, &variant_path(p, *variant, many))?;
        }
        if let Some(p) = &cfg.output.ensemble_csv {
            io::write_csv(ens, &variant_path(p, *variant, many))?;
        }
    }
    Ok(report)
}

pub fn load_ensemble(path: &Path) -> Result<EnsembleMatrix> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => io::read_csv(path),
        _ => io::read_binary(path),
    }
}

/// Estimator row for a stored ensemble, with the Hill cross-check as a note.
pub fn estimate(cfg: &ExperimentConfig) -> Result<Report> {
    let path = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("estimate needs [input] ensemble = FILE".into()))?;
    let t = Instant::now();
    let ens = load_ensemble(path)?;
    let tag = path.file_stem().and_then(|s| s.to_str()).unwrap_or("ensemble");
    let mut row = ResultRow::new(tag, cfg.schedule.eta_hat, Route::Simulation.tag());
    row.censored = Some(ens.censored());
    estimate_row(&mut row, &ens)?;
    row.runtime_ms = elapsed(cfg, t);
    let mut report = Report::default();
    let k = (ens.rows() / 20).max(1);
    let hill: Vec<String> = (0..ens.cols())
        .filter_map(|j| {
            let col: Vec<f64> = ens.iter_rows().map(|r| r[j]).collect();
            let med = crate::stats::median(&col);
            let centred: Vec<f64> = col.iter().map(|x| x - med).collect();
            estimate_alpha_hill(&centred, k).ok().map(|a| format!("{a:.3}"))
        })
        .collect();
    report.warnings.push(format!("hill cross-check (k = {k}): {}", hill.join(" ")));
    if ens.regime_warning() {
        report.regime_warning = true;
        report.warnings.push(format!("{:.1}% of runs censored", 100.0 * ens.censored_fraction()));
    }
    report.rows.push(row);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::parse(text, Some(5)).unwrap()
    }

    #[test]
    fn boundary_config_gives_two() {
        let c = cfg("[model]\nsigma_x = 1\nbatch = 1\ndim = 1\n[schedule]\neta_hat = 0.6666666666666666\n\
                     [compute]\nn_samples = 20000\n");
        let rep = tail_index(&c).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert!((rep.rows[0].alpha.unwrap() - 2.0).abs() < 1e-3);
        assert!((rep.rows[0].c_value.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn markov_p1_matches_cyclic() {
        let c = cfg("[schedule]\nvariant = cyclic, markov\neta_hat = 0.8\nrange = 0.05\nk = 4\np = 1\n\
                     [compute]\nn_samples = 20000\n");
        let rep = tail_index(&c).unwrap();
        assert_eq!(rep.rows.len(), 2);
        let (a, b) = (rep.rows[0].alpha.unwrap(), rep.rows[1].alpha.unwrap());
        assert!((a - b).abs() < 1e-3, "{a} {b}");
    }

    #[test]
    fn refusal_fills_reason_code() {
        let c = cfg("[schedule]\neta_hat = 0\n[compute]\nn_samples = 20000\n");
        let rep = tail_index(&c).unwrap();
        assert_eq!(rep.refusals(), 1);
        assert_eq!(rep.rows[0].refusal.as_deref(), Some("rho_nonnegative"));
    }

    #[test]
    fn markov_routes_skip_other_variants() {
        let c = cfg("[schedule]\nvariant = constant, markov_two_state\neta_hat = 0.15\nrange = 0.05\np = 0.7\n\
                     [model]\nbatch = 1\n[compute]\nn_samples = 20000\nn_paths = 2000\nroutes = kernel, regen_mc\n");
        let rep = tail_index(&c).unwrap();
        let routes: Vec<(&str, &str)> = rep.rows.iter().map(|r| (r.schedule.as_str(), r.route.as_str())).collect();
        assert_eq!(
            routes,
            vec![("constant", "kernel"), ("markov_two_state", "kernel"), ("markov_two_state", "regen_mc")]
        );
    }

    #[test]
    fn sweep_rejects_fractional_batch() {
        let c = cfg("[sweep]\nparameter = b\nvalues = 2.5\n");
        assert!(matches!(sweep(&c), Err(Error::Config(_))));
    }

    #[test]
    fn variant_paths() {
        let p = Path::new("/tmp/run.tsem");
        assert_eq!(variant_path(p, Variant::Cyclic, false), p);
        assert_eq!(variant_path(p, Variant::Cyclic, true), Path::new("/tmp/run.cyclic.tsem"));
    }
}
