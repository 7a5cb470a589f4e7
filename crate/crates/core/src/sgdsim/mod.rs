//! Streaming linear-regression SGD ensembles.
//!
//! Each run draws fresh data for every step (one pass, no reuse), applies
//! `x ← x − (η/b) Σ a_i (a_iᵀx − y_i)` and averages the last `W` iterates.
//! Runs use their own data and schedule substreams keyed by run index, so an
//! ensemble is bit-identical for a given seed regardless of thread count, and
//! two ensembles with the same seed but different schedules see the same data.

pub mod io;

pub use io::{read_binary, read_csv, write_binary, write_csv, BINARY_MAGIC, BINARY_VERSION};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::GaussianDataModel;
use crate::rng::{domain, Stream, Streams};
use crate::schedule::{Schedule, ScheduleKind, StartState};
use crate::stats::{mean, BatchMeans, DEFAULT_BATCHES};
use crate::tailindex::{KernelContext, ScheduleKernel};

/// Fraction of censored runs above which an ensemble is flagged.
pub const CENSOR_WARNING_FRACTION: f64 = 0.1;

/// Linear model `y = aᵀw + σ_y ε` with `a ~ N(0, σ_x² I_d)` and `w ~ N(0, σ_w² I_d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionProblem {
    dim: usize,
    sigma_w: f64,
    sigma_x: f64,
    sigma_y: f64,
    truth: Vec<f64>,
}

impl RegressionProblem {
    /// Draws the true weights from the `TRUTH` stream of `seed`.
    pub fn new(dim: usize, sigma_w: f64, sigma_x: f64, sigma_y: f64, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dim must be >= 1".into()));
        }
        if !(sigma_w >= 0.0 && sigma_x > 0.0 && sigma_y >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need sigma_w >= 0, sigma_x > 0, sigma_y >= 0 (got {sigma_w}, {sigma_x}, {sigma_y})"
            )));
        }
        let mut rng = Streams::new(seed).stream(domain::TRUTH, 0);
        let truth = (0..dim).map(|_| sigma_w * rng.sample::<f64, _>(StandardNormal)).collect();
        Ok(Self {
            dim,
            sigma_w,
            sigma_x,
            sigma_y,
            truth,
        })
    }

    /// Problem with explicit true weights.
    pub fn with_truth(truth: Vec<f64>, sigma_x: f64, sigma_y: f64) -> Result<Self> {
        let mut p = Self::new(truth.len().max(1), 0.0, sigma_x, sigma_y, 0)?;
        p.truth = truth;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma_w(&self) -> f64 {
        self.sigma_w
    }

    pub fn sigma_x(&self) -> f64 {
        self.sigma_x
    }

    pub fn sigma_y(&self) -> f64 {
        self.sigma_y
    }

    pub fn truth(&self) -> &[f64] {
        &self.truth
    }

    /// Data model seen by the moment kernels (`σ ← σ_x`).
    pub fn kernel_model(&self, batch: usize) -> Result<GaussianDataModel> {
        GaussianDataModel::new(self.sigma_x, batch, self.dim)
    }
}

/// One mini-batch, `a` stored row-major (`b × d`).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub a: Vec<f64>,
    pub y: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Fresh-sample data source for one run. The cursor counts samples drawn.
#[derive(Debug, Clone)]
pub struct DataStream<'a> {
    problem: &'a RegressionProblem,
    rng: Stream,
    cursor: u64,
}

impl<'a> DataStream<'a> {
    pub fn new(problem: &'a RegressionProblem, rng: Stream) -> Self {
        Self {
            problem,
            rng,
            cursor: 0,
        }
    }

    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    /// Fill `batch` with `b` new samples.
    pub fn fill(&mut self, batch: &mut Batch, b: usize) {
        let d = self.problem.dim;
        batch.a.resize(b * d, 0.0);
        batch.y.resize(b, 0.0);
        for i in 0..b {
            let row = &mut batch.a[i * d..(i + 1) * d];
            let mut dot = 0.0;
            for (v, w) in row.iter_mut().zip(&self.problem.truth) {
                *v = self.problem.sigma_x * self.rng.sample::<f64, _>(StandardNormal);
                dot += *v * w;
            }
            let eps: f64 = self.rng.sample(StandardNormal);
            batch.y[i] = dot + self.problem.sigma_y * eps;
        }
        self.cursor += b as u64;
    }

    pub fn next_batch(&mut self, b: usize) -> Batch {
        let mut batch = Batch { a: Vec::new(), y: Vec::new() };
        self.fill(&mut batch, b);
        batch
    }
}

/// In-place step; returns `false` if any component became non-finite.
fn step_in_place(x: &mut [f64], batch: &Batch, eta: f64, grad: &mut [f64]) -> bool {
    let d = x.len();
    let b = batch.len();
    grad.fill(0.0);
    for i in 0..b {
        let row = &batch.a[i * d..(i + 1) * d];
        let r: f64 = row.iter().zip(x.iter()).map(|(a, x)| a * x).sum::<f64>() - batch.y[i];
        for (g, a) in grad.iter_mut().zip(row) {
            *g += a * r;
        }
    }
    let scale = eta / b as f64;
    let mut finite = true;
    for (xi, g) in x.iter_mut().zip(grad.iter()) {
        *xi -= scale * g;
        finite &= xi.is_finite();
    }
    finite
}

/// One SGD step on `batch`; `None` on overflow.
pub fn sgd_step(x: &[f64], batch: &Batch, eta: f64) -> Option<Vec<f64>> {
    let mut out = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    step_in_place(&mut out, batch, eta, &mut grad).then_some(out)
}

/// Per-run settings shared by every run of an ensemble.
#[derive(Debug, Clone)]
pub struct SGDRunConfig {
    pub batch: usize,
    pub schedule: Schedule,
    pub n_iters: usize,
    pub tail_window: usize,
    pub seed: u64,
    /// starting iterate; zero when `None`
    pub x0: Option<Vec<f64>>,
    pub start: StartState,
}

impl SGDRunConfig {
    pub fn new(batch: usize, schedule: Schedule, n_iters: usize, tail_window: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            batch,
            schedule,
            n_iters,
            tail_window,
            seed,
            x0: None,
            start: StartState::Stationary,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidParameter("batch must be >= 1".into()));
        }
        if self.tail_window == 0 || self.tail_window > self.n_iters {
            return Err(Error::InvalidParameter(format!(
                "tail window {} must be in 1..={}",
                self.tail_window, self.n_iters
            )));
        }
        Ok(())
    }

    fn initial(&self, d: usize) -> Result<Vec<f64>> {
        match &self.x0 {
            None => Ok(vec![0.0; d]),
            Some(v) if v.len() == d => Ok(v.clone()),
            Some(v) => Err(Error::InvalidParameter(format!("x0 has length {}, expected {d}", v.len()))),
        }
    }
}

/// Averaged iterates of the uncensored runs, one row per run.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMatrix {
    data: Vec<f64>,
    cols: usize,
    censored: usize,
}

impl EnsembleMatrix {
    pub fn new(data: Vec<f64>, cols: usize, censored: usize) -> Result<Self> {
        if cols == 0 || !data.len().is_multiple_of(cols) {
            return Err(Error::Format(format!("{} values do not fill rows of {cols}", data.len())));
        }
        Ok(Self { data, cols, censored })
    }

    pub fn from_rows(rows: &[Vec<f64>], censored: usize) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Format("ragged ensemble rows".into()));
        }
        Self::new(rows.concat(), cols, censored)
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn censored(&self) -> usize {
        self.censored
    }

    /// Runs attempted, censored included.
    pub fn n_runs(&self) -> usize {
        self.rows() + self.censored
    }

    pub fn censored_fraction(&self) -> f64 {
        if self.n_runs() == 0 {
            0.0
        } else {
            self.censored as f64 / self.n_runs() as f64
        }
    }

    /// More than [`CENSOR_WARNING_FRACTION`] of runs overflowed.
    pub fn regime_warning(&self) -> bool {
        self.censored_fraction() > CENSOR_WARNING_FRACTION
    }
}

fn run_streams(cfg: &SGDRunConfig, run: u64) -> (Stream, Stream) {
    let s = Streams::new(cfg.seed);
    (s.stream(domain::RUN_DATA, run), s.stream(domain::RUN_SCHEDULE, run))
}

/// Runs `f` on the `n_iters` iterates of one run; `None` if the run overflowed.
fn simulate_run(
    problem: &RegressionProblem,
    cfg: &SGDRunConfig,
    run: u64,
    mut f: impl FnMut(usize, &[f64]),
) -> Result<Option<()>> {
    let (data_rng, mut sched_rng) = run_streams(cfg, run);
    let mut data = DataStream::new(problem, data_rng);
    let mut schedule = cfg.schedule.clone();
    schedule.start(cfg.start, &mut sched_rng)?;
    let mut x = cfg.initial(problem.dim)?;
    let mut grad = vec![0.0; problem.dim];
    let mut batch = Batch { a: Vec::new(), y: Vec::new() };
    for k in 1..=cfg.n_iters {
        let eta = schedule.next_step(&mut sched_rng);
        data.fill(&mut batch, cfg.batch);
        if !step_in_place(&mut x, &batch, eta, &mut grad) {
            return Ok(None);
        }
        f(k, &x);
    }
    Ok(Some(()))
}

/// Tail-window average of one run, `None` if censored.
pub fn run_single(problem: &RegressionProblem, cfg: &SGDRunConfig, run: u64) -> Result<Option<Vec<f64>>> {
    let burn = cfg.n_iters - cfg.tail_window;
    let mut acc = vec![0.0; problem.dim];
    let done = simulate_run(problem, cfg, run, |k, x| {
        if k > burn {
            for (a, v) in acc.iter_mut().zip(x) {
                *a += v;
            }
        }
    })?;
    let w = cfg.tail_window as f64;
    Ok(done
        .map(|_| acc.into_iter().map(|a| a / w).collect::<Vec<f64>>())
        .filter(|v| v.iter().all(|x| x.is_finite())))
}

/// `n_runs` independent runs; overflowed runs are dropped and counted.
pub fn run_ensemble(problem: &RegressionProblem, cfg: &SGDRunConfig, n_runs: usize) -> Result<EnsembleMatrix> {
    cfg.validate()?;
    let rows: Vec<Option<Vec<f64>>> = (0..n_runs as u64)
        .into_par_iter()
        .map(|r| run_single(problem, cfg, r))
        .collect::<Result<_>>()?;
    let censored = rows.iter().filter(|r| r.is_none()).count();
    let data: Vec<f64> = rows.into_iter().flatten().flatten().collect();
    Ok(EnsembleMatrix {
        data,
        cols: problem.dim,
        censored,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn probe_kernel(cfg: &SGDRunConfig, ctx: &KernelContext, p: f64) -> Result<f64> {
    match cfg.schedule.kind() {
        ScheduleKind::Constant(_) | ScheduleKind::IidGrid(_) | ScheduleKind::IidUniformContinuous { .. } => {}
        _ => {
            return Err(Error::InvalidParameter(format!(
                "contraction probes need a constant or i.i.d. schedule, got {}",
                cfg.schedule.tag()
            )))
        }
    }
    let h = ScheduleKernel::for_schedule(&cfg.schedule, ctx)?.evaluate(p)?;
    if !(h.value + 3.0 * h.stderr < 1.0) {
        return Err(Error::Degenerate(format!("h({p}) = {} is not below 1", h.value)));
    }
    Ok(h.value)
}

/// Empirical value of a moment at step `k` against its bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbePoint {
    pub k: usize,
    pub empirical: f64,
    pub stderr: f64,
    pub bound: f64,
    pub bound_stderr: f64,
}

impl ProbePoint {
    /// `empirical ≤ bound` within 3 combined stderr.
    pub fn holds(&self) -> bool {
        self.empirical <= self.bound + 3.0 * self.stderr.hypot(self.bound_stderr)
    }
}

/// Synchronous coupling from `x0` and `x0_tilde`: both chains share every
/// batch and stepsize. Compares `E‖x_k − x̃_k‖^p` with `h(p)^k ‖x_0 − x̃_0‖^p`.
pub fn coupled_contraction_probe(
    problem: &RegressionProblem,
    cfg: &SGDRunConfig,
    ctx: &KernelContext,
    p: f64,
    k_max: usize,
    n_pairs: usize,
    x0: &[f64],
    x0_tilde: &[f64],
) -> Result<Vec<ProbePoint>> {
    let h = probe_kernel(cfg, ctx, p)?;
    let d = problem.dim;
    if x0.len() != d || x0_tilde.len() != d {
        return Err(Error::InvalidParameter("coupling starts must have length d".into()));
    }
    let diff0 = norm(&x0.iter().zip(x0_tilde).map(|(a, b)| a - b).collect::<Vec<_>>()).powf(p);
    let mut run_cfg = cfg.clone();
    run_cfg.n_iters = k_max;
    run_cfg.tail_window = k_max.max(1);
    let mut a_cfg = run_cfg.clone();
    a_cfg.x0 = Some(x0.to_vec());
    let mut b_cfg = run_cfg;
    b_cfg.x0 = Some(x0_tilde.to_vec());
    let per_run: Vec<Vec<f64>> = (0..n_pairs as u64)
        .into_par_iter()
        .map(|r| {
            let mut xs = Vec::with_capacity(k_max);
            let mut ys = Vec::with_capacity(k_max);
            simulate_run(problem, &a_cfg, r, |_, x| xs.push(x.to_vec()))?;
            simulate_run(problem, &b_cfg, r, |_, x| ys.push(x.to_vec()))?;
            let mut out = vec![f64::INFINITY; k_max];
            for (k, (x, y)) in xs.iter().zip(&ys).enumerate() {
                let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
                out[k] = norm(&diff).powf(p);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok((1..=k_max)
        .map(|k| {
            let vals: Vec<f64> = per_run.iter().map(|r| r[k - 1]).collect();
            let bm = BatchMeans::from_values(&vals, DEFAULT_BATCHES);
            ProbePoint {
                k,
                empirical: bm.mean,
                stderr: bm.stderr(),
                bound: h.powi(k as i32) * diff0,
                bound_stderr: 0.0,
            }
        })
        .collect())
}

/// Compares `E‖x_k‖^p` with `h^k E‖x_0‖^p + (1 − h^k)/(1 − h) E‖q_1‖^p`
/// for `p ≤ 1`, where `q_1 = (η/b) Σ a_i y_i` is estimated from the runs' first batches.
pub fn moment_bound_probe(
    problem: &RegressionProblem,
    cfg: &SGDRunConfig,
    ctx: &KernelContext,
    p: f64,
    k_max: usize,
    n_runs: usize,
) -> Result<Vec<ProbePoint>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!("moment bound needs 0 < p <= 1, got {p}")));
    }
    let h = probe_kernel(cfg, ctx, p)?;
    let d = problem.dim;
    let x0 = cfg.initial(d)?;
    let x0_norm = norm(&x0).powf(p);
    let mut run_cfg = cfg.clone();
    run_cfg.n_iters = k_max;
    run_cfg.tail_window = k_max.max(1);
    let per_run: Vec<(f64, Vec<f64>)> = (0..n_runs as u64)
        .into_par_iter()
        .map(|r| {
            // q_1 from an independent copy of the first batch and stepsize
            let s = Streams::new(cfg.seed);
            let mut data = DataStream::new(problem, s.stream(domain::COUPLING, r));
            let mut sched_rng = s.stream(domain::GENERIC, r);
            let mut schedule = cfg.schedule.clone();
            schedule.start(cfg.start, &mut sched_rng)?;
            let eta = schedule.next_step(&mut sched_rng);
            let batch = data.next_batch(cfg.batch);
            let mut q = vec![0.0; d];
            for i in 0..cfg.batch {
                for (qj, a) in q.iter_mut().zip(&batch.a[i * d..(i + 1) * d]) {
                    *qj += a * batch.y[i];
                }
            }
            let q_norm = (eta / cfg.batch as f64 * norm(&q)).powf(p);
            let mut out = vec![f64::INFINITY; k_max];
            simulate_run(problem, &run_cfg, r, |k, x| out[k - 1] = norm(x).powf(p))?;
            Ok((q_norm, out))
        })
        .collect::<Result<_>>()?;
    let qs: Vec<f64> = per_run.iter().map(|r| r.0).collect();
    let q_bm = BatchMeans::from_values(&qs, DEFAULT_BATCHES);
    let (q_mean, q_se) = (q_bm.mean, q_bm.stderr());
    Ok((1..=k_max)
        .map(|k| {
            let vals: Vec<f64> = per_run.iter().map(|r| r.1[k - 1]).collect();
            let bm = BatchMeans::from_values(&vals, DEFAULT_BATCHES);
            let hk = h.powi(k as i32);
            let geo = (1.0 - hk) / (1.0 - h);
            ProbePoint {
                k,
                empirical: bm.mean,
                stderr: bm.stderr(),
                bound: hk * x0_norm + geo * q_mean,
                bound_stderr: geo * q_se,
            }
        })
        .collect())
}

/// Column means of an ensemble.
pub fn column_means(ens: &EnsembleMatrix) -> Vec<f64> {
    (0..ens.cols())
        .map(|j| mean(&ens.iter_rows().map(|r| r[j]).collect::<Vec<_>>()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(d: usize, sigma_y: f64) -> RegressionProblem {
        RegressionProblem::new(d, 1.0, 1.0, sigma_y, 1).unwrap()
    }

    #[test]
    fn scalar_step() {
        let batch = Batch { a: vec![1.0], y: vec![0.0] };
        assert_eq!(sgd_step(&[1.0], &batch, 0.5), Some(vec![0.5]));
        assert_eq!(sgd_step(&[1.0], &batch, 0.0), Some(vec![1.0]));
        let huge = Batch { a: vec![1e200], y: vec![0.0] };
        assert_eq!(sgd_step(&[1e200], &huge, 1.0), None);
    }

    #[test]
    fn zero_step_keeps_zero() {
        let p = problem(3, 1.0);
        let cfg = SGDRunConfig::new(2, Schedule::constant(0.0).unwrap(), 50, 10, 4).unwrap();
        let ens = run_ensemble(&p, &cfg, 20).unwrap();
        assert_eq!(ens.rows(), 20);
        assert!(ens.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cursor_advances_by_batch() {
        let p = problem(2, 1.0);
        let mut s = DataStream::new(&p, Streams::new(0).stream(domain::RUN_DATA, 0));
        let a = s.next_batch(3);
        assert_eq!(s.cursor(), 3);
        let b = s.next_batch(3);
        assert_eq!(s.cursor(), 6);
        assert_ne!(a, b);
    }

    #[test]
    fn noise_free_runs_converge() {
        let p = problem(5, 0.0);
        let cfg = SGDRunConfig::new(5, Schedule::constant(0.3).unwrap(), 400, 1, 2).unwrap();
        let x = run_single(&p, &cfg, 0).unwrap().unwrap();
        let err: f64 = x.iter().zip(p.truth()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn scale_equivariance_in_noise() {
        let base = RegressionProblem::new(3, 0.0, 1.0, 1.0, 5).unwrap();
        let scaled = RegressionProblem::new(3, 0.0, 1.0, 4.0, 5).unwrap();
        let cfg = SGDRunConfig::new(2, Schedule::iid_uniform(0.2, 0.05).unwrap(), 60, 20, 8).unwrap();
        let a = run_single(&base, &cfg, 3).unwrap().unwrap();
        let b = run_single(&scaled, &cfg, 3).unwrap().unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((4.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn overflow_is_censored() {
        let p = problem(2, 1.0);
        let cfg = SGDRunConfig::new(1, Schedule::constant(50.0).unwrap(), 2000, 10, 1).unwrap();
        let ens = run_ensemble(&p, &cfg, 10).unwrap();
        assert_eq!(ens.censored(), 10);
        assert_eq!(ens.rows(), 0);
        assert!(ens.regime_warning());
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let p = problem(4, 1.0);
        let g = crate::schedule::StepsizeGrid::new(0.2, 0.05, 4).unwrap();
        let cfg = SGDRunConfig::new(3, Schedule::markov_folded(g, 0.7).unwrap(), 100, 50, 9).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| run_ensemble(&p, &cfg, 37)).unwrap();
        let b = four.install(|| run_ensemble(&p, &cfg, 37)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_starts_couple_exactly() {
        let p = problem(3, 1.0);
        let cfg = SGDRunConfig::new(3, Schedule::constant(0.1).unwrap(), 10, 1, 3).unwrap();
        let ctx = KernelContext::quadrature(p.kernel_model(3).unwrap(), 10_000, 1).unwrap();
        let x0 = vec![1.0, -1.0, 0.5];
        let pts = coupled_contraction_probe(&p, &cfg, &ctx, 1.0, 10, 50, &x0, &x0).unwrap();
        assert!(pts.iter().all(|q| q.empirical == 0.0));
    }

    #[test]
    fn probes_reject_markov_schedules() {
        let p = problem(3, 1.0);
        let g = crate::schedule::StepsizeGrid::new(0.1, 0.05, 3).unwrap();
        let cfg = SGDRunConfig::new(3, Schedule::cyclic(g).unwrap(), 10, 1, 3).unwrap();
        let ctx = KernelContext::quadrature(p.kernel_model(3).unwrap(), 10_000, 1).unwrap();
        assert!(moment_bound_probe(&p, &cfg, &ctx, 1.0, 5, 10).is_err());
    }
}
