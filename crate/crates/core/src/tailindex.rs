//! Schedule-level moment kernels and the tail-index root `h(α) = 1`.
//!
//! Every schedule kernel is a deterministic function of the per-step moments
//! `h(s; η_l)` over a finite list of stepsizes. Monte Carlo noise therefore
//! enters only through those per-step values, and standard errors come from
//! a batch jackknife over the shared panel. Regeneration-path kernels add the
//! path-to-path variance on top.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{
    h2_closed, ChiSquarePanel, GaussianDataModel, KernelEstimate, KernelMethod, MomentBackend, NormPanel,
    DEFAULT_QUADRATURE_NODES,
};
use crate::quadrature::gauss_uniform;
use crate::rng::{domain, Streams};
use crate::schedule::{
    build_folded_state_space, stationary_of_chain, MarkovChain, RegenerationSampler, Schedule, ScheduleKind,
    StartState, StationaryMethod, StepsizeGrid,
};
use crate::stats::{jackknife, BatchMeans, DEFAULT_BATCHES};

/// Default tolerance on `|h(α) − 1|`.
pub const DEFAULT_TOL: f64 = 1e-3;
/// Largest `s` the root bracket may expand to.
pub const DEFAULT_S_MAX: f64 = 64.0;
/// Spectral radius above which the regeneration system is treated as divergent.
pub const SPECTRAL_THRESHOLD: f64 = 1.0 - 1e-8;
/// Gauss–Legendre nodes used for continuous uniform stepsizes.
pub const UNIFORM_NODES: usize = 32;

/// Tolerance in effect: `TAILSCOPE_TOL` if set and valid, else [`DEFAULT_TOL`].
pub fn tolerance() -> f64 {
    tolerance_override().unwrap_or(DEFAULT_TOL)
}

/// Value of a valid `TAILSCOPE_TOL` override, if any.
pub fn tolerance_override() -> Option<f64> {
    std::env::var("TAILSCOPE_TOL")
        .ok()
        .and_then(|v| v.trim().parse::<f64>().ok())
        .filter(|t| *t > 0.0 && t.is_finite())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    Constant,
    Iid,
    Cyclic,
    MarkovTwoStateClosed,
    MarkovRegenMc,
    MarkovLinearSystem,
    NormBound,
    Custom,
}

impl KernelKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::Iid => "iid",
            Self::Cyclic => "cyclic",
            Self::MarkovTwoStateClosed => "markov_two_state_closed",
            Self::MarkovRegenMc => "markov_regen_mc",
            Self::MarkovLinearSystem => "markov_linear_system",
            Self::NormBound => "norm_bound",
            Self::Custom => "custom",
        }
    }
}

/// Shared evaluation resources: the moment backend and the Lyapunov panel.
#[derive(Debug, Clone)]
pub struct KernelContext {
    backend: MomentBackend,
    rho_panel: Arc<ChiSquarePanel>,
}

impl KernelContext {
    pub fn new(backend: MomentBackend, rho_panel: Arc<ChiSquarePanel>) -> Result<Self> {
        if backend.model() != rho_panel.model() {
            return Err(Error::Config("moment backend and rho panel use different models".into()));
        }
        Ok(Self { backend, rho_panel })
    }

    /// Quadrature moments plus an `n_rho`-draw Lyapunov panel.
    pub fn quadrature(model: GaussianDataModel, n_rho: usize, seed: u64) -> Result<Self> {
        let rho = ChiSquarePanel::generate(model, n_rho, seed, domain::RHO_PANEL)?;
        Self::new(MomentBackend::quadrature(model, DEFAULT_QUADRATURE_NODES), Arc::new(rho))
    }

    /// Monte Carlo moments from one `n`-draw panel, reused for ρ.
    pub fn monte_carlo(model: GaussianDataModel, n: usize, seed: u64) -> Result<Self> {
        let panel = Arc::new(ChiSquarePanel::new(model, n, seed)?);
        Ok(Self {
            backend: MomentBackend::Panel(panel.clone()),
            rho_panel: panel,
        })
    }

    pub fn model(&self) -> &GaussianDataModel {
        self.backend.model()
    }

    pub fn backend(&self) -> &MomentBackend {
        &self.backend
    }

    pub fn rho_panel(&self) -> &Arc<ChiSquarePanel> {
        &self.rho_panel
    }
}

/// Lyapunov diagnostic with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoEstimate {
    pub value: f64,
    pub stderr: f64,
}

type CustomFn = dyn Fn(f64) -> Result<KernelEstimate> + Send + Sync;

#[derive(Clone)]
enum Combine {
    /// `Σ w_l h_l`
    Mean(Vec<f64>),
    /// `(Π h_l)^{1/m}`
    Geometric,
    TwoState { p: f64 },
    /// per-path exponent vectors over the chain states
    Regen { counts: Arc<Vec<Vec<u32>>> },
    LinearSystem { chain: MarkovChain, pi: Vec<f64> },
}

#[derive(Clone)]
enum Source {
    Moments(KernelContext),
    Norm(Arc<NormPanel>),
    Custom(Arc<CustomFn>),
}

/// `s ↦ h(s)` for one schedule under one data model.
#[derive(Clone)]
pub struct ScheduleKernel {
    kind: KernelKind,
    etas: Vec<f64>,
    combine: Combine,
    source: Source,
    /// coefficients of the per-state ρ values in the schedule-level ρ
    rho_weights: Vec<f64>,
    custom_rho: Option<RhoEstimate>,
}

impl std::fmt::Debug for ScheduleKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScheduleKernel")
            .field("kind", &self.kind)
            .field("etas", &self.etas)
            .finish_non_exhaustive()
    }
}

fn check_etas(etas: &[f64]) -> Result<()> {
    if etas.is_empty() || etas.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(Error::InvalidParameter(format!("stepsizes must be finite and >= 0: {etas:?}")));
    }
    Ok(())
}

/// Two-state regeneration closed form for per-step moments `x`, `y`.
pub fn two_state_closed_form(x: f64, y: f64, p: f64, s: f64) -> Result<f64> {
    let q = 1.0 - p;
    if q * x >= 1.0 || q * y >= 1.0 {
        return Err(Error::OutOfDomain { s });
    }
    Ok(x * (q + (2.0 * p - 1.0) * y) / (2.0 * (1.0 - q * y)) + y * (q + (2.0 * p - 1.0) * x) / (2.0 * (1.0 - q * x)))
}

/// Expected product of per-step factors `h` over one regeneration cycle,
/// started from the stationary law, by first-step analysis.
pub fn regeneration_linear_system(chain: &MarkovChain, pi: &[f64], h: &[f64], s: f64) -> Result<f64> {
    let m = chain.num_states();
    let p = chain.transition_matrix();
    let a = DMatrix::from_fn(m, m, |i, l| p[(i, l)] * h[l]);
    let mut total = 0.0;
    for j in 0..m {
        if pi[j] == 0.0 {
            continue;
        }
        let mut q = a.clone();
        q.column_mut(j).fill(0.0);
        let radius = spectral_radius(&q);
        if radius >= SPECTRAL_THRESHOLD {
            return Err(Error::Divergence { s, spectral_radius: radius });
        }
        let lhs = DMatrix::<f64>::identity(m, m) - q;
        let rhs: DVector<f64> = a.column(j).into_owned();
        let sol = lhs
            .lu()
            .solve(&rhs)
            .filter(|x| x.iter().all(|v| v.is_finite() && *v >= 0.0))
            .ok_or(Error::Divergence {
                s,
                spectral_radius: radius,
            })?;
        total += pi[j] * sol[j];
    }
    Ok(total)
}

/// Upper bound on the spectral radius of a nonnegative matrix `Q`, tight
/// as the bound converges.
///
/// `ρ(Q) < 1` iff `I − Q` is invertible with `M = (I − Q)^{-1} ≥ 0`; then
/// `ρ(Q) = 1 − 1/ρ(M)`, and `ρ(M)` is bounded above by the Collatz–Wielandt
/// ratio `max_i (Mx)_i / x_i` after a few power steps. Returns `+∞` when `M`
/// does not exist or is not nonnegative.
fn spectral_radius(q: &DMatrix<f64>) -> f64 {
    let n = q.nrows();
    let Some(inv) = (DMatrix::<f64>::identity(n, n) - q).try_inverse() else {
        return f64::INFINITY;
    };
    let scale = inv.amax();
    if !scale.is_finite() || inv.iter().any(|v| *v < -1e-12 * scale) {
        return f64::INFINITY;
    }
    let m = inv.map(|v| v.max(0.0));
    let mut x = DVector::from_element(n, 1.0);
    let mut bound = f64::INFINITY;
    for _ in 0..64 {
        let y = &m * &x;
        let ratio = y.iter().zip(x.iter()).map(|(a, b)| a / b).fold(0.0, f64::max);
        bound = bound.min(ratio);
        let norm = y.amax();
        x = y / norm;
        // keep x strictly positive so the ratio stays an upper bound
        x.apply(|v| *v = v.max(1e-300));
    }
    (1.0 - 1.0 / bound).max(0.0)
}

impl ScheduleKernel {
    fn with_moments(kind: KernelKind, etas: Vec<f64>, combine: Combine, rho_weights: Vec<f64>, ctx: &KernelContext) -> Result<Self> {
        check_etas(&etas)?;
        Ok(Self {
            kind,
            etas,
            combine,
            source: Source::Moments(ctx.clone()),
            rho_weights,
            custom_rho: None,
        })
    }

    pub fn constant(eta: f64, ctx: &KernelContext) -> Result<Self> {
        Self::with_moments(KernelKind::Constant, vec![eta], Combine::Mean(vec![1.0]), vec![1.0], ctx)
    }

    /// i.i.d. stepsizes drawn from `etas` with probabilities `weights`.
    pub fn iid_weighted(etas: Vec<f64>, weights: Vec<f64>, ctx: &KernelContext) -> Result<Self> {
        if weights.len() != etas.len() || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidParameter("iid weights must match stepsizes and be >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        Self::with_moments(KernelKind::Iid, etas, Combine::Mean(weights.clone()), weights, ctx)
    }

    pub fn iid_grid(grid: &StepsizeGrid, ctx: &KernelContext) -> Result<Self> {
        let k = grid.num_points();
        Self::iid_weighted(grid.points(), vec![1.0; k], ctx)
    }

    /// Uniform stepsizes on `(center − range, center + range)`.
    pub fn iid_uniform(center: f64, range: f64, ctx: &KernelContext) -> Result<Self> {
        if range == 0.0 {
            let mut k = Self::iid_weighted(vec![center], vec![1.0], ctx)?;
            k.kind = KernelKind::Iid;
            return Ok(k);
        }
        if !(range > 0.0 && center - range >= 0.0) {
            return Err(Error::InvalidParameter(format!("uniform({center} ± {range}) must lie in [0, ∞)")));
        }
        let rule = gauss_uniform(UNIFORM_NODES, center - range, center + range);
        Self::iid_weighted(rule.nodes, rule.weights, ctx)
    }

    /// Per-step geometric mean over the folded cycle.
    pub fn cyclic(grid: &StepsizeGrid, ctx: &KernelContext) -> Result<Self> {
        let space = build_folded_state_space(grid)?;
        Self::cyclic_states(space.states().to_vec(), ctx)
    }

    /// Cyclic kernel over an explicit cycle of stepsizes.
    pub fn cyclic_states(etas: Vec<f64>, ctx: &KernelContext) -> Result<Self> {
        let m = etas.len();
        Self::with_moments(KernelKind::Cyclic, etas, Combine::Geometric, vec![1.0; m], ctx)
    }

    /// Two-state chain that flips with probability `p`, closed form.
    pub fn markov_two_state(low: f64, high: f64, p: f64, ctx: &KernelContext) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) || p == 0.0 {
            return Err(Error::InvalidParameter(format!("flip probability {p} must be in (0, 1]")));
        }
        Self::with_moments(
            KernelKind::MarkovTwoStateClosed,
            vec![low, high],
            Combine::TwoState { p },
            vec![1.0, 1.0],
            ctx,
        )
    }

    fn markov_parts(schedule: &Schedule) -> Result<(MarkovChain, Vec<f64>)> {
        let chain = schedule
            .chain()
            .ok_or_else(|| Error::InvalidParameter(format!("{} schedule has no Markov chain", schedule.tag())))?
            .clone();
        let pi = stationary_of_chain(&chain, StationaryMethod::ClosedForm)
            .or_else(|_| stationary_of_chain(&chain, StationaryMethod::LinearSolve))?
            .probabilities;
        Ok((chain, pi))
    }

    fn markov_rho_weights(pi: &[f64]) -> Vec<f64> {
        // mean regeneration time is 1/π_j from a state drawn from π, i.e. m
        let m = pi.len() as f64;
        pi.iter().map(|w| m * w).collect()
    }

    /// First-step-analysis kernel for a Markov schedule.
    pub fn markov_linear_system(schedule: &Schedule, ctx: &KernelContext) -> Result<Self> {
        let (chain, pi) = Self::markov_parts(schedule)?;
        let etas = chain.values().to_vec();
        let w = Self::markov_rho_weights(&pi);
        Self::with_moments(
            KernelKind::MarkovLinearSystem,
            etas,
            Combine::LinearSystem { chain, pi },
            w,
            ctx,
        )
    }

    /// Regeneration-path Monte Carlo kernel. Paths are sampled once, so the
    /// kernel is a smooth deterministic function of `s`.
    pub fn markov_regen_mc(schedule: &Schedule, n_paths: usize, seed: u64, ctx: &KernelContext) -> Result<Self> {
        if n_paths == 0 {
            return Err(Error::Config("regeneration kernel needs n_paths >= 1".into()));
        }
        let (chain, pi) = Self::markov_parts(schedule)?;
        let sampler = RegenerationSampler::from_chain(chain.clone())?;
        let streams = Streams::new(seed);
        let m = chain.num_states();
        let counts: Vec<Vec<u32>> = (0..n_paths as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = streams.stream(domain::REGEN_PATHS, i);
                let path = sampler.sample(StartState::Stationary, &mut rng)?;
                let mut c = vec![0u32; m];
                for &st in &path.states {
                    c[st] += 1;
                }
                Ok(c)
            })
            .collect::<Result<_>>()?;
        let etas = chain.values().to_vec();
        let w = Self::markov_rho_weights(&pi);
        Self::with_moments(
            KernelKind::MarkovRegenMc,
            etas,
            Combine::Regen { counts: Arc::new(counts) },
            w,
            ctx,
        )
    }

    /// Kernel matching a schedule's variant; Markov schedules use the
    /// two-state closed form or the linear system.
    pub fn for_schedule(schedule: &Schedule, ctx: &KernelContext) -> Result<Self> {
        match schedule.kind() {
            ScheduleKind::Constant(eta) => Self::constant(*eta, ctx),
            ScheduleKind::IidGrid(g) => Self::iid_grid(g, ctx),
            ScheduleKind::IidUniformContinuous { center, range } => Self::iid_uniform(*center, *range, ctx),
            ScheduleKind::Cyclic(g) => Self::cyclic(g, ctx),
            ScheduleKind::MarkovFolded { .. } => Self::markov_linear_system(schedule, ctx),
            ScheduleKind::MarkovTwoState { low, high, p } => Self::markov_two_state(*low, *high, *p, ctx),
        }
    }

    /// Spectral-norm bound kernel `E_η E‖I − (η/b)H‖^s` for i.i.d. stepsizes.
    pub fn norm_bound(etas: Vec<f64>, weights: Vec<f64>, panel: Arc<NormPanel>) -> Result<Self> {
        check_etas(&etas)?;
        if weights.len() != etas.len() {
            return Err(Error::InvalidParameter("norm-bound weights must match stepsizes".into()));
        }
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        Ok(Self {
            kind: KernelKind::NormBound,
            etas,
            combine: Combine::Mean(weights.clone()),
            source: Source::Norm(panel),
            rho_weights: weights,
            custom_rho: None,
        })
    }

    /// Arbitrary kernel with a fixed ρ diagnostic.
    pub fn custom(f: impl Fn(f64) -> Result<KernelEstimate> + Send + Sync + 'static, rho: RhoEstimate) -> Self {
        Self {
            kind: KernelKind::Custom,
            etas: Vec::new(),
            combine: Combine::Geometric,
            source: Source::Custom(Arc::new(f)),
            rho_weights: Vec::new(),
            custom_rho: Some(rho),
        }
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    /// Stepsizes the kernel is built on (chain states for Markov kinds).
    pub fn stepsizes(&self) -> &[f64] {
        &self.etas
    }

    fn step_moments(&self, s: f64) -> Vec<BatchMeans> {
        match &self.source {
            Source::Moments(ctx) => self.etas.iter().map(|&e| ctx.backend.moment_batches(s, e)).collect(),
            Source::Norm(panel) => self.etas.iter().map(|&e| panel.moment(s, e)).collect(),
            Source::Custom(_) => Vec::new(),
        }
    }

    fn method(&self) -> KernelMethod {
        match &self.source {
            Source::Moments(ctx) => ctx.backend.method(),
            Source::Norm(_) => KernelMethod::MonteCarlo,
            Source::Custom(_) => KernelMethod::ClosedForm,
        }
    }

    fn n_samples(&self) -> usize {
        match &self.source {
            Source::Moments(ctx) => ctx.backend.n_samples(),
            Source::Norm(p) => p.len(),
            Source::Custom(_) => 0,
        }
    }

    fn combine(&self, h: &[f64], s: f64) -> Result<f64> {
        match &self.combine {
            Combine::Mean(w) => Ok(w.iter().zip(h).map(|(w, h)| w * h).sum()),
            Combine::Geometric => {
                let m = h.len() as f64;
                Ok((h.iter().map(|v| v.ln()).sum::<f64>() / m).exp())
            }
            Combine::TwoState { p } => two_state_closed_form(h[0], h[1], *p, s),
            Combine::Regen { counts } => Ok(regen_values(counts, h).iter().sum::<f64>() / counts.len() as f64),
            Combine::LinearSystem { chain, pi } => regeneration_linear_system(chain, pi, h, s),
        }
    }

    /// Per-step moments `h(s; η_l)` at each kernel stepsize.
    pub fn step_values(&self, s: f64) -> Vec<f64> {
        self.step_moments(s).iter().map(|b| b.mean).collect()
    }

    /// `h(s)` with its standard error.
    pub fn evaluate(&self, s: f64) -> Result<KernelEstimate> {
        if let Source::Custom(f) = &self.source {
            return f(s);
        }
        if s == 0.0 {
            return Ok(KernelEstimate::exact(1.0));
        }
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter(format!("moment order {s} must be >= 0")));
        }
        let bms = self.step_moments(s);
        let means: Vec<f64> = bms.iter().map(|b| b.mean).collect();
        let value = self.combine(&means, s)?;
        let (_, se_panel) = jackknife(&bms, |h| self.combine(h, s).unwrap_or(f64::INFINITY));
        let se_path = match &self.combine {
            Combine::Regen { counts } => {
                BatchMeans::from_values(&regen_values(counts, &means), DEFAULT_BATCHES).stderr()
            }
            _ => 0.0,
        };
        let stderr = se_panel.hypot(se_path);
        let method = if stderr == 0.0 && self.method() == KernelMethod::MonteCarlo {
            KernelMethod::ClosedForm
        } else if se_path > 0.0 {
            KernelMethod::MonteCarlo
        } else {
            self.method()
        };
        Ok(KernelEstimate {
            value,
            stderr,
            n_samples: self.n_samples(),
            method,
        })
    }

    /// Lyapunov diagnostic matching the kernel kind.
    pub fn rho(&self) -> RhoEstimate {
        if let Some(r) = self.custom_rho {
            return r;
        }
        let bms: Vec<BatchMeans> = match &self.source {
            Source::Moments(ctx) => self.etas.iter().map(|&e| ctx.rho_panel.log_moment(e)).collect(),
            Source::Norm(panel) => self.etas.iter().map(|&e| panel.log_moment(e)).collect(),
            Source::Custom(_) => unreachable!("custom kernels carry their own rho"),
        };
        let w = &self.rho_weights;
        let (value, stderr) = jackknife(&bms, |r| w.iter().zip(r).map(|(w, r)| w * r).sum());
        RhoEstimate { value, stderr }
    }
}

fn regen_values(counts: &[Vec<u32>], h: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    counts
        .iter()
        .map(|c| {
            c.iter()
                .zip(&logs)
                .filter(|(n, _)| **n > 0)
                .map(|(&n, l)| n as f64 * l)
                .sum::<f64>()
                .exp()
        })
        .collect()
}

/// Outcome of a successful root search.
#[derive(Debug, Clone, PartialEq)]
pub struct TailIndexResult {
    pub alpha: f64,
    /// standard error of α from the kernel stderr and the local slope
    pub alpha_stderr: f64,
    pub rho: f64,
    pub rho_stderr: f64,
    pub bracket: (f64, f64),
    pub tol: f64,
    pub method: KernelKind,
    pub mc_stderr_at_root: f64,
    /// `dh/ds` at the root
    pub slope: f64,
    /// root coincides with the divergence boundary of the kernel
    pub at_divergence: bool,
    /// `(s, h(s))` for each evaluation; divergent points are recorded as `+∞`
    pub trace: Vec<(f64, f64)>,
}

impl TailIndexResult {
    /// Whether every traced point left of α has `h < 1` and every point right has `h > 1`.
    pub fn sign_pattern_holds(&self) -> bool {
        self.trace.iter().all(|&(s, h)| {
            if s < self.alpha {
                h <= 1.0
            } else if s > self.alpha {
                h >= 1.0
            } else {
                true
            }
        })
    }
}

fn excess(kernel: &ScheduleKernel, s: f64) -> Result<f64> {
    match kernel.evaluate(s) {
        Ok(k) => Ok(k.value - 1.0),
        Err(Error::Divergence { .. } | Error::OutOfDomain { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Root of `h(s) = 1` on `(0, s_max]`.
///
/// Refuses when the ρ diagnostic is not significantly negative. Divergent
/// or out-of-domain evaluations count as `h = +∞`, which is where they occur.
pub fn find_tail_index(kernel: &ScheduleKernel, s_max: f64, tol: f64) -> Result<TailIndexResult> {
    let rho = kernel.rho();
    if !(rho.value + 3.0 * rho.stderr < 0.0) {
        return Err(Error::NonNegativeRho {
            rho: rho.value,
            upper: rho.value + 3.0 * rho.stderr,
        });
    }
    let mut trace = Vec::new();
    let eval = |s: f64, trace: &mut Vec<(f64, f64)>| -> Result<f64> {
        let g = excess(kernel, s)?;
        trace.push((s, g + 1.0));
        Ok(g)
    };
    let mut lo = 1e-6;
    if eval(lo, &mut trace)? >= 0.0 {
        return Err(Error::Degenerate(format!("h({lo}) >= 1 although rho < 0")));
    }
    let mut hi = 8.0f64.min(s_max);
    loop {
        if eval(hi, &mut trace)? > 0.0 {
            break;
        }
        if hi >= s_max {
            return Err(Error::RootAboveCap { s_max });
        }
        lo = hi;
        hi = (hi * 2.0).min(s_max);
    }
    let bracket = (lo, hi);
    for _ in 0..200 {
        if hi - lo <= 1e-12 * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if eval(mid, &mut trace)? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let alpha = 0.5 * (lo + hi);
    // h can climb from below 1 to +∞ inside a window narrower than the
    // divergence threshold; the root is then pinned to the boundary.
    let (at_root, at_divergence) = match kernel.evaluate(alpha) {
        Ok(v) => (v, false),
        Err(Error::Divergence { .. } | Error::OutOfDomain { .. }) => (kernel.evaluate(lo)?, true),
        Err(e) => return Err(e),
    };
    if !at_divergence && (at_root.value - 1.0).abs() > tol + 3.0 * at_root.stderr {
        return Err(Error::Degenerate(format!(
            "h jumps across 1 at s = {alpha} (h = {})",
            at_root.value
        )));
    }
    let delta = 1e-4 * alpha;
    let slope = if at_divergence {
        f64::INFINITY
    } else {
        match (excess(kernel, alpha + delta), excess(kernel, alpha - delta)) {
            (Ok(a), Ok(b)) if a.is_finite() && b.is_finite() => (a - b) / (2.0 * delta),
            _ => f64::NAN,
        }
    };
    let alpha_stderr = if slope > 0.0 { at_root.stderr / slope } else { f64::NAN };
    Ok(TailIndexResult {
        alpha,
        alpha_stderr,
        rho: rho.value,
        rho_stderr: rho.stderr,
        bracket,
        tol,
        method: kernel.kind(),
        mc_stderr_at_root: at_root.stderr,
        slope,
        at_divergence,
        trace,
    })
}

/// Tail regime relative to the variance threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Heavy,
    Boundary,
    Light,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Heavy => "heavy",
            Self::Boundary => "boundary",
            Self::Light => "light",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdReport {
    pub c_value: f64,
    pub regime: Regime,
}

/// Second-moment threshold of a schedule, computed exactly.
pub fn threshold_report(schedule: &Schedule, model: &GaussianDataModel, tol: f64) -> Result<ThresholdReport> {
    let c = |eta: f64| h2_closed(eta, eta * eta, model);
    let c_value = match schedule.kind() {
        ScheduleKind::Constant(eta) => c(*eta)?,
        ScheduleKind::IidGrid(g) => {
            let pts = g.points();
            let n = pts.len() as f64;
            let m1 = pts.iter().sum::<f64>() / n;
            let m2 = pts.iter().map(|e| e * e).sum::<f64>() / n;
            h2_closed(m1, m2, model)?
        }
        ScheduleKind::IidUniformContinuous { center, range } => {
            h2_closed(*center, center * center + range * range / 3.0, model)?
        }
        ScheduleKind::Cyclic(g) => {
            let space = build_folded_state_space(g)?;
            space.states().iter().map(|&e| c(e)).product::<Result<f64>>()?
        }
        ScheduleKind::MarkovTwoState { low, high, p } => two_state_closed_form(c(*low)?, c(*high)?, *p, 2.0)?,
        ScheduleKind::MarkovFolded { .. } => {
            let chain = schedule.chain().expect("Markov schedule has a chain");
            let pi = stationary_of_chain(chain, StationaryMethod::ClosedForm)
                .or_else(|_| stationary_of_chain(chain, StationaryMethod::LinearSolve))?
                .probabilities;
            let h: Vec<f64> = chain.values().iter().map(|&e| c(e)).collect::<Result<_>>()?;
            match regeneration_linear_system(chain, &pi, &h, 2.0) {
                Ok(v) => v,
                Err(Error::Divergence { .. }) => f64::INFINITY,
                Err(e) => return Err(e),
            }
        }
    };
    let regime = if (c_value - 1.0).abs() <= tol {
        Regime::Boundary
    } else if c_value > 1.0 {
        Regime::Heavy
    } else {
        Regime::Light
    };
    Ok(ThresholdReport { c_value, regime })
}

/// α with its standard error for one schedule in a comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaEntry {
    pub alpha: f64,
    pub stderr: f64,
}

impl From<&TailIndexResult> for AlphaEntry {
    fn from(r: &TailIndexResult) -> Self {
        Self {
            alpha: r.alpha,
            stderr: if r.alpha_stderr.is_finite() { r.alpha_stderr } else { 0.0 },
        }
    }
}

/// `a < b` beyond `k` combined standard errors.
pub fn strictly_less(a: AlphaEntry, b: AlphaEntry, k: f64) -> bool {
    b.alpha - a.alpha > k * a.stderr.hypot(b.stderr)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovRow {
    pub p: f64,
    pub alpha: AlphaEntry,
    /// `(1 − p)·max_l h(α; η_l) < 1` at the computed root
    pub in_p_set: bool,
    /// whether the ordering predicted for this `p` holds beyond 3 stderr
    pub ordering_holds: bool,
}

/// Tail indices of the constant, i.i.d., cyclic and Markov schedules sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleComparison {
    pub constant: AlphaEntry,
    pub iid: AlphaEntry,
    pub cyclic: AlphaEntry,
    pub markov: Vec<MarkovRow>,
    /// `α_m < α_c` beyond 3 stderr
    pub cyclic_below_constant: bool,
    /// `α_iid < α_m` beyond 3 stderr
    pub iid_below_cyclic: bool,
}

/// Compare schedules built on a `K`-point grid around `eta_hat` with half-width `range`.
///
/// With `K = 2` the Markov schedule is the flip chain on `{η̂ − R, η̂ + R}`;
/// otherwise it is the folded chain, and the i.i.d. comparator draws from
/// the folded states so that all variants share one stepsize law at `p = 1`.
pub fn compare_schedules(
    eta_hat: f64,
    range: f64,
    k: usize,
    p_list: &[f64],
    ctx: &KernelContext,
    tol: f64,
) -> Result<ScheduleComparison> {
    let grid = StepsizeGrid::new(eta_hat, range, k)?;
    let space = build_folded_state_space(&grid)?;
    let solve = |kernel: &ScheduleKernel, tag: &str| {
        find_tail_index(kernel, DEFAULT_S_MAX, tol).map_err(|e| tagged(e, tag))
    };
    let constant = solve(&ScheduleKernel::constant(eta_hat, ctx)?, "constant")?;
    let iid_kernel = ScheduleKernel::iid_weighted(space.states().to_vec(), vec![1.0; space.len()], ctx)?;
    let iid = AlphaEntry::from(&solve(&iid_kernel, "iid")?);
    let cyclic = AlphaEntry::from(&solve(&ScheduleKernel::cyclic_states(space.states().to_vec(), ctx)?, "cyclic")?);
    let constant = AlphaEntry::from(&constant);
    let mut markov = Vec::with_capacity(p_list.len());
    for &p in p_list {
        let kernel = if k == 2 {
            ScheduleKernel::markov_two_state(grid.lower(), grid.upper(), p, ctx)?
        } else {
            ScheduleKernel::markov_linear_system(&Schedule::markov_folded(grid, p)?, ctx)?
        };
        let res = solve(&kernel, &format!("markov(p={p})"))?;
        let alpha = AlphaEntry::from(&res);
        let hmax = kernel.step_values(res.alpha).into_iter().fold(0.0, f64::max);
        let in_p_set = (1.0 - p) * hmax < 1.0;
        let ordering_holds = if p > 0.5 {
            strictly_less(iid, alpha, 3.0) && strictly_less(alpha, cyclic, 3.0) && strictly_less(cyclic, constant, 3.0)
        } else if p < 0.5 {
            strictly_less(alpha, iid, 3.0) && strictly_less(iid, cyclic, 3.0) && strictly_less(cyclic, constant, 3.0)
        } else {
            (alpha.alpha - iid.alpha).abs() <= 3.0 * alpha.stderr.hypot(iid.stderr) + tol
        };
        markov.push(MarkovRow {
            p,
            alpha,
            in_p_set,
            ordering_holds,
        });
    }
    Ok(ScheduleComparison {
        constant,
        iid,
        cyclic,
        cyclic_below_constant: strictly_less(cyclic, constant, 3.0),
        iid_below_cyclic: strictly_less(iid, cyclic, 3.0),
        markov,
    })
}

fn tagged(e: Error, tag: &str) -> Error {
    match e {
        Error::NonNegativeRho { .. } | Error::RootAboveCap { .. } => Error::Degenerate(format!("{tag}: {e}")),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(b: usize, d: usize) -> KernelContext {
        let m = GaussianDataModel::new(1.0, b, d).unwrap();
        KernelContext::quadrature(m, 200_000, 7).unwrap()
    }

    #[test]
    fn synthetic_root() {
        let k = ScheduleKernel::custom(
            |s| Ok(KernelEstimate::exact((s * (s - 2.0)).exp())),
            RhoEstimate { value: -1.0, stderr: 0.0 },
        );
        let r = find_tail_index(&k, 64.0, 1e-3).unwrap();
        assert!((r.alpha - 2.0).abs() < 1e-6);
        assert!(r.sign_pattern_holds());
        assert!((r.slope - 2.0).abs() < 1e-3);
    }

    #[test]
    fn boundary_root_is_two() {
        let c = ctx(1, 1);
        let k = ScheduleKernel::constant(2.0 / 3.0, &c).unwrap();
        assert!((k.evaluate(2.0).unwrap().value - 1.0).abs() < 1e-10);
        let r = find_tail_index(&k, 64.0, 1e-3).unwrap();
        assert!((r.alpha - 2.0).abs() < 1e-6, "{}", r.alpha);
    }

    #[test]
    fn zero_step_is_refused() {
        let k = ScheduleKernel::constant(0.0, &ctx(1, 1)).unwrap();
        assert_eq!(k.evaluate(3.0).unwrap().value, 1.0);
        assert!(matches!(find_tail_index(&k, 64.0, 1e-3), Err(Error::NonNegativeRho { .. })));
    }

    #[test]
    fn light_tail_config_has_root_above_two() {
        let k = ScheduleKernel::constant(0.1, &ctx(10, 10)).unwrap();
        let r = find_tail_index(&k, 64.0, 1e-3).unwrap();
        assert!(r.alpha > 2.0);
    }

    #[test]
    fn kernels_agree_on_degenerate_inputs() {
        let c = ctx(10, 10);
        let g = StepsizeGrid::new(0.3, 0.0, 4).unwrap();
        let constant = ScheduleKernel::constant(0.3, &c).unwrap();
        let iid = ScheduleKernel::iid_uniform(0.3, 0.0, &c).unwrap();
        let cyc = ScheduleKernel::cyclic(&g, &c).unwrap();
        for s in [0.5, 1.0, 2.5] {
            let v = constant.evaluate(s).unwrap().value;
            assert!((iid.evaluate(s).unwrap().value - v).abs() < 1e-13);
            assert!((cyc.evaluate(s).unwrap().value - v).abs() < 1e-13);
        }
    }

    #[test]
    fn two_point_kernels() {
        let c = ctx(10, 10);
        let (l, u) = (0.05, 0.25);
        let iid = ScheduleKernel::iid_weighted(vec![l, u], vec![1.0, 1.0], &c).unwrap();
        let cyc = ScheduleKernel::cyclic_states(vec![l, u], &c).unwrap();
        let s = 1.5;
        let x = ScheduleKernel::constant(l, &c).unwrap().evaluate(s).unwrap().value;
        let y = ScheduleKernel::constant(u, &c).unwrap().evaluate(s).unwrap().value;
        assert!((iid.evaluate(s).unwrap().value - (x + y) / 2.0).abs() < 1e-14);
        assert!((cyc.evaluate(s).unwrap().value - (x * y).sqrt()).abs() < 1e-14);
        assert!(cyc.evaluate(s).unwrap().value < iid.evaluate(s).unwrap().value);
        let iid_r = ScheduleKernel::iid_uniform(0.15, 0.1, &c).unwrap();
        let con = ScheduleKernel::constant(0.15, &c).unwrap();
        assert!(iid_r.evaluate(2.0).unwrap().value > con.evaluate(2.0).unwrap().value);
    }

    #[test]
    fn two_state_closed_form_special_cases() {
        assert!((two_state_closed_form(0.7, 1.2, 1.0, 1.0).unwrap() - 0.84).abs() < 1e-15);
        let x = 0.8;
        assert!((two_state_closed_form(x, x, 0.5, 1.0).unwrap() - x / (2.0 - x)).abs() < 1e-15);
        for p in [0.1, 0.5, 0.9] {
            assert!((two_state_closed_form(1.0, 1.0, p, 1.0).unwrap() - 1.0).abs() < 1e-15);
        }
        assert!(matches!(
            two_state_closed_form(2.5, 0.5, 0.5, 3.0),
            Err(Error::OutOfDomain { s }) if s == 3.0
        ));
    }

    #[test]
    fn linear_system_reduces_to_closed_forms() {
        let c = ctx(10, 10);
        let (l, u) = (0.04, 0.2);
        for p in [0.3, 0.7, 1.0] {
            let sched = Schedule::markov_two_state(l, u, p).unwrap();
            let lin = ScheduleKernel::markov_linear_system(&sched, &c).unwrap();
            let closed = ScheduleKernel::markov_two_state(l, u, p, &c).unwrap();
            for s in [0.5, 1.0, 2.0] {
                let a = lin.evaluate(s).unwrap().value;
                let b = closed.evaluate(s).unwrap().value;
                assert!((a - b).abs() < 1e-10, "p={p} s={s}: {a} vs {b}");
            }
        }
        let g = StepsizeGrid::new(0.1, 0.05, 3).unwrap();
        let lin = ScheduleKernel::markov_linear_system(&Schedule::markov_folded(g, 1.0).unwrap(), &c).unwrap();
        let cyc = ScheduleKernel::cyclic(&g, &c).unwrap();
        for s in [0.5, 1.0, 2.0, 3.0] {
            let a = lin.evaluate(s).unwrap().value;
            let b = cyc.evaluate(s).unwrap().value.powi(4);
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn linear_system_diverges_for_large_orders() {
        let c = ctx(10, 10);
        let sched = Schedule::markov_two_state(0.05, 0.6, 0.2).unwrap();
        let k = ScheduleKernel::markov_linear_system(&sched, &c).unwrap();
        assert!(matches!(k.evaluate(60.0), Err(Error::Divergence { .. })));
        let r = find_tail_index(&k, 64.0, 1e-3).unwrap();
        assert!(r.sign_pattern_holds());
    }

    #[test]
    fn regeneration_mc_matches_closed_form() {
        let c = ctx(10, 10);
        let sched = Schedule::markov_two_state(0.04, 0.2, 0.3).unwrap();
        let mc = ScheduleKernel::markov_regen_mc(&sched, 200_000, 3, &c).unwrap();
        let closed = ScheduleKernel::markov_two_state(0.04, 0.2, 0.3, &c).unwrap();
        assert_eq!(mc.evaluate(0.0).unwrap().value, 1.0);
        for s in [0.5, 1.0, 2.0] {
            let a = mc.evaluate(s).unwrap();
            let b = closed.evaluate(s).unwrap().value;
            assert!((a.value - b).abs() < 3.0 * a.stderr, "s={s}: {a:?} vs {b}");
        }
    }

    #[test]
    fn thresholds() {
        let m = GaussianDataModel::new(1.0, 1, 1).unwrap();
        let eta = 2.0 / 3.0;
        let r = threshold_report(&Schedule::constant(eta).unwrap(), &m, 1e-9).unwrap();
        assert_eq!(r.regime, Regime::Boundary);
        let g = StepsizeGrid::new(eta, 0.0, 2).unwrap();
        let r = threshold_report(&Schedule::cyclic(g).unwrap(), &m, 1e-9).unwrap();
        assert!((r.c_value - 1.0).abs() < 1e-12);
        let m = GaussianDataModel::new(1.0, 10, 10).unwrap();
        let (l, u) = (0.1, 0.3);
        let cl = h2_closed(l, l * l, &m).unwrap();
        let cu = h2_closed(u, u * u, &m).unwrap();
        let r = threshold_report(&Schedule::markov_two_state(l, u, 1.0).unwrap(), &m, 1e-9).unwrap();
        assert!((r.c_value - cl * cu).abs() < 1e-14);
        assert_eq!(r.regime, Regime::Light);
    }

    #[test]
    fn rho_weights_are_consistent() {
        let c = ctx(10, 10);
        let sched = Schedule::markov_two_state(0.05, 0.15, 0.5).unwrap();
        let lin = ScheduleKernel::markov_linear_system(&sched, &c).unwrap().rho();
        let two = ScheduleKernel::markov_two_state(0.05, 0.15, 0.5, &c).unwrap().rho();
        assert!((lin.value - two.value).abs() < 1e-12);
    }
}
