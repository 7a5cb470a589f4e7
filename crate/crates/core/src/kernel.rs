//! Per-step moment kernels under Gaussian data.
//!
//! With `a_i ~ N(0, σ² I_d)` and `H = Σ_{i≤b} a_i a_iᵀ`, rotational invariance
//! reduces `‖(I − (η/b)H) e_1‖²` to
//!
//! ```text
//! (1 − c X)² + c² X Y,   c = ησ²/b,   X ~ χ²_b,  Y ~ χ²_{d−1}  (independent)
//! ```
//!
//! so the per-step moment `h(s; η) = E[(…)^{s/2}]` is a two-dimensional
//! expectation. It is evaluated either on a tensor Gauss rule or on a fixed
//! Monte Carlo panel of `(X, Y)` draws. Panels are built from sums of squared
//! normals with one random substream per draw, so the panel for batch `b`
//! and dimension `d` is nested inside the panel for any larger `b` or `d`:
//! sweeps over `η`, `s`, `b` and `d` all use common random numbers.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quadrature::{gauss_chi_square, graded_chi_square, GaussRule};
use crate::rng::{domain, Streams};
use crate::stats::{BatchMeans, DEFAULT_BATCHES};

/// Default Gauss nodes per chi-square axis.
pub const DEFAULT_QUADRATURE_NODES: usize = 128;
/// Default Monte Carlo draws for moment and Lyapunov estimates.
pub const DEFAULT_MC_DRAWS: usize = 1_000_000;

/// Data model `a_i ~ N(0, σ² I_d)` with batch size `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianDataModel {
    sigma: f64,
    batch: usize,
    dim: usize,
}

impl GaussianDataModel {
    pub fn new(sigma: f64, batch: usize, dim: usize) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma = {sigma} must be > 0")));
        }
        if batch == 0 || dim == 0 {
            return Err(Error::InvalidParameter(format!(
                "batch ({batch}) and dim ({dim}) must be >= 1"
            )));
        }
        Ok(Self { sigma, batch, dim })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `c = ησ²/b`.
    pub fn scaled_step(&self, eta: f64) -> f64 {
        eta * self.sigma * self.sigma / self.batch as f64
    }

    /// `(1 − cX)² + c² X Y`.
    #[inline]
    pub fn squared_norm(&self, eta: f64, x: f64, y: f64) -> f64 {
        let c = self.scaled_step(eta);
        let u = 1.0 - c * x;
        u * u + c * c * x * y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelMethod {
    MonteCarlo,
    Quadrature,
    ClosedForm,
}

/// A kernel value with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub method: KernelMethod,
}

impl KernelEstimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            stderr: 0.0,
            n_samples: 0,
            method: KernelMethod::ClosedForm,
        }
    }
}

/// Panel of `(X, Y)` draws, `X ~ χ²_b`, `Y ~ χ²_{d−1}`.
#[derive(Debug, Clone)]
pub struct ChiSquarePanel {
    model: GaussianDataModel,
    x: Vec<f64>,
    y: Vec<f64>,
    n_batches: usize,
}

fn sum_of_squares(rng: &mut impl Rng, k: usize) -> f64 {
    (0..k)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * z
        })
        .sum()
}

impl ChiSquarePanel {
    /// `n` draws from substreams of `(seed, domain)`; draw `i` uses streams `2i`, `2i+1`.
    pub fn generate(model: GaussianDataModel, n: usize, seed: u64, stream_domain: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("Monte Carlo panel needs n >= 1".into()));
        }
        let streams = Streams::new(seed);
        let (x, y): (Vec<f64>, Vec<f64>) = (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let x = sum_of_squares(&mut streams.stream(stream_domain, 2 * i), model.batch);
                let y = sum_of_squares(&mut streams.stream(stream_domain, 2 * i + 1), model.dim - 1);
                (x, y)
            })
            .unzip();
        Ok(Self {
            model,
            x,
            y,
            n_batches: DEFAULT_BATCHES,
        })
    }

    /// Moment panel with the default stream domain.
    pub fn new(model: GaussianDataModel, n: usize, seed: u64) -> Result<Self> {
        Self::generate(model, n, seed, domain::PANEL)
    }

    pub fn model(&self) -> &GaussianDataModel {
        &self.model
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn draws(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.x.iter().copied().zip(self.y.iter().copied())
    }

    fn batch_means_of(&self, f: impl Fn(f64, f64) -> f64 + Sync) -> BatchMeans {
        // chunked so the reduction order does not depend on the worker count
        let vals: Vec<f64> = self
            .x
            .par_iter()
            .zip(self.y.par_iter())
            .with_min_len(4096)
            .map(|(&x, &y)| f(x, y))
            .collect();
        BatchMeans::from_values(&vals, self.n_batches)
    }

    /// Batch means of `((1 − cX)² + c²XY)^{s/2}`.
    pub fn moment(&self, s: f64, eta: f64) -> BatchMeans {
        if s == 0.0 || eta == 0.0 {
            return BatchMeans::exact(1.0);
        }
        let half = s / 2.0;
        let m = self.model;
        self.batch_means_of(move |x, y| m.squared_norm(eta, x, y).powf(half))
    }

    /// Batch means of `½ log((1 − cX)² + c²XY)`. Draws where the argument is
    /// exactly zero are dropped and replaced by the next valid draw.
    pub fn log_moment(&self, eta: f64) -> BatchMeans {
        if eta == 0.0 {
            return BatchMeans::exact(0.0);
        }
        let m = self.model;
        let vals: Vec<f64> = self
            .draws()
            .map(|(x, y)| m.squared_norm(eta, x, y))
            .filter(|&q| q > 0.0)
            .map(|q| 0.5 * q.ln())
            .collect();
        BatchMeans::from_values(&vals, self.n_batches)
    }
}

/// Tensor Gauss rule over `(X, Y)`.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    model: GaussianDataModel,
    x: GaussRule,
    y: GaussRule,
}

impl QuadratureGrid {
    pub fn new(model: GaussianDataModel, nodes: usize) -> Self {
        Self {
            model,
            x: gauss_chi_square(nodes, model.batch),
            y: gauss_chi_square(nodes, model.dim - 1),
        }
    }

    pub fn model(&self) -> &GaussianDataModel {
        &self.model
    }

    pub fn moment(&self, s: f64, eta: f64) -> f64 {
        if s == 0.0 || eta == 0.0 {
            return 1.0;
        }
        let half = s / 2.0;
        let m = &self.model;
        // small d leaves little smoothing from Y across the kink at cX = 1
        let graded;
        let xr = if m.dim <= 2 {
            graded = graded_chi_square(m.batch, 1.0 / m.scaled_step(eta), 20);
            &graded
        } else {
            &self.x
        };
        let mut total = 0.0;
        for (&x, &wx) in xr.nodes.iter().zip(&xr.weights) {
            let mut inner = 0.0;
            for (&y, &wy) in self.y.nodes.iter().zip(&self.y.weights) {
                inner += wy * m.squared_norm(eta, x, y).powf(half);
            }
            total += wx * inner;
        }
        total
    }
}

/// How per-step moments are evaluated.
#[derive(Debug, Clone)]
pub enum MomentBackend {
    Quadrature(Arc<QuadratureGrid>),
    Panel(Arc<ChiSquarePanel>),
}

impl MomentBackend {
    pub fn quadrature(model: GaussianDataModel, nodes: usize) -> Self {
        Self::Quadrature(Arc::new(QuadratureGrid::new(model, nodes)))
    }

    pub fn panel(panel: ChiSquarePanel) -> Self {
        Self::Panel(Arc::new(panel))
    }

    pub fn model(&self) -> &GaussianDataModel {
        match self {
            Self::Quadrature(q) => q.model(),
            Self::Panel(p) => p.model(),
        }
    }

    pub fn method(&self) -> KernelMethod {
        match self {
            Self::Quadrature(_) => KernelMethod::Quadrature,
            Self::Panel(_) => KernelMethod::MonteCarlo,
        }
    }

    pub fn n_samples(&self) -> usize {
        match self {
            Self::Quadrature(_) => 0,
            Self::Panel(p) => p.len(),
        }
    }

    /// Moment with batch structure (exact for quadrature).
    pub fn moment_batches(&self, s: f64, eta: f64) -> BatchMeans {
        match self {
            Self::Quadrature(q) => BatchMeans::exact(q.moment(s, eta)),
            Self::Panel(p) => p.moment(s, eta),
        }
    }
}

/// `h(s; η)`, the per-step moment of `‖(I − (η/b)H) e_1‖^s`.
pub fn h_step(s: f64, eta: f64, backend: &MomentBackend) -> KernelEstimate {
    if s == 0.0 || eta == 0.0 {
        return KernelEstimate::exact(1.0);
    }
    let bm = backend.moment_batches(s, eta);
    KernelEstimate {
        value: bm.mean,
        stderr: bm.stderr(),
        n_samples: backend.n_samples(),
        method: backend.method(),
    }
}

/// Evaluation recipe for one-off `h_step` calls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepMethod {
    MonteCarlo { n: usize, seed: u64 },
    Quadrature { nodes: usize },
}

/// `h_step` with a freshly built backend.
pub fn h_step_with(s: f64, eta: f64, model: GaussianDataModel, method: StepMethod) -> Result<KernelEstimate> {
    let backend = match method {
        StepMethod::MonteCarlo { n, seed } => {
            if n == 0 {
                return Err(Error::Config("Monte Carlo h_step needs n >= 1".into()));
            }
            if s == 0.0 || eta == 0.0 {
                return Ok(KernelEstimate::exact(1.0));
            }
            MomentBackend::panel(ChiSquarePanel::new(model, n, seed)?)
        }
        StepMethod::Quadrature { nodes } => MomentBackend::quadrature(model, nodes.max(1)),
    };
    Ok(h_step(s, eta, &backend))
}

/// `1 − 2E[η]σ² + (E[η²]σ⁴/b)(d + b + 1)`, the exact second-moment kernel.
pub fn h2_closed(eta_mean: f64, eta_sq_mean: f64, model: &GaussianDataModel) -> Result<f64> {
    if eta_sq_mean < eta_mean * eta_mean * (1.0 - 1e-12) - 1e-300 || eta_sq_mean < 0.0 {
        return Err(Error::Domain(format!(
            "E[eta^2] = {eta_sq_mean} < E[eta]^2 = {}",
            eta_mean * eta_mean
        )));
    }
    let s2 = model.sigma * model.sigma;
    let (b, d) = (model.batch as f64, model.dim as f64);
    Ok(1.0 - 2.0 * eta_mean * s2 + eta_sq_mean * s2 * s2 / b * (d + b + 1.0))
}

/// Per-step Lyapunov contribution `½ E log((1 − cX)² + c²XY)`.
pub fn rho_step(eta: f64, panel: &ChiSquarePanel) -> KernelEstimate {
    if eta == 0.0 {
        return KernelEstimate::exact(0.0);
    }
    let bm = panel.log_moment(eta);
    KernelEstimate {
        value: bm.mean,
        stderr: bm.stderr(),
        n_samples: panel.len(),
        method: KernelMethod::MonteCarlo,
    }
}

/// Panel of extreme eigenvalues of `H/σ²` for spectral-norm kernels.
#[derive(Debug, Clone)]
pub struct NormPanel {
    model: GaussianDataModel,
    lambda_min: Vec<f64>,
    lambda_max: Vec<f64>,
    n_batches: usize,
}

impl NormPanel {
    pub fn new(model: GaussianDataModel, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("norm panel needs n >= 1".into()));
        }
        let streams = Streams::new(seed);
        let d = model.dim;
        let (lambda_min, lambda_max): (Vec<f64>, Vec<f64>) = (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = streams.stream(domain::NORM_PANEL, i);
                let mut h = DMatrix::<f64>::zeros(d, d);
                let mut a = vec![0.0; d];
                for _ in 0..model.batch {
                    for v in a.iter_mut() {
                        *v = rng.sample(StandardNormal);
                    }
                    for r in 0..d {
                        for c in 0..d {
                            h[(r, c)] += a[r] * a[c];
                        }
                    }
                }
                if d == 1 {
                    return (h[(0, 0)], h[(0, 0)]);
                }
                let ev = SymmetricEigen::new(h).eigenvalues;
                (ev.min().max(0.0), ev.max())
            })
            .unzip();
        Ok(Self {
            model,
            lambda_min,
            lambda_max,
            n_batches: DEFAULT_BATCHES,
        })
    }

    pub fn model(&self) -> &GaussianDataModel {
        &self.model
    }

    pub fn len(&self) -> usize {
        self.lambda_min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda_min.is_empty()
    }

    fn norm(&self, eta: f64, i: usize) -> f64 {
        let c = self.model.scaled_step(eta);
        (1.0 - c * self.lambda_min[i])
            .abs()
            .max((1.0 - c * self.lambda_max[i]).abs())
    }

    pub fn moment(&self, s: f64, eta: f64) -> BatchMeans {
        if s == 0.0 || eta == 0.0 {
            return BatchMeans::exact(1.0);
        }
        let vals: Vec<f64> = (0..self.len()).map(|i| self.norm(eta, i).powf(s)).collect();
        BatchMeans::from_values(&vals, self.n_batches)
    }

    pub fn log_moment(&self, eta: f64) -> BatchMeans {
        if eta == 0.0 {
            return BatchMeans::exact(0.0);
        }
        let vals: Vec<f64> = (0..self.len())
            .map(|i| self.norm(eta, i))
            .filter(|&v| v > 0.0)
            .map(f64::ln)
            .collect();
        BatchMeans::from_values(&vals, self.n_batches)
    }
}

/// `E‖I − (η/b)H‖^s` in spectral norm.
pub fn hhat_norm(s: f64, eta: f64, panel: &NormPanel) -> KernelEstimate {
    if s == 0.0 || eta == 0.0 {
        return KernelEstimate::exact(1.0);
    }
    let bm = panel.moment(s, eta);
    KernelEstimate {
        value: bm.mean,
        stderr: bm.stderr(),
        n_samples: panel.len(),
        method: KernelMethod::MonteCarlo,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(sigma: f64, b: usize, d: usize) -> GaussianDataModel {
        GaussianDataModel::new(sigma, b, d).unwrap()
    }

    #[test]
    fn zeroth_moment_and_zero_step_are_one() {
        let m = model(1.0, 10, 10);
        let q = MomentBackend::quadrature(m, 32);
        assert_eq!(h_step(0.0, 0.3, &q), KernelEstimate::exact(1.0));
        assert_eq!(h_step(1.7, 0.0, &q), KernelEstimate::exact(1.0));
        let mc = h_step_with(0.0, 0.3, m, StepMethod::MonteCarlo { n: 10, seed: 1 }).unwrap();
        assert_eq!(mc.value, 1.0);
        assert_eq!(mc.stderr, 0.0);
    }

    #[test]
    fn zero_draw_mc_is_config_error() {
        let m = model(1.0, 10, 10);
        assert!(matches!(
            h_step_with(2.0, 0.1, m, StepMethod::MonteCarlo { n: 0, seed: 1 }),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn second_moment_closed_form() {
        let m = model(1.0, 10, 10);
        let c = h2_closed(0.1, 0.01, &m).unwrap();
        assert!((c - 0.821).abs() < 1e-14);
        let q = h_step_with(2.0, 0.1, m, StepMethod::Quadrature { nodes: 128 }).unwrap();
        assert!((q.value - 0.821).abs() < 1e-12);
        let mc = h_step_with(2.0, 0.1, m, StepMethod::MonteCarlo { n: 200_000, seed: 5 }).unwrap();
        assert!((mc.value - 0.821).abs() < 3.0 * mc.stderr, "{mc:?}");
    }

    #[test]
    fn quadrature_handles_the_kink() {
        let q = MomentBackend::quadrature(model(1.0, 3, 1), 128);
        assert!((h_step(0.5, 0.4, &q).value - 0.772182347589066).abs() < 1e-8);
        let q = MomentBackend::quadrature(model(1.0, 10, 2), 128);
        assert!((h_step(2.0, 0.6, &q).value - 0.268).abs() < 1e-10);
        let q = MomentBackend::quadrature(model(1.0, 10, 3), 128);
        assert!((h_step(1.0, 0.6, &q).value - 0.5236494614235995).abs() < 1e-5);
    }

    #[test]
    fn boundary_constant() {
        let m = model(1.0, 1, 1);
        let eta = 2.0 / 3.0;
        assert!((h2_closed(eta, eta * eta, &m).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(h2_closed(0.0, 0.0, &m).unwrap(), 1.0);
        assert!(h2_closed(0.5, 0.1, &m).is_err());
    }

    #[test]
    fn rho_signs() {
        let m = model(1.0, 10, 10);
        let panel = ChiSquarePanel::new(m, 1_000_000, 3).unwrap();
        assert_eq!(rho_step(0.0, &panel).value, 0.0);
        let r = rho_step(0.1, &panel);
        assert!(r.value + 3.0 * r.stderr < 0.0, "{r:?}");
        let big = ChiSquarePanel::new(model(1.0, 1, 1), 1_000_000, 3).unwrap();
        let r = rho_step(1000.0, &big);
        assert!(r.value - 3.0 * r.stderr > 0.0, "{r:?}");
    }

    #[test]
    fn rho_is_negative_on_the_boundary() {
        let m = model(1.0, 1, 1);
        let panel = ChiSquarePanel::new(m, 1_000_000, 9).unwrap();
        let r = rho_step(2.0 / 3.0, &panel);
        assert!(r.value + 3.0 * r.stderr < 0.0, "{r:?}");
    }

    #[test]
    fn panels_nest_across_batch_and_dim() {
        let small = ChiSquarePanel::new(model(1.0, 5, 3), 100, 11).unwrap();
        let big = ChiSquarePanel::new(model(1.0, 8, 6), 100, 11).unwrap();
        for ((x1, y1), (x2, y2)) in small.draws().zip(big.draws()) {
            assert!(x2 >= x1 && y2 >= y1);
        }
    }

    #[test]
    fn norm_kernel_collapses_in_one_dimension() {
        let m = model(1.0, 3, 1);
        let panel = NormPanel::new(m, 200_000, 4).unwrap();
        let q = MomentBackend::quadrature(m, 128);
        for s in [0.5, 1.0, 2.0] {
            let a = hhat_norm(s, 0.4, &panel);
            let b = h_step(s, 0.4, &q);
            assert!((a.value - b.value).abs() < 3.0 * a.stderr, "s={s}: {a:?} vs {b:?}");
        }
        assert_eq!(hhat_norm(0.0, 0.4, &panel).value, 1.0);
        assert_eq!(hhat_norm(1.0, 0.0, &panel).value, 1.0);
    }
}
