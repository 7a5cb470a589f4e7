//! Symmetric α-stable sampling and tail-index estimators.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sgdsim::EnsembleMatrix;
use crate::stats::median;

/// Symmetric, zero-location α-stable law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableSpec {
    alpha: f64,
    scale: f64,
}

impl StableSpec {
    pub fn new(alpha: f64, scale: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(Error::InvalidParameter(format!("stable alpha {alpha} must be in (0, 2]")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("stable scale {scale} must be > 0")));
        }
        Ok(Self { alpha, scale })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// One draw by the Chambers–Mallows–Stuck transform.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let half_pi = std::f64::consts::FRAC_PI_2;
        let v = rng.random_range(-half_pi..half_pi);
        let w: f64 = Exp1.sample(rng);
        let a = self.alpha;
        let x = if a == 1.0 {
            v.tan()
        } else {
            (a * v).sin() / v.cos().powf(1.0 / a) * ((v * (1.0 - a)).cos() / w).powf((1.0 - a) / a)
        };
        self.scale * x
    }
}

pub fn sample_stable<R: Rng + ?Sized>(spec: &StableSpec, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| spec.sample(rng)).collect()
}

/// `k1` blocks of `k2` consecutive samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockEstimatorConfig {
    pub k1: usize,
    pub k2: usize,
}

impl BlockEstimatorConfig {
    pub fn new(k1: usize, k2: usize) -> Result<Self> {
        if k1 < 10 || k2 < 2 {
            return Err(Error::InvalidParameter(format!("need k1 >= 10 and k2 >= 2 (got {k1}, {k2})")));
        }
        Ok(Self { k1, k2 })
    }

    /// `k1 = k2 = ⌊√n⌋`.
    pub fn for_len(n: usize) -> Result<Self> {
        let r = (n as f64).sqrt().floor() as usize;
        Self::new(r, r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaEstimate {
    /// estimate clamped to `(0, 2]`
    pub alpha: f64,
    /// unclamped estimate
    pub raw: f64,
    pub clamped: bool,
    /// zero samples nudged away from 0
    pub zeros_perturbed: usize,
}

fn log_abs(x: f64, zeros: &mut usize) -> f64 {
    if x == 0.0 {
        *zeros += 1;
        f64::EPSILON.ln()
    } else {
        x.abs().ln()
    }
}

/// Block log-moment estimator:
/// `1/α̂ = (mean log|Y_i| − mean log|X_j|) / log k2`, `Y_i` the block sums.
pub fn estimate_alpha_blocks(samples: &[f64], config: BlockEstimatorConfig) -> Result<AlphaEstimate> {
    let needed = config.k1 * config.k2;
    if samples.len() < needed {
        return Err(Error::Size {
            needed,
            have: samples.len(),
        });
    }
    let used = &samples[..needed];
    let mut zeros = 0;
    let mut sum_x = 0.0;
    let mut sum_y = 0.0;
    for block in used.chunks_exact(config.k2) {
        sum_y += log_abs(block.iter().sum(), &mut zeros);
        for &x in block {
            sum_x += log_abs(x, &mut zeros);
        }
    }
    let inv = (sum_y / config.k1 as f64 - sum_x / needed as f64) / (config.k2 as f64).ln();
    let raw = 1.0 / inv;
    let (alpha, clamped) = if !(raw > 0.0) || raw > 2.0 { (2.0, true) } else { (raw, false) };
    Ok(AlphaEstimate {
        alpha,
        raw,
        clamped,
        zeros_perturbed: zeros,
    })
}

/// Hill estimator on the top `k_order` absolute values.
pub fn estimate_alpha_hill(samples: &[f64], k_order: usize) -> Result<f64> {
    let n = samples.len();
    if k_order == 0 || 2 * k_order >= n {
        return Err(Error::Size {
            needed: 2 * k_order + 1,
            have: n,
        });
    }
    let mut abs: Vec<f64> = samples.iter().map(|x| x.abs()).collect();
    abs.sort_by(|a, b| b.total_cmp(a));
    let threshold = abs[k_order];
    if !(threshold > 0.0) || abs[0] == threshold {
        return Err(Error::Degenerate("no spread in the upper order statistics".into()));
    }
    let mean_log = abs[..k_order].iter().map(|x| (x / threshold).ln()).sum::<f64>() / k_order as f64;
    Ok(1.0 / mean_log)
}

/// Projection directions for [`project_and_estimate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Directions {
    Coordinates,
    Vectors(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionReport {
    pub per_direction: Vec<AlphaEstimate>,
    /// median of the per-direction estimates
    pub pooled: f64,
}

/// Block estimates of each projection `uᵀx` across rows, pooled by median.
///
/// Projections are centered by their median first: the averaged iterates
/// fluctuate around the true weights, not around zero.
pub fn project_and_estimate(
    ens: &EnsembleMatrix,
    directions: &Directions,
    config: Option<BlockEstimatorConfig>,
) -> Result<ProjectionReport> {
    if ens.rows() == 0 {
        return Err(Error::Degenerate("empty ensemble".into()));
    }
    let d = ens.cols();
    let dirs: Vec<Vec<f64>> = match directions {
        Directions::Coordinates => (0..d)
            .map(|j| {
                let mut e = vec![0.0; d];
                e[j] = 1.0;
                e
            })
            .collect(),
        Directions::Vectors(v) => v.clone(),
    };
    for u in &dirs {
        if u.len() != d {
            return Err(Error::InvalidParameter(format!("direction has length {}, expected {d}", u.len())));
        }
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Domain("zero-norm projection direction".into()));
        }
    }
    let config = match config {
        Some(c) => c,
        None => BlockEstimatorConfig::for_len(ens.rows())?,
    };
    let per_direction: Vec<AlphaEstimate> = dirs
        .par_iter()
        .map(|u| {
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let mut proj: Vec<f64> = ens
                .iter_rows()
                .map(|r| r.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() / norm)
                .collect();
            if proj.iter().all(|&v| v == proj[0]) {
                return Err(Error::Degenerate("projection is constant across runs".into()));
            }
            let m = median(&proj);
            for v in &mut proj {
                *v -= m;
            }
            estimate_alpha_blocks(&proj, config)
        })
        .collect::<Result<_>>()?;
    let alphas: Vec<f64> = per_direction.iter().map(|e| e.alpha).collect();
    Ok(ProjectionReport {
        pooled: median(&alphas),
        per_direction,
    })
}
