//! Stepsize schedules as state machines on a finite grid.
//!
//! The stochastic schedules live on the *folded* state space
//! `(c_1, …, c_K, c_{K−1}, …, c_2)` of `m = 2K − 2` states: the chain sweeps
//! up the grid and back down. From state 1 it always moves up, from state `K`
//! it always starts the descent, and every other state moves forward with
//! probability `p` and backward with probability `1 − p` (indices mod `m`).
//! With `p = 1` this is the deterministic cyclic schedule.
//!
//! State indices in this module are 0-based.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Default cap on the length of a regeneration path.
pub const DEFAULT_RETURN_CAP: usize = 10_000_000;

/// Equally spaced grid `η̂ − R, η̂ − R + δ, …, η̂ + R` with `δ = 2R/(K − 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepsizeGrid {
    center: f64,
    range: f64,
    num_points: usize,
}

impl StepsizeGrid {
    pub fn new(center: f64, range: f64, num_points: usize) -> Result<Self> {
        if num_points < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 grid points, got {num_points}"
            )));
        }
        if !(center.is_finite() && range.is_finite()) || range < 0.0 {
            return Err(Error::InvalidGrid(format!(
                "center {center} and range {range} must be finite with range >= 0"
            )));
        }
        if center - range <= 0.0 {
            return Err(Error::InvalidGrid(format!(
                "grid points must be positive: center {center} <= range {range}"
            )));
        }
        Ok(Self {
            center,
            range,
            num_points,
        })
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.range / (self.num_points - 1) as f64
    }

    /// Grid point `j`, 1-based.
    pub fn point(&self, j: usize) -> f64 {
        assert!((1..=self.num_points).contains(&j), "grid index out of range");
        if j == self.num_points {
            return self.center + self.range;
        }
        self.center - self.range + (j - 1) as f64 * self.spacing()
    }

    pub fn points(&self) -> Vec<f64> {
        (1..=self.num_points).map(|j| self.point(j)).collect()
    }

    pub fn lower(&self) -> f64 {
        self.center - self.range
    }

    pub fn upper(&self) -> f64 {
        self.center + self.range
    }
}

/// The `2K − 2` folded states `(c_1, …, c_K, c_{K−1}, …, c_2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedStateSpace {
    states: Vec<f64>,
    num_points: usize,
}

impl FoldedStateSpace {
    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Number of grid points `K`.
    pub fn num_points(&self) -> usize {
        self.num_points
    }
}

pub fn build_folded_state_space(grid: &StepsizeGrid) -> Result<FoldedStateSpace> {
    let k = grid.num_points();
    if k < 2 {
        return Err(Error::InvalidGrid(format!("need K >= 2, got {k}")));
    }
    let pts = grid.points();
    let mut states = pts.clone();
    states.extend(pts[1..k - 1].iter().rev());
    debug_assert_eq!(states.len(), 2 * k - 2);
    Ok(FoldedStateSpace {
        states,
        num_points: k,
    })
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("p = {p} is not in [0, 1]")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ChainRule {
    /// Folded sweep on `2K − 2` states.
    Folded { k: usize, p: f64 },
    /// Two states, flip with probability `p`.
    TwoState { p: f64 },
}

/// Finite-state stepsize chain: state values plus transition rule.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    values: Vec<f64>,
    rule: ChainRule,
}

impl MarkovChain {
    pub fn folded(space: &FoldedStateSpace, p: f64) -> Result<Self> {
        check_probability(p)?;
        Ok(Self {
            values: space.states().to_vec(),
            rule: ChainRule::Folded {
                k: space.num_points(),
                p,
            },
        })
    }

    pub fn two_state(low: f64, high: f64, p: f64) -> Result<Self> {
        check_probability(p)?;
        if !(low > 0.0 && high > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "two-state stepsizes must be positive, got {low}, {high}"
            )));
        }
        Ok(Self {
            values: vec![low, high],
            rule: ChainRule::TwoState { p },
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn num_states(&self) -> usize {
        self.values.len()
    }

    pub fn p(&self) -> f64 {
        match self.rule {
            ChainRule::Folded { p, .. } | ChainRule::TwoState { p } => p,
        }
    }

    pub fn is_two_state(&self) -> bool {
        matches!(self.rule, ChainRule::TwoState { .. })
    }

    /// Grid size `K` of a folded chain; 2 for the two-state chain.
    pub fn grid_points(&self) -> usize {
        match self.rule {
            ChainRule::Folded { k, .. } => k,
            ChainRule::TwoState { .. } => 2,
        }
    }

    /// `(state, probability)` successors of state `i`.
    pub fn successors(&self, i: usize) -> [(usize, f64); 2] {
        let m = self.num_states();
        match self.rule {
            ChainRule::TwoState { p } => [(1 - i, p), (i, 1.0 - p)],
            ChainRule::Folded { k, p } => {
                if i == 0 || i == k - 1 {
                    [((i + 1) % m, 1.0), ((i + 1) % m, 0.0)]
                } else {
                    [((i + 1) % m, p), ((i + m - 1) % m, 1.0 - p)]
                }
            }
        }
    }

    pub fn step<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> usize {
        let [(fwd, pf), (other, _)] = self.successors(i);
        if pf >= 1.0 {
            return fwd;
        }
        if rng.random::<f64>() < pf {
            fwd
        } else {
            other
        }
    }

    pub fn transition_matrix(&self) -> DMatrix<f64> {
        let m = self.num_states();
        let mut t = DMatrix::zeros(m, m);
        for i in 0..m {
            for (j, pr) in self.successors(i) {
                t[(i, j)] += pr;
            }
        }
        t
    }
}

/// Where a stochastic schedule starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartState {
    Stationary,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleKind {
    Constant(f64),
    IidGrid(StepsizeGrid),
    IidUniformContinuous { center: f64, range: f64 },
    Cyclic(StepsizeGrid),
    MarkovFolded { grid: StepsizeGrid, p: f64 },
    MarkovTwoState { low: f64, high: f64, p: f64 },
}

/// A stepsize schedule together with its current state.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    kind: ScheduleKind,
    chain: Option<MarkovChain>,
    state: usize,
}

impl Schedule {
    pub fn new(kind: ScheduleKind) -> Result<Self> {
        let chain = match &kind {
            ScheduleKind::Constant(eta) => {
                if !(*eta >= 0.0 && eta.is_finite()) {
                    return Err(Error::InvalidParameter(format!("stepsize {eta} must be >= 0")));
                }
                None
            }
            ScheduleKind::IidGrid(_) => None,
            ScheduleKind::IidUniformContinuous { center, range } => {
                StepsizeGrid::new(*center, *range, 2)?;
                None
            }
            ScheduleKind::Cyclic(grid) => Some(MarkovChain::folded(&build_folded_state_space(grid)?, 1.0)?),
            ScheduleKind::MarkovFolded { grid, p } => {
                Some(MarkovChain::folded(&build_folded_state_space(grid)?, *p)?)
            }
            ScheduleKind::MarkovTwoState { low, high, p } => Some(MarkovChain::two_state(*low, *high, *p)?),
        };
        Ok(Self {
            kind,
            chain,
            state: 0,
        })
    }

    pub fn constant(eta: f64) -> Result<Self> {
        Self::new(ScheduleKind::Constant(eta))
    }

    pub fn iid_grid(grid: StepsizeGrid) -> Result<Self> {
        Self::new(ScheduleKind::IidGrid(grid))
    }

    pub fn iid_uniform(center: f64, range: f64) -> Result<Self> {
        Self::new(ScheduleKind::IidUniformContinuous { center, range })
    }

    pub fn cyclic(grid: StepsizeGrid) -> Result<Self> {
        Self::new(ScheduleKind::Cyclic(grid))
    }

    pub fn markov_folded(grid: StepsizeGrid, p: f64) -> Result<Self> {
        Self::new(ScheduleKind::MarkovFolded { grid, p })
    }

    pub fn markov_two_state(low: f64, high: f64, p: f64) -> Result<Self> {
        Self::new(ScheduleKind::MarkovTwoState { low, high, p })
    }

    pub fn kind(&self) -> &ScheduleKind {
        &self.kind
    }

    /// Underlying finite chain for cyclic and Markov schedules.
    pub fn chain(&self) -> Option<&MarkovChain> {
        self.chain.as_ref()
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn is_stochastic(&self) -> bool {
        !matches!(self.kind, ScheduleKind::Constant(_) | ScheduleKind::Cyclic(_))
    }

    /// Short tag used in reports.
    pub fn tag(&self) -> &'static str {
        match self.kind {
            ScheduleKind::Constant(_) => "constant",
            ScheduleKind::IidGrid(_) => "iid_grid",
            ScheduleKind::IidUniformContinuous { .. } => "iid_uniform",
            ScheduleKind::Cyclic(_) => "cyclic",
            ScheduleKind::MarkovFolded { .. } => "markov",
            ScheduleKind::MarkovTwoState { .. } => "markov_two_state",
        }
    }

    /// Stepsize attached to the current state.
    pub fn current(&self) -> Option<f64> {
        match &self.kind {
            ScheduleKind::Constant(eta) => Some(*eta),
            _ => self.chain.as_ref().map(|c| c.values()[self.state]),
        }
    }

    /// Smallest and largest stepsize the schedule can emit.
    pub fn support(&self) -> (f64, f64) {
        match &self.kind {
            ScheduleKind::Constant(eta) => (*eta, *eta),
            ScheduleKind::IidGrid(g) | ScheduleKind::Cyclic(g) | ScheduleKind::MarkovFolded { grid: g, .. } => {
                (g.lower(), g.upper())
            }
            ScheduleKind::IidUniformContinuous { center, range } => (center - range, center + range),
            ScheduleKind::MarkovTwoState { low, high, .. } => (low.min(*high), low.max(*high)),
        }
    }

    /// Put the chain in state `i`.
    pub fn set_state(&mut self, i: usize) -> Result<()> {
        match &self.chain {
            Some(c) if i < c.num_states() => {
                self.state = i;
                Ok(())
            }
            Some(c) => Err(Error::InvalidParameter(format!(
                "state {i} out of range for {} states",
                c.num_states()
            ))),
            None => Err(Error::InvalidParameter(format!(
                "{} schedule has no chain state",
                self.tag()
            ))),
        }
    }

    /// Draw the current state from the stationary law (no-op for memoryless schedules).
    pub fn start<R: Rng + ?Sized>(&mut self, start: StartState, rng: &mut R) -> Result<()> {
        match (start, &self.chain) {
            (_, None) => Ok(()),
            (StartState::Fixed(i), Some(_)) => self.set_state(i),
            (StartState::Stationary, Some(c)) => {
                let pi = stationary_of_chain(c, StationaryMethod::LinearSolve)?;
                self.state = sample_index(&pi.probabilities, rng);
                Ok(())
            }
        }
    }

    /// Advance the schedule and return the new stepsize.
    pub fn next_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        match &self.kind {
            ScheduleKind::Constant(eta) => *eta,
            ScheduleKind::IidGrid(g) => {
                let j = rng.random_range(1..=g.num_points());
                g.point(j)
            }
            ScheduleKind::IidUniformContinuous { center, range } => {
                center - range + 2.0 * range * rng.random::<f64>()
            }
            _ => {
                let chain = self.chain.as_ref().expect("chain-backed schedule");
                self.state = chain.step(self.state, rng);
                chain.values()[self.state]
            }
        }
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StationaryMethod {
    ClosedForm,
    LinearSolve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistSource {
    ClosedForm,
    LinearSolve,
    Empirical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDist {
    pub probabilities: Vec<f64>,
    pub source: DistSource,
}

impl StationaryDist {
    /// `max_j |(πP)_j − π_j|`.
    pub fn fixed_point_residual(&self, chain: &MarkovChain) -> f64 {
        let pi = DVector::from_column_slice(&self.probabilities);
        let moved = chain.transition_matrix().transpose() * &pi;
        (moved - pi).amax()
    }

    pub fn total_variation(&self, other: &[f64]) -> f64 {
        0.5 * self
            .probabilities
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

pub fn stationary_distribution(schedule: &Schedule, method: StationaryMethod) -> Result<StationaryDist> {
    let chain = schedule.chain().ok_or_else(|| {
        Error::InvalidParameter(format!("{} schedule has no stationary chain", schedule.tag()))
    })?;
    stationary_of_chain(chain, method)
}

pub fn stationary_of_chain(chain: &MarkovChain, method: StationaryMethod) -> Result<StationaryDist> {
    match method {
        StationaryMethod::ClosedForm => closed_form(chain),
        StationaryMethod::LinearSolve => linear_solve(chain),
    }
}

/// Closed form for the folded chain.
///
/// Net probability flow `J` is the same across every edge of the cycle.
/// Balancing it edge by edge gives, with `r = (1 − p)/p`,
/// `π_i = J (1 − r^{K−i}) / (2p − 1)` on the interior of each sweep,
/// `π_1 = π_K = J + (1 − p) π_2`, and the descent mirrors the ascent
/// (`π_{K−1+i} = π_i`). `J` is fixed by normalization.
fn closed_form(chain: &MarkovChain) -> Result<StationaryDist> {
    let m = chain.num_states();
    let p = chain.p();
    let probabilities = match chain.rule {
        ChainRule::TwoState { .. } => vec![0.5, 0.5],
        ChainRule::Folded { k: 2, .. } => vec![0.5; m],
        ChainRule::Folded { k, .. } => {
            if p <= 0.0 {
                return Err(Error::Domain("closed form needs p > 0".into()));
            }
            if (2.0 * p - 1.0).abs() < 1e-12 {
                return Err(Error::SingularParameter);
            }
            let r = (1.0 - p) / p;
            let q = 2.0 * p - 1.0;
            // unnormalized, J = 1; index i is 1-based here
            let interior = |i: usize| (1.0 - r.powi((k - i) as i32)) / q;
            let mut u = vec![0.0; m];
            let end = if k >= 3 { 1.0 + (1.0 - p) * interior(2) } else { 1.0 };
            u[0] = end;
            u[k - 1] = end;
            for i in 2..k {
                u[i - 1] = interior(i);
                u[k - 2 + i] = interior(i);
            }
            let total: f64 = u.iter().sum();
            u.iter().map(|x| x / total).collect()
        }
    };
    Ok(StationaryDist {
        probabilities,
        source: DistSource::ClosedForm,
    })
}

/// Normalized null vector of `Pᵀ − I`.
fn linear_solve(chain: &MarkovChain) -> Result<StationaryDist> {
    let m = chain.num_states();
    let mut a = chain.transition_matrix().transpose() - DMatrix::<f64>::identity(m, m);
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(m);
    rhs[m - 1] = 1.0;
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Domain("stationary system is singular (chain not irreducible)".into()))?;
    if sol.iter().any(|x| !x.is_finite() || *x < -1e-12) {
        return Err(Error::Domain("stationary system is ill-conditioned".into()));
    }
    Ok(StationaryDist {
        probabilities: sol.iter().map(|x| x.max(0.0)).collect(),
        source: DistSource::LinearSolve,
    })
}

/// Empirical state frequencies over `steps` transitions.
pub fn empirical_distribution<R: Rng + ?Sized>(
    chain: &MarkovChain,
    start: usize,
    steps: usize,
    rng: &mut R,
) -> StationaryDist {
    let mut counts = vec![0usize; chain.num_states()];
    let mut s = start;
    for _ in 0..steps {
        s = chain.step(s, rng);
        counts[s] += 1;
    }
    StationaryDist {
        probabilities: counts.iter().map(|&c| c as f64 / steps as f64).collect(),
        source: DistSource::Empirical,
    }
}

/// Stepsizes from the step after the start up to and including the first return.
#[derive(Debug, Clone, PartialEq)]
pub struct RegenerationPath {
    pub start: usize,
    pub states: Vec<usize>,
    pub stepsizes: Vec<f64>,
}

impl RegenerationPath {
    /// Regeneration time `r_1`.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Samples regeneration paths of one chain, with the stationary law precomputed.
#[derive(Debug, Clone)]
pub struct RegenerationSampler {
    chain: MarkovChain,
    stationary: Vec<f64>,
    cap: usize,
}

impl RegenerationSampler {
    pub fn new(schedule: &Schedule) -> Result<Self> {
        let chain = schedule.chain().cloned().ok_or_else(|| {
            Error::InvalidParameter(format!(
                "{} schedule has no finite chain to regenerate",
                schedule.tag()
            ))
        })?;
        Self::from_chain(chain)
    }

    pub fn from_chain(chain: MarkovChain) -> Result<Self> {
        let stationary = stationary_of_chain(&chain, StationaryMethod::LinearSolve)?.probabilities;
        Ok(Self {
            chain,
            stationary,
            cap: DEFAULT_RETURN_CAP,
        })
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    pub fn chain(&self) -> &MarkovChain {
        &self.chain
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn sample<R: Rng + ?Sized>(&self, start: StartState, rng: &mut R) -> Result<RegenerationPath> {
        let start = match start {
            StartState::Stationary => sample_index(&self.stationary, rng),
            StartState::Fixed(i) => {
                if i >= self.chain.num_states() {
                    return Err(Error::InvalidParameter(format!("start state {i} out of range")));
                }
                i
            }
        };
        let mut states = Vec::new();
        let mut s = start;
        loop {
            if states.len() >= self.cap {
                return Err(Error::NonReturn {
                    state: start,
                    cap: self.cap,
                });
            }
            s = self.chain.step(s, rng);
            states.push(s);
            if s == start {
                break;
            }
        }
        let stepsizes = states.iter().map(|&i| self.chain.values()[i]).collect();
        Ok(RegenerationPath {
            start,
            states,
            stepsizes,
        })
    }
}

/// Regeneration path from a stationary start with the default cap.
pub fn sample_regeneration_path<R: Rng + ?Sized>(schedule: &Schedule, rng: &mut R) -> Result<RegenerationPath> {
    RegenerationSampler::new(schedule)?.sample(StartState::Stationary, rng)
}

/// `P(r_1 = k)` for the symmetric two-state chain flipping with probability `p`.
pub fn regeneration_pmf_two_state(p: f64, k: usize) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Domain(format!("p = {p} must lie in (0, 1]")));
    }
    match k {
        0 => Err(Error::Domain("regeneration time k must be >= 1".into())),
        1 => Ok(1.0 - p),
        _ => Ok(p * p * (1.0 - p).powi(k as i32 - 2)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{domain, Streams};

    fn grid(c: f64, r: f64, k: usize) -> StepsizeGrid {
        StepsizeGrid::new(c, r, k).unwrap()
    }

    #[test]
    fn folded_space_k3() {
        let f = build_folded_state_space(&grid(0.5, 0.05, 3)).unwrap();
        let want = [0.45, 0.50, 0.55, 0.50];
        assert_eq!(f.len(), 4);
        for (a, b) in f.states().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn folded_space_zero_range() {
        let f = build_folded_state_space(&grid(0.5, 0.0, 2)).unwrap();
        assert_eq!(f.states(), &[0.5, 0.5]);
    }

    #[test]
    fn folded_space_desk_grid() {
        let f = build_folded_state_space(&grid(0.06, 0.05, 10)).unwrap();
        assert_eq!(f.len(), 18);
        assert!((f.states()[0] - 0.01).abs() < 1e-15);
        assert!((f.states()[9] - 0.11).abs() < 1e-15);
        for i in 2..=9 {
            // 1-based: state i and state 2K - i coincide
            assert_eq!(f.states()[i - 1], f.states()[20 - i - 1]);
        }
    }

    #[test]
    fn grid_rejects_bad_inputs() {
        assert!(matches!(StepsizeGrid::new(0.5, 0.1, 1), Err(Error::InvalidGrid(_))));
        assert!(matches!(StepsizeGrid::new(0.05, 0.05, 3), Err(Error::InvalidGrid(_))));
        assert!(matches!(StepsizeGrid::new(0.5, -0.1, 3), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn grid_identities() {
        let g = grid(0.3, 0.09, 7);
        assert!((g.range() - (g.num_points() - 1) as f64 * g.spacing() / 2.0).abs() < 1e-15);
        assert_eq!(g.point(1), 0.3 - 0.09);
        assert_eq!(g.point(7), 0.3 + 0.09);
    }

    #[test]
    fn constant_schedule_is_constant() {
        let mut s = Schedule::constant(0.1).unwrap();
        let mut rng = Streams::new(1).stream(domain::GENERIC, 0);
        assert!((0..100).all(|_| s.next_step(&mut rng) == 0.1));
    }

    #[test]
    fn p_one_cycles_deterministically() {
        let g = grid(0.5, 0.05, 3);
        let c = g.points();
        let mut s = Schedule::markov_folded(g, 1.0).unwrap();
        let mut rng = Streams::new(1).stream(domain::GENERIC, 0);
        let seq: Vec<f64> = (0..8).map(|_| s.next_step(&mut rng)).collect();
        let want = [c[1], c[2], c[1], c[0], c[1], c[2], c[1], c[0]];
        assert_eq!(seq, want);
    }

    #[test]
    fn two_state_occupation_is_balanced() {
        let mut s = Schedule::markov_two_state(0.1, 0.2, 0.6).unwrap();
        let mut rng = Streams::new(7).stream(domain::GENERIC, 0);
        let n = 1_000_000;
        let lows = (0..n).filter(|_| s.next_step(&mut rng) == 0.1).count();
        assert!((lows as f64 / n as f64 - 0.5).abs() < 0.002);
    }

    #[test]
    fn emitted_stepsizes_stay_in_range() {
        let g = grid(0.5, 0.2, 5);
        let mut rng = Streams::new(3).stream(domain::GENERIC, 0);
        for mut s in [
            Schedule::iid_grid(g).unwrap(),
            Schedule::iid_uniform(0.5, 0.2).unwrap(),
            Schedule::cyclic(g).unwrap(),
            Schedule::markov_folded(g, 0.3).unwrap(),
        ] {
            for _ in 0..1000 {
                let e = s.next_step(&mut rng);
                assert!((0.3 - 1e-12..=0.7 + 1e-12).contains(&e));
            }
        }
    }

    #[test]
    fn p_one_is_uniform() {
        for k in [2, 3, 6] {
            let s = Schedule::markov_folded(grid(0.5, 0.1, k), 1.0).unwrap();
            let pi = stationary_distribution(&s, StationaryMethod::ClosedForm).unwrap();
            let m = 2 * k - 2;
            assert!(pi.probabilities.iter().all(|&x| (x - 1.0 / m as f64).abs() < 1e-14));
        }
    }

    #[test]
    fn two_state_is_half_half() {
        for p in [0.1, 0.5, 1.0] {
            let s = Schedule::markov_two_state(0.1, 0.2, p).unwrap();
            for method in [StationaryMethod::ClosedForm, StationaryMethod::LinearSolve] {
                let pi = stationary_distribution(&s, method).unwrap();
                assert!((pi.probabilities[0] - 0.5).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn closed_form_matches_linear_solve() {
        let s = Schedule::markov_folded(grid(0.5, 0.1, 3), 0.6).unwrap();
        let a = stationary_distribution(&s, StationaryMethod::ClosedForm).unwrap();
        let b = stationary_distribution(&s, StationaryMethod::LinearSolve).unwrap();
        for (x, y) in a.probabilities.iter().zip(&b.probabilities) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!(a.fixed_point_residual(s.chain().unwrap()) < 1e-12);
    }

    #[test]
    fn half_p_closed_form_is_singular() {
        let s = Schedule::markov_folded(grid(0.5, 0.1, 4), 0.5).unwrap();
        assert_eq!(
            stationary_distribution(&s, StationaryMethod::ClosedForm),
            Err(Error::SingularParameter)
        );
        let pi = stationary_distribution(&s, StationaryMethod::LinearSolve).unwrap();
        assert!((pi.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cyclic_return_time_is_m() {
        let s = Schedule::cyclic(grid(0.5, 0.1, 5)).unwrap();
        let sampler = RegenerationSampler::new(&s).unwrap();
        let mut rng = Streams::new(2).stream(domain::GENERIC, 0);
        for start in 0..8 {
            let path = sampler.sample(StartState::Fixed(start), &mut rng).unwrap();
            assert_eq!(path.len(), 8);
            assert_eq!(*path.states.last().unwrap(), start);
        }
    }

    #[test]
    fn nonreturn_cap() {
        // p = 0: from an interior state the chain drifts down and then bounces
        // between the two lowest states forever
        let s = Schedule::markov_folded(grid(0.5, 0.1, 4), 0.0).unwrap();
        let sampler = RegenerationSampler {
            chain: s.chain().unwrap().clone(),
            stationary: vec![1.0 / 6.0; 6],
            cap: DEFAULT_RETURN_CAP,
        }
        .with_cap(1000);
        let mut rng = Streams::new(2).stream(domain::GENERIC, 0);
        let err = sampler.sample(StartState::Fixed(2), &mut rng).unwrap_err();
        assert!(matches!(err, Error::NonReturn { state: 2, cap: 1000 }));
    }

    #[test]
    fn pmf_values() {
        assert_eq!(regeneration_pmf_two_state(1.0, 2).unwrap(), 1.0);
        assert!((regeneration_pmf_two_state(0.5, 3).unwrap() - 0.125).abs() < 1e-15);
        let total: f64 = (1..=10_000).map(|k| regeneration_pmf_two_state(0.2, k).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(regeneration_pmf_two_state(0.5, 0).is_err());
        assert!(regeneration_pmf_two_state(0.0, 1).is_err());
    }
}
