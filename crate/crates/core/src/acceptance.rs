//! The acceptance suite: one check per criterion, each reporting a single
//! pass/fail line. Shared by `tailscope validate` and the acceptance test target.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::cli::commands;
use crate::cli::config::ExperimentConfig;
use crate::cli::report::render_csv;
use crate::error::Result;
use crate::estimate::{estimate_alpha_blocks, estimate_alpha_hill, project_and_estimate, sample_stable, BlockEstimatorConfig, Directions, StableSpec};
use crate::kernel::GaussianDataModel;
use crate::rng::{domain, Streams};
use crate::schedule::{
    build_folded_state_space, empirical_distribution, regeneration_pmf_two_state, stationary_of_chain, MarkovChain,
    RegenerationSampler, Schedule, StartState, StationaryMethod, StepsizeGrid,
};
use crate::sgdsim::{coupled_contraction_probe, moment_bound_probe, run_ensemble, RegressionProblem, SGDRunConfig};
use crate::tailindex::{
    compare_schedules, find_tail_index, tolerance, KernelContext, ScheduleKernel, TailIndexResult, DEFAULT_S_MAX,
};

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 1729;

type Check = Result<(bool, String)>;

pub struct Criterion {
    pub id: usize,
    pub name: &'static str,
    check: fn(u64) -> Check,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {} {} ({:.1}s): {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.seconds,
            self.detail
        )
    }
}

impl Criterion {
    /// Runs the check; an error counts as a failure with the error as detail.
    pub fn run(&self, seed: u64) -> Outcome {
        let t = Instant::now();
        let (passed, detail) = match (self.check)(seed) {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        Outcome {
            id: self.id,
            name: self.name,
            passed,
            detail,
            seconds: t.elapsed().as_secs_f64(),
        }
    }
}

pub fn criteria() -> &'static [Criterion] {
    const LIST: &[Criterion] = &[
        Criterion { id: 1, name: "boundary calibration", check: boundary_calibration },
        Criterion { id: 2, name: "route agreement", check: route_agreement },
        Criterion { id: 3, name: "cyclic/markov collapse", check: cyclic_markov_collapse },
        Criterion { id: 4, name: "ordering law", check: ordering_law },
        Criterion { id: 5, name: "monotonicity suite", check: monotonicity_suite },
        Criterion { id: 6, name: "simulated schedule sweep", check: simulated_sweep },
        Criterion { id: 7, name: "markov chain structure", check: chain_structure },
        Criterion { id: 8, name: "estimator recovery", check: estimator_recovery },
        Criterion { id: 9, name: "contraction and moment bounds", check: probe_bounds },
        Criterion { id: 10, name: "sweep determinism", check: sweep_determinism },
    ];
    LIST
}

pub fn run_all(seed: u64) -> Vec<Outcome> {
    criteria().iter().map(|c| c.run(seed)).collect()
}

fn quad_ctx(sigma: f64, b: usize, d: usize, seed: u64) -> Result<KernelContext> {
    KernelContext::quadrature(GaussianDataModel::new(sigma, b, d)?, 200_000, seed)
}

fn root(kernel: &ScheduleKernel) -> Result<TailIndexResult> {
    find_tail_index(kernel, DEFAULT_S_MAX, tolerance())
}

fn boundary_calibration(seed: u64) -> Check {
    let t = Instant::now();
    let eta = 2.0 / 3.0;
    let r = root(&ScheduleKernel::constant(eta, &quad_ctx(1.0, 1, 1, seed)?)?)?;
    let problem = RegressionProblem::new(1, 1.0, 1.0, 1.0, seed)?;
    let cfg = SGDRunConfig::new(1, Schedule::constant(eta)?, 2000, 1000, seed)?;
    let ens = run_ensemble(&problem, &cfg, 5000)?;
    let est = project_and_estimate(&ens, &Directions::Coordinates, None)?.pooled;
    // informational only: Hill on the median-centred averages
    let col: Vec<f64> = ens.iter_rows().map(|r| r[0]).collect();
    let med = crate::stats::median(&col);
    let centred: Vec<f64> = col.iter().map(|x| x - med).collect();
    let hill = estimate_alpha_hill(&centred, centred.len() / 20)?;
    let secs = t.elapsed().as_secs_f64();
    let ok = (1.95..=2.05).contains(&r.alpha) && (1.85..=2.15).contains(&est) && secs < 120.0;
    Ok((
        ok,
        format!("kernel alpha {:.4}, simulated alpha {est:.4} (hill {hill:.3}), {secs:.0}s", r.alpha),
    ))
}

/// Absolute agreement expected of deterministic evaluations; regeneration
/// means over 10^5 identical paths carry summation error near 1e-12.
const NUMERICAL_FLOOR: f64 = 1e-10;

fn route_agreement(seed: u64) -> Check {
    let t = Instant::now();
    let quad = quad_ctx(1.0, 10, 10, seed)?;
    let mc = KernelContext::monte_carlo(GaussianDataModel::new(1.0, 10, 10)?, 1_000_000, seed)?;
    let sched = Schedule::markov_folded(StepsizeGrid::new(0.06, 0.05, 5)?, 0.7)?;
    let linear = ScheduleKernel::markov_linear_system(&sched, &quad)?;
    let regen = ScheduleKernel::markov_regen_mc(&sched, 100_000, seed, &quad)?;
    let linear_mc = ScheduleKernel::markov_linear_system(&sched, &mc)?;
    let mut worst: f64 = 0.0;
    for s in [0.5, 1.0, 1.5, 2.0] {
        let v = [linear.evaluate(s)?, regen.evaluate(s)?, linear_mc.evaluate(s)?];
        for i in 0..3 {
            for j in i + 1..3 {
                let se = v[i].stderr.hypot(v[j].stderr);
                worst = worst.max((v[i].value - v[j].value).abs() / (3.0 * se + NUMERICAL_FLOOR));
            }
        }
    }
    let mut worst_two: f64 = 0.0;
    for p in [0.3, 0.5, 0.8, 1.0] {
        let closed = ScheduleKernel::markov_two_state(0.01, 0.11, p, &quad)?;
        let mc_kernel = ScheduleKernel::markov_regen_mc(&Schedule::markov_two_state(0.01, 0.11, p)?, 100_000, seed, &quad)?;
        for s in [0.5, 1.0, 1.5, 2.0] {
            let (a, b) = (closed.evaluate(s)?, mc_kernel.evaluate(s)?);
            worst_two = worst_two.max((a.value - b.value).abs() / (3.0 * a.stderr.hypot(b.stderr) + NUMERICAL_FLOOR));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = worst <= 1.0 && worst_two <= 1.0 && secs < 60.0;
    Ok((
        ok,
        format!("max |diff|/(3 se): three routes {worst:.3}, two-state vs regen {worst_two:.3}, {secs:.0}s"),
    ))
}

fn cyclic_markov_collapse(seed: u64) -> Check {
    let ctx = quad_ctx(1.0, 10, 10, seed)?;
    let grid = StepsizeGrid::new(0.8, 0.05, 10)?;
    let markov = ScheduleKernel::markov_linear_system(&Schedule::markov_folded(grid, 1.0)?, &ctx)?;
    let cyclic = ScheduleKernel::cyclic(&grid, &ctx)?;
    // the cyclic kernel is per step, the regeneration kernel per cycle of m steps
    let m = build_folded_state_space(&grid)?.len() as i32;
    let mut worst: f64 = 0.0;
    for s in [0.5, 1.0, 2.0, 4.0, 5.5] {
        let (a, b) = (markov.evaluate(s)?.value, cyclic.evaluate(s)?.value.powi(m));
        worst = worst.max((a - b).abs() / b.abs().max(1.0));
    }
    let (am, ac) = (root(&markov)?.alpha, root(&cyclic)?.alpha);
    let ok = worst <= 1e-10 && (am - ac).abs() <= tolerance();
    Ok((ok, format!("max kernel gap {worst:.2e}, alpha markov {am:.5} vs cyclic {ac:.5}")))
}

fn ordering_law(seed: u64) -> Check {
    let model = GaussianDataModel::new(1.0, 1, 10)?;
    let contexts = [
        ("quadrature", KernelContext::quadrature(model, 200_000, seed)?),
        ("monte carlo", KernelContext::monte_carlo(model, 1_000_000, seed)?),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, ctx) in &contexts {
        let cmp = compare_schedules(0.15, 0.05, 2, &[0.75, 0.25, 0.5], ctx, tolerance())?;
        ok &= cmp.cyclic_below_constant && cmp.markov.iter().all(|r| r.ordering_holds);
        let m: Vec<String> = cmp.markov.iter().map(|r| format!("r({})={:.4}", r.p, r.alpha.alpha)).collect();
        parts.push(format!(
            "{name}: c={:.4} m={:.4} iid={:.4} {}",
            cmp.constant.alpha,
            cmp.cyclic.alpha,
            cmp.iid.alpha,
            m.join(" ")
        ));
    }
    Ok((ok, parts.join("; ")))
}

/// `alpha` of each kernel in order, and whether consecutive pairs move in
/// the expected direction by more than 3 combined stderr. Quadrature roots
/// have zero stderr, so a relative floor of 1e-8 stands in for their
/// numerical error.
fn monotone(kernels: &[ScheduleKernel], increasing: bool) -> Result<(bool, Vec<f64>)> {
    let rs: Vec<TailIndexResult> = kernels.iter().map(root).collect::<Result<_>>()?;
    let ok = rs.windows(2).all(|w| {
        let gap = if increasing { w[1].alpha - w[0].alpha } else { w[0].alpha - w[1].alpha };
        let se = |r: &TailIndexResult| if r.alpha_stderr.is_finite() { r.alpha_stderr } else { 0.0 };
        gap > 3.0 * se(&w[0]).hypot(se(&w[1])) + 1e-8 * w[0].alpha
    });
    Ok((ok, rs.iter().map(|r| r.alpha).collect()))
}

fn family(eta_hat: f64, range: f64, ctx: &KernelContext) -> Result<Vec<(&'static str, ScheduleKernel)>> {
    let grid = StepsizeGrid::new(eta_hat, range, 10)?;
    Ok(vec![
        ("constant", ScheduleKernel::constant(eta_hat, ctx)?),
        ("iid", ScheduleKernel::iid_grid(&grid, ctx)?),
        ("cyclic", ScheduleKernel::cyclic(&grid, ctx)?),
        ("markov", ScheduleKernel::markov_linear_system(&Schedule::markov_folded(grid, 0.6)?, ctx)?),
    ])
}

fn monotonicity_suite(seed: u64) -> Check {
    let fmt = |v: &[f64]| v.iter().map(|a| format!("{a:.5}")).collect::<Vec<_>>().join(" ");
    let mut ok = true;
    let mut parts = Vec::new();
    // b and d: every schedule at η̂ = 0.6, R = 0.05
    for (label, dims, increasing) in [("b", [(5, 10), (10, 10), (15, 10)], true), ("d", [(10, 5), (10, 10), (10, 20)], false)] {
        let ctxs: Vec<KernelContext> = dims.iter().map(|&(b, d)| quad_ctx(1.0, b, d, seed)).collect::<Result<_>>()?;
        let fams: Vec<_> = ctxs.iter().map(|c| family(0.6, 0.05, c)).collect::<Result<_>>()?;
        for i in 0..4 {
            let ks: Vec<ScheduleKernel> = fams.iter().map(|f| f[i].1.clone()).collect();
            let (good, a) = monotone(&ks, increasing)?;
            ok &= good;
            parts.push(format!("{label}/{}: {}", fams[0][i].0, fmt(&a)));
        }
    }
    let ctx = quad_ctx(1.0, 10, 10, seed)?;
    let fams: Vec<_> = [0.0, 0.02, 0.05].iter().map(|&r| family(0.8, r, &ctx)).collect::<Result<_>>()?;
    for i in 1..4 {
        let ks: Vec<ScheduleKernel> = fams.iter().map(|f| f[i].1.clone()).collect();
        let (good, a) = monotone(&ks, false)?;
        ok &= good;
        parts.push(format!("R/{}: {}", fams[0][i].0, fmt(&a)));
    }
    let grid = StepsizeGrid::new(0.8, 0.05, 10)?;
    let ks: Vec<ScheduleKernel> = [0.6, 0.8, 1.0]
        .iter()
        .map(|&p| ScheduleKernel::markov_linear_system(&Schedule::markov_folded(grid, p)?, &ctx))
        .collect::<Result<_>>()?;
    let (good, a) = monotone(&ks, true)?;
    ok &= good;
    parts.push(format!("p/markov: {}", fmt(&a)));
    Ok((ok, parts.join("; ")))
}

/// Grid of centres for the simulated sweep. Every kernel-route α on it is
/// below 2, where the stable estimator can resolve differences.
pub const SIMULATED_SWEEP_ETAS: [f64; 5] = [0.96, 0.97, 0.98, 0.99, 1.0];

fn simulated_sweep(seed: u64) -> Check {
    let t = Instant::now();
    let problem = RegressionProblem::new(10, 3.0, 1.0, 3.0, seed)?;
    let names = ["constant", "uniform", "cyclic", "markov"];
    let mut est = vec![Vec::new(); names.len()];
    for &eta in &SIMULATED_SWEEP_ETAS {
        let grid = StepsizeGrid::new(eta, 0.05, 10)?;
        let schedules = [
            Schedule::constant(eta)?,
            Schedule::iid_grid(grid)?,
            Schedule::cyclic(grid)?,
            Schedule::markov_folded(grid, 0.6)?,
        ];
        for (i, s) in schedules.into_iter().enumerate() {
            let cfg = SGDRunConfig::new(10, s, 1000, 500, seed)?;
            let ens = run_ensemble(&problem, &cfg, 2000)?;
            est[i].push(project_and_estimate(&ens, &Directions::Coordinates, None)?.pooled);
        }
    }
    let non_increasing: Vec<bool> = est.iter().map(|e| e.windows(2).all(|w| w[1] <= w[0])).collect();
    let wins = (0..SIMULATED_SWEEP_ETAS.len()).filter(|&j| est[1][j] < est[2][j]).count();
    let secs = t.elapsed().as_secs_f64();
    let ok = non_increasing.iter().all(|&b| b) && wins >= 4 && secs < 900.0;
    let series: Vec<String> = names
        .iter()
        .zip(&est)
        .map(|(n, e)| format!("{n} [{}]", e.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" ")))
        .collect();
    Ok((
        ok,
        format!("{}; uniform < cyclic at {wins}/5; {secs:.0}s", series.join(" ")),
    ))
}

/// Mean and second moment of the return time to `j`, by first-step analysis.
fn return_time_moments(chain: &MarkovChain, j: usize) -> Option<(f64, f64)> {
    let m = chain.num_states();
    let t = chain.transition_matrix();
    let others: Vec<usize> = (0..m).filter(|&i| i != j).collect();
    let n = others.len();
    let q = DMatrix::from_fn(n, n, |a, b| t[(others[a], others[b])]);
    let lu = (DMatrix::<f64>::identity(n, n) - &q).lu();
    let hit = lu.solve(&DVector::from_element(n, 1.0))?;
    let hit2 = lu.solve(&(DVector::from_element(n, 1.0) + 2.0 * &q * &hit))?;
    let (mut e1, mut e2) = (t[(j, j)], t[(j, j)]);
    for (a, &i) in others.iter().enumerate() {
        e1 += t[(j, i)] * (1.0 + hit[a]);
        e2 += t[(j, i)] * (1.0 + 2.0 * hit[a] + hit2[a]);
    }
    Some((e1, e2))
}

fn chain_structure(seed: u64) -> Check {
    let streams = Streams::new(seed);
    let mut max_pi_gap: f64 = 0.0;
    let mut max_tv: f64 = 0.0;
    let mut max_kac: f64 = 0.0;
    let mut max_kac_exact: f64 = 0.0;
    let mut idx = 0;
    for k in [3, 5, 10] {
        let space = build_folded_state_space(&StepsizeGrid::new(0.5, 0.1, k)?)?;
        for p in [0.3, 0.6, 0.9] {
            let chain = MarkovChain::folded(&space, p)?;
            let closed = stationary_of_chain(&chain, StationaryMethod::ClosedForm)?;
            let solved = stationary_of_chain(&chain, StationaryMethod::LinearSolve)?;
            for (a, b) in closed.probabilities.iter().zip(&solved.probabilities) {
                max_pi_gap = max_pi_gap.max((a - b).abs());
            }
            let mut rng = streams.stream(domain::GENERIC, idx);
            idx += 1;
            // the sweeps only exchange mass through the turning points, so
            // mixing is slow at small p
            let emp = empirical_distribution(&chain, 0, 100_000_000, &mut rng);
            max_tv = max_tv.max(closed.total_variation(&emp.probabilities));
            for (j, &pj) in closed.probabilities.iter().enumerate() {
                let (e1, e2) = return_time_moments(&chain, j)
                    .ok_or_else(|| crate::error::Error::Degenerate("singular return-time system".into()))?;
                max_kac_exact = max_kac_exact.max((e1 * pj - 1.0).abs());
                // enough returns that 2% is at least 3.5 standard errors
                let cv = (e2 - e1 * e1).max(0.0).sqrt() / e1;
                let n = ((3.5 * cv / 0.02).powi(2).ceil() as usize).max(2000);
                let mut total = 0u64;
                for _ in 0..n {
                    let mut s = chain.step(j, &mut rng);
                    total += 1;
                    while s != j {
                        s = chain.step(s, &mut rng);
                        total += 1;
                    }
                }
                max_kac = max_kac.max((total as f64 / n as f64 * pj - 1.0).abs());
            }
        }
    }
    // P(r_1 = k) on the two-state chain
    let mut min_pvalue: f64 = 1.0;
    for p in [0.3, 0.6, 0.9] {
        let sampler = RegenerationSampler::new(&Schedule::markov_two_state(0.01, 0.11, p)?)?;
        let mut rng = streams.stream(domain::GENERIC, 1000 + idx);
        idx += 1;
        let n = 100_000;
        let mut counts = std::collections::BTreeMap::new();
        for _ in 0..n {
            *counts.entry(sampler.sample(StartState::Stationary, &mut rng)?.len()).or_insert(0usize) += 1;
        }
        // bins 1..=kmax with expected count >= 5, then a pooled tail
        let mut kmax = 1;
        while n as f64 * regeneration_pmf_two_state(p, kmax + 1)? >= 5.0 {
            kmax += 1;
        }
        let mut stat = 0.0;
        let mut head = 0.0;
        for kk in 1..=kmax {
            let e = n as f64 * regeneration_pmf_two_state(p, kk)?;
            let o = *counts.get(&kk).unwrap_or(&0) as f64;
            stat += (o - e).powi(2) / e;
            head += e;
        }
        let tail_e = n as f64 - head;
        let tail_o = counts.range(kmax + 1..).map(|(_, c)| *c).sum::<usize>() as f64;
        let mut bins = kmax;
        if tail_e >= 5.0 {
            stat += (tail_o - tail_e).powi(2) / tail_e;
            bins += 1;
        }
        let dist = ChiSquared::new((bins - 1) as f64).expect("positive degrees of freedom");
        min_pvalue = min_pvalue.min(dist.sf(stat));
    }
    let ok = max_pi_gap <= 1e-10 && max_tv <= 0.01 && max_kac <= 0.02 && max_kac_exact <= 1e-8 && min_pvalue > 1e-3;
    Ok((
        ok,
        format!(
            "pi gap {max_pi_gap:.1e}, occupancy TV {max_tv:.4}, Kac rel err {max_kac:.4} \
             (exact {max_kac_exact:.1e}), r1 chi-square min p {min_pvalue:.3}"
        ),
    ))
}

fn estimator_recovery(seed: u64) -> Check {
    let streams = Streams::new(seed);
    let n = 100_000;
    let cfg = BlockEstimatorConfig::for_len(n)?;
    let mut est = Vec::new();
    let mut ok = true;
    let mut scale_gap: f64 = 0.0;
    for (i, alpha) in [1.2, 1.5, 1.8, 2.0].into_iter().enumerate() {
        let x = sample_stable(&StableSpec::new(alpha, 1.0)?, n, &mut streams.stream(domain::STABLE, i as u64));
        let a = estimate_alpha_blocks(&x, cfg)?;
        ok &= (a.alpha - alpha).abs() <= 0.1;
        est.push(a.alpha);
        let scaled: Vec<f64> = x.iter().map(|v| v * 37.5).collect();
        scale_gap = scale_gap.max((estimate_alpha_blocks(&scaled, cfg)?.raw - a.raw).abs());
    }
    ok &= est.windows(2).all(|w| w[0] < w[1]);
    let mut rng = streams.stream(domain::GENERIC, 0);
    let c = rng.random_range(0.5..5.0);
    let constant = estimate_alpha_blocks(&vec![c; n], cfg)?.alpha;
    ok &= scale_gap <= 1e-12 && (constant - 1.0).abs() <= 1e-12;
    Ok((
        ok,
        format!(
            "estimates {} for 1.2/1.5/1.8/2.0, scale gap {scale_gap:.1e}, constant input {constant}",
            est.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join("/")
        ),
    ))
}

fn probe_bounds(seed: u64) -> Check {
    let problem = RegressionProblem::new(10, 3.0, 1.0, 3.0, seed)?;
    let ctx = quad_ctx(1.0, 10, 10, seed)?;
    let cfg = SGDRunConfig::new(10, Schedule::constant(0.05)?, 200, 200, seed)?;
    let mut ok = true;
    let mut parts = Vec::new();
    let x0 = vec![0.0; 10];
    let x1 = vec![1.0; 10];
    for p in [0.5, 1.0] {
        let coupled = coupled_contraction_probe(&problem, &cfg, &ctx, p, 200, 2000, &x0, &x1)?;
        let moment = moment_bound_probe(&problem, &cfg, &ctx, p, 200, 2000)?;
        let z = |pts: &[crate::sgdsim::ProbePoint]| {
            pts.iter()
                .map(|q| (q.empirical - q.bound) / q.stderr.hypot(q.bound_stderr).max(f64::MIN_POSITIVE))
                .fold(f64::NEG_INFINITY, f64::max)
        };
        ok &= coupled.iter().all(|q| q.holds()) && moment.iter().all(|q| q.holds());
        parts.push(format!(
            "p={p}: max excess over bound {:.2} se (coupling), {:.2} se (moment)",
            z(&coupled),
            z(&moment)
        ));
    }
    Ok((ok, parts.join("; ")))
}

/// Small sweep used for the determinism check.
pub const DETERMINISM_CONFIG: &str = "\
[model]
batch = 10
dim = 10
[schedule]
variant = constant, cyclic, markov
range = 0.05
k = 4
p = 0.7
[sweep]
parameter = eta_hat
values = 0.4, 0.5, 0.6
[compute]
n_samples = 100000
n_paths = 20000
routes = kernel, regen_mc
";

fn sweep_determinism(seed: u64) -> Check {
    let cfg = ExperimentConfig::parse(DETERMINISM_CONFIG, Some(seed))?;
    let run = |threads: usize| -> Result<String> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| crate::error::Error::Config(e.to_string()))?;
        pool.install(|| commands::sweep(&cfg)).map(|r| render_csv(&r.rows, None))
    };
    let (a, b) = (run(1)?, run(4)?);
    let rows = a.lines().count() - 1;
    Ok((a == b, format!("{rows} rows, {} bytes, identical across 1 and 4 workers: {}", a.len(), a == b)))
}
