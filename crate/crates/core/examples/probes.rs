//! Coupled contraction and moment-bound probes against their kernel bounds.
use tailscope::schedule::Schedule;
use tailscope::sgdsim::{coupled_contraction_probe, moment_bound_probe, RegressionProblem, SGDRunConfig};
use tailscope::tailindex::KernelContext;

fn main() -> tailscope::Result<()> {
    let problem = RegressionProblem::new(3, 2.0, 1.0, 2.0, 8)?;
    let cfg = SGDRunConfig::new(4, Schedule::constant(0.1)?, 50, 50, 8)?;
    let ctx = KernelContext::quadrature(problem.kernel_model(4)?, 100_000, 8)?;
    let coupled = coupled_contraction_probe(&problem, &cfg, &ctx, 1.0, 50, 1000, &[3.0, 0.0, 0.0], &[0.0, 0.0, 0.0])?;
    let moment = moment_bound_probe(&problem, &cfg, &ctx, 0.5, 50, 1000)?;
    println!("k    coupled (bound)        moment (bound)");
    for (c, m) in coupled.iter().zip(&moment).filter(|(c, _)| c.k % 10 == 0 || c.k == 1) {
        println!(
            "{:<3}  {:.4} ({:.4}) {}   {:.4} ({:.4}) {}",
            c.k, c.empirical, c.bound, if c.holds() { "ok" } else { "!!" }, m.empirical, m.bound, if m.holds() { "ok" } else { "!!" }
        );
    }
    Ok(())
}
