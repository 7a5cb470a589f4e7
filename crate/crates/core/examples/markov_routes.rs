//! The three Markov-schedule routes agree: two-state closed form, linear system and regeneration Monte Carlo.
use tailscope::kernel::GaussianDataModel;
use tailscope::schedule::Schedule;
use tailscope::tailindex::{find_tail_index, KernelContext, ScheduleKernel, DEFAULT_S_MAX};

fn main() -> tailscope::Result<()> {
    let ctx = KernelContext::quadrature(GaussianDataModel::new(1.0, 4, 2)?, 200_000, 11)?;
    let (low, high, p) = (0.3, 0.7, 0.4);
    let schedule = Schedule::markov_two_state(low, high, p)?;
    let routes = [
        ("closed form", ScheduleKernel::markov_two_state(low, high, p, &ctx)?),
        ("linear system", ScheduleKernel::markov_linear_system(&schedule, &ctx)?),
        ("regen mc", ScheduleKernel::markov_regen_mc(&schedule, 100_000, 11, &ctx)?),
    ];
    for (name, kernel) in &routes {
        let r = find_tail_index(kernel, DEFAULT_S_MAX, 1e-6)?;
        println!("{name:>14}: alpha = {:.4} (se {:.1e})", r.alpha, r.alpha_stderr);
    }
    Ok(())
}
