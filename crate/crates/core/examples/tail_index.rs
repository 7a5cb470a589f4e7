//! Tail index of constant-stepsize SGD on Gaussian least squares, across a few stepsizes.
use tailscope::kernel::GaussianDataModel;
use tailscope::tailindex::{find_tail_index, threshold_report, KernelContext, ScheduleKernel, DEFAULT_S_MAX};
use tailscope::schedule::Schedule;

fn main() -> tailscope::Result<()> {
    let model = GaussianDataModel::new(1.0, 1, 1)?;
    let ctx = KernelContext::quadrature(model, 200_000, 7)?;
    println!("eta     alpha     rho        c      regime");
    for eta in [0.3, 0.5, 2.0 / 3.0, 0.8, 1.0] {
        let kernel = ScheduleKernel::constant(eta, &ctx)?;
        let t = threshold_report(&Schedule::constant(eta)?, &model, 1e-3)?;
        match find_tail_index(&kernel, DEFAULT_S_MAX, 1e-6) {
            Ok(r) => println!("{eta:.2}  {:8.4}  {:+.4}  {:6.3}  {}", r.alpha, r.rho, t.c_value, t.regime.name()),
            Err(e) => println!("{eta:.2}  refused: {e}"),
        }
    }
    Ok(())
}
