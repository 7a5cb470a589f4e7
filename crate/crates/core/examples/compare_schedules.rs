//! Constant, i.i.d., cyclic and Markov schedules on one stepsize grid.
use tailscope::kernel::GaussianDataModel;
use tailscope::tailindex::{compare_schedules, KernelContext};

fn main() -> tailscope::Result<()> {
    let ctx = KernelContext::quadrature(GaussianDataModel::new(1.0, 5, 5)?, 200_000, 3)?;
    let cmp = compare_schedules(0.45, 0.15, 4, &[0.2, 0.5, 0.8, 1.0], &ctx, 1e-6)?;
    println!("constant {:.4}", cmp.constant.alpha);
    println!("iid      {:.4}", cmp.iid.alpha);
    println!("cyclic   {:.4}", cmp.cyclic.alpha);
    for m in &cmp.markov {
        println!("markov p={:.1} {:.4}  ordering holds: {}", m.p, m.alpha.alpha, m.ordering_holds);
    }
    println!("cyclic below constant: {}, iid below cyclic: {}", cmp.cyclic_below_constant, cmp.iid_below_cyclic);
    Ok(())
}
