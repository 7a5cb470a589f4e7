//! Simulate an SGD ensemble, save it in both formats and read it back.
use tailscope::schedule::{Schedule, StepsizeGrid};
use tailscope::sgdsim::{io, run_ensemble, RegressionProblem, SGDRunConfig};

fn main() -> tailscope::Result<()> {
    let problem = RegressionProblem::new(4, 1.0, 1.0, 1.0, 21)?;
    let schedule = Schedule::cyclic(StepsizeGrid::new(0.35, 0.1, 4)?)?;
    let cfg = SGDRunConfig::new(2, schedule, 500, 200, 21)?;
    let ens = run_ensemble(&problem, &cfg, 1000)?;
    println!("{} runs x {} coordinates, {} censored", ens.rows(), ens.cols(), ens.censored());
    let dir = std::env::temp_dir();
    let (bin, csv) = (dir.join("tailscope_ensemble.tsem"), dir.join("tailscope_ensemble.csv"));
    io::write_binary(&ens, &bin)?;
    io::write_csv(&ens, &csv)?;
    assert_eq!(io::read_binary(&bin)?, ens);
    assert_eq!(io::read_csv(&csv)?, ens);
    println!("round trip ok: {} and {}", bin.display(), csv.display());
    Ok(())
}
