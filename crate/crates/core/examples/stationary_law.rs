//! Stationary law of the folded stepsize chain, closed form against a long simulated path.
use tailscope::rng::{domain, Streams};
use tailscope::schedule::{
    build_folded_state_space, empirical_distribution, stationary_of_chain, MarkovChain, StationaryMethod, StepsizeGrid,
};

fn main() -> tailscope::Result<()> {
    let space = build_folded_state_space(&StepsizeGrid::new(0.5, 0.2, 5)?)?;
    let chain = MarkovChain::folded(&space, 0.35)?;
    let exact = stationary_of_chain(&chain, StationaryMethod::ClosedForm)?;
    let solved = stationary_of_chain(&chain, StationaryMethod::LinearSolve)?;
    let mut rng = Streams::new(5).stream(domain::SCHEDULE, 0);
    let emp = empirical_distribution(&chain, 0, 2_000_000, &mut rng);
    println!("state  eta     closed   solved   simulated");
    for (i, eta) in space.states().iter().enumerate() {
        println!(
            "{i:>5}  {eta:.3}  {:.5}  {:.5}  {:.5}",
            exact.probabilities[i], solved.probabilities[i], emp.probabilities[i]
        );
    }
    println!("fixed-point residual {:.1e}, TV to simulation {:.4}", exact.fixed_point_residual(&chain), exact.total_variation(&emp.probabilities));
    Ok(())
}
