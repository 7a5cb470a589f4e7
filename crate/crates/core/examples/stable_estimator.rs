//! Block log-moment estimator and Hill estimator on symmetric stable samples.
use tailscope::estimate::{estimate_alpha_blocks, estimate_alpha_hill, sample_stable, BlockEstimatorConfig, StableSpec};
use tailscope::rng::{domain, Streams};

fn main() -> tailscope::Result<()> {
    let streams = Streams::new(99);
    println!("alpha  block   hill");
    for (i, alpha) in [0.8, 1.2, 1.5, 1.8].into_iter().enumerate() {
        let x = sample_stable(&StableSpec::new(alpha, 1.0)?, 40_000, &mut streams.stream(domain::STABLE, i as u64));
        let block = estimate_alpha_blocks(&x, BlockEstimatorConfig::for_len(x.len())?)?;
        let hill = estimate_alpha_hill(&x, 400)?;
        println!("{alpha:.1}    {:.3}  {hill:.3}", block.alpha);
    }
    Ok(())
}
