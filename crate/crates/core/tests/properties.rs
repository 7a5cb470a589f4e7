use proptest::prelude::*;

use tailscope::cli::report::{parse_csv, render_csv, ResultRow};
use tailscope::estimate::{estimate_alpha_blocks, project_and_estimate, sample_stable, BlockEstimatorConfig, Directions, StableSpec};
use tailscope::rng::{domain, Streams};
use tailscope::schedule::{build_folded_state_space, stationary_of_chain, MarkovChain, StationaryMethod, StepsizeGrid};
use tailscope::sgdsim::EnsembleMatrix;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn block_estimator_is_scale_invariant(alpha in 1.05f64..2.0, gamma in 1e-3f64..1e3, seed in 0u64..1000) {
        let x = sample_stable(&StableSpec::new(alpha, 1.0).unwrap(), 2500, &mut Streams::new(seed).stream(domain::STABLE, 0));
        let y: Vec<f64> = x.iter().map(|v| v * gamma).collect();
        let cfg = BlockEstimatorConfig::for_len(x.len()).unwrap();
        let (a, b) = (estimate_alpha_blocks(&x, cfg).unwrap().raw, estimate_alpha_blocks(&y, cfg).unwrap().raw);
        prop_assert!((a - b).abs() <= 1e-9 * a.abs());
    }

    #[test]
    fn projection_follows_column_order_and_ignores_direction_scale(seed in 0u64..1000, scale in 0.01f64..100.0) {
        let mut rng = Streams::new(seed).stream(domain::STABLE, 1);
        let spec = StableSpec::new(1.5, 1.0).unwrap();
        let rows: Vec<Vec<f64>> = (0..400).map(|_| (0..3).map(|_| spec.sample(&mut rng)).collect()).collect();
        let swapped: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[2], r[0], r[1]]).collect();
        let cfg = Some(BlockEstimatorConfig::new(20, 20).unwrap());
        let a = project_and_estimate(&EnsembleMatrix::from_rows(&rows, 0).unwrap(), &Directions::Coordinates, cfg).unwrap();
        let b = project_and_estimate(&EnsembleMatrix::from_rows(&swapped, 0).unwrap(), &Directions::Coordinates, cfg).unwrap();
        prop_assert_eq!(a.pooled, b.pooled);
        prop_assert_eq!(a.per_direction[0].alpha, b.per_direction[1].alpha);
        let dirs = Directions::Vectors(vec![vec![scale, 0.0, 0.0]]);
        let c = project_and_estimate(&EnsembleMatrix::from_rows(&rows, 0).unwrap(), &dirs, cfg).unwrap();
        prop_assert!((c.pooled - a.per_direction[0].alpha).abs() <= 1e-9 * c.pooled);
    }

    #[test]
    fn stationary_law_is_a_fixed_point(k in 2usize..12, p in 0.05f64..0.95) {
        prop_assume!((p - 0.5).abs() > 1e-3);
        let space = build_folded_state_space(&StepsizeGrid::new(0.5, 0.1, k).unwrap()).unwrap();
        let chain = MarkovChain::folded(&space, p).unwrap();
        let pi = stationary_of_chain(&chain, StationaryMethod::ClosedForm).unwrap();
        prop_assert!(pi.fixed_point_residual(&chain) < 1e-12);
        prop_assert!((pi.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn result_rows_round_trip(alpha in prop::option::of(0.01f64..64.0), value in -10.0f64..10.0, censored in prop::option::of(0usize..5000)) {
        let mut row = ResultRow::new("markov", value, "regen_mc");
        row.alpha = alpha;
        if alpha.is_none() {
            row.refusal = Some("root_above_cap".into());
        } else {
            row.stderr = Some(0.25);
        }
        row.censored = censored;
        let back = parse_csv(&render_csv(std::slice::from_ref(&row), None)).unwrap();
        prop_assert_eq!(back, vec![row]);
    }
}
