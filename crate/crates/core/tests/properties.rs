use escape_core::experiments::{predicted_limit, HoleFamily};
use escape_core::maps::{conjugacy_logistic_tent, IntervalMap};
use escape_core::openmap::{simulate_survival, survival_time, Hole, HoleInterval, InitialMeasure};
use escape_core::potentials::{birkhoff_sum, normalize, pressure_pl_full_branch, Potential};
use escape_core::ulam::UlamOperator;
use proptest::prelude::*;

fn maps() -> Vec<IntervalMap> {
    vec![
        IntervalMap::tent2(),
        IntervalMap::logistic4(),
        IntervalMap::piecewise_linear(vec![0.0, 0.3, 1.0], vec![1.0 / 0.3, -1.0 / 0.7], None).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn preimages_round_trip(y in 0.0f64..=1.0) {
        for map in maps() {
            let pre = map.preimages(y).unwrap();
            prop_assert!(!pre.is_empty());
            for x in pre {
                prop_assert!((map.evaluate(x).unwrap() - y).abs() < 1e-12, "{} at {x}", map.tag());
            }
        }
    }

    #[test]
    fn conjugacy_commutes(x in 0.0f64..=1.0) {
        let pair = conjugacy_logistic_tent();
        let lhs = pair.target.evaluate(pair.forward(x)).unwrap();
        let rhs = pair.forward(pair.source.evaluate(x).unwrap());
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn birkhoff_cocycle(x in 0.001f64..0.999, n in 1usize..15, m in 1usize..15) {
        let map = IntervalMap::logistic4();
        let pot = Potential::geometric(1.0).unwrap();
        let whole = birkhoff_sum(&pot, &map, x, n + m).unwrap();
        let y = map.orbit(x, n).unwrap()[n];
        let split = birkhoff_sum(&pot, &map, x, n).unwrap() + birkhoff_sum(&pot, &map, y, m).unwrap();
        prop_assume!(whole.is_finite());
        prop_assert!((whole - split).abs() < 1e-10, "{whole} vs {split}");
    }

    #[test]
    fn pressure_non_increasing_in_t(cut in 0.05f64..0.95) {
        let map = IntervalMap::piecewise_linear(vec![0.0, cut, 1.0], vec![1.0 / cut, -1.0 / (1.0 - cut)], None).unwrap();
        let p: Vec<f64> = [-1.0, 0.0, 1.0, 2.0].iter().map(|&t| pressure_pl_full_branch(&map, t).unwrap()).collect();
        prop_assert!(p.windows(2).all(|w| w[1] <= w[0] + 1e-14), "{p:?}");
    }

    #[test]
    fn tent_operator_is_column_stochastic(n in 2usize..600) {
        let map = IntervalMap::tent2();
        let pot = normalize(&Potential::geometric(1.0).unwrap(), &map, 64).unwrap();
        let op = UlamOperator::build(&map, &pot, n).unwrap();
        for s in op.column_sums() {
            prop_assert!((s - 1.0).abs() < 1e-12, "{s}");
        }
    }

    #[test]
    fn censoring_is_consistent(x in 0.0f64..1.0, z in 0.1f64..0.9, eps in 0.001f64..0.05, n in 1usize..200) {
        let map = IntervalMap::tent2();
        let hole = Hole::symmetric(z, eps).unwrap();
        let short = survival_time(&map, &hole, x, n).unwrap();
        if short <= n {
            prop_assert_eq!(short, survival_time(&map, &hole, x, 2 * n).unwrap());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn larger_hole_never_increases_survivors(
        lo in 0.05f64..0.8, len in 0.001f64..0.1, grow_lo in 0.0f64..0.05, grow_hi in 0.0f64..0.05, seed in 0u64..1000,
        logistic in any::<bool>(),
    ) {
        let (map, measure) = if logistic {
            (IntervalMap::logistic4(), InitialMeasure::AcipLogistic4)
        } else {
            (IntervalMap::tent2(), InitialMeasure::Lebesgue)
        };
        let small = Hole::open(lo, lo + len).unwrap();
        let big = Hole::from_intervals(vec![HoleInterval::open(lo - grow_lo, (lo + len + grow_hi).min(1.0))]).unwrap();
        let a = simulate_survival(&map, &small, measure, 3000, 40, seed).unwrap();
        let b = simulate_survival(&map, &big, measure, 3000, 40, seed).unwrap();
        for (ca, cb) in a.counts.iter().zip(&b.counts) {
            prop_assert!(cb <= ca);
        }
    }

    #[test]
    fn periodic_prediction_matches_birkhoff(k in 1u32..6, t in 0.5f64..1.2) {
        // 2/(2^k + 1) has period dividing 2k under the tent map.
        let z = 2.0 / (2f64.powi(k as i32) + 1.0);
        let map = IntervalMap::tent2();
        let pot = normalize(&Potential::geometric(t).unwrap(), &map, 64).unwrap();
        let (limit, _) = predicted_limit(&map, &pot, z).unwrap();
        let p = map.detect_period(z, 64, 1e-9).unwrap();
        let expected = 1.0 - birkhoff_sum(&pot, &map, z, p).unwrap().exp();
        prop_assert_eq!(limit, expected);
    }
}

#[test]
fn family_holes_are_nested() {
    let family = HoleFamily::Symmetric { z: 2.0 / 3.0 };
    let big = family.hole(0.05).unwrap();
    let small = family.hole(0.01).unwrap();
    assert!(big.contains_hole(&small));
    assert!(!small.contains_hole(&big));
}
