mod common;

use ad_market::market::{reduce_prices, scc_decompose};
use ad_market::{solve, Market, MarketError, SolveError, SolverConfig};
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::One;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn any_market() -> impl Strategy<Value = Market> {
    (1usize..=7).prop_flat_map(|n| {
        prop::collection::vec(prop::collection::vec(prop_oneof![3 => Just(0u64), 2 => 1u64..=9], n), n)
            .prop_map(|u| Market::new(u).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn components_partition_in_topological_order(m in any_market()) {
        let scc = scc_decompose(&m);
        let mut seen = vec![false; m.n()];
        for (c, comp) in scc.components.iter().enumerate() {
            prop_assert!(comp.windows(2).all(|w| w[0] < w[1]));
            for &a in comp {
                prop_assert!(!seen[a]);
                seen[a] = true;
                prop_assert_eq!(scc.component_of[a], c);
            }
            if comp.len() > 1 {
                prop_assert!(m.submarket(comp).validate().strongly_connected);
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
        for i in 0..m.n() {
            for j in 0..m.n() {
                if m.u(i, j) > 0 {
                    prop_assert!(scc.component_of[i] <= scc.component_of[j]);
                }
            }
        }
    }

    #[test]
    fn reduced_prices_are_coprime(v in prop::collection::vec(1u64..10_000, 1..6), k in 1u64..50) {
        let q: Vec<BigInt> = v.iter().map(|&x| BigInt::from(x * k)).collect();
        let r = reduce_prices(&q);
        prop_assert!(r.iter().fold(BigInt::from(0), |g, x| g.gcd(x)).is_one());
        prop_assert!(ad_market::verify::proportional(&q, &r));
    }

    #[test]
    fn violating_singletons_are_rejected(seed in any::<u64>(), n in 3usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = common::dag_market(&mut rng, n, 9, true);
        let err = solve(&m, &SolverConfig::default()).unwrap_err();
        prop_assert!(matches!(err, SolveError::Market(MarketError::NoEquilibrium(_))), "{}", err);
    }

    #[test]
    fn random_irreducible_markets_are_strongly_connected(n in 1usize..=8, u in 1u64..=10, seed in any::<u64>()) {
        let m = Market::random(n, u, seed, true);
        prop_assert!(m.validate().is_valid());
        prop_assert!(m.validate().strongly_connected);
        prop_assert!(m.u_max() <= u);
    }
}

#[test]
fn malformed_markets() {
    assert!(matches!(Market::new(vec![]), Err(MarketError::Empty)));
    assert!(matches!(Market::new(vec![vec![1, 1], vec![1]]), Err(MarketError::NotSquare { .. })));
    let no_goods = Market::new(vec![vec![0, 0], vec![1, 1]]).unwrap();
    assert!(matches!(solve(&no_goods, &SolverConfig::default()), Err(SolveError::Market(MarketError::BuyerLikesNothing(0)))));
    let unwanted = Market::new(vec![vec![1, 0], vec![1, 0]]).unwrap();
    assert!(matches!(solve(&unwanted, &SolverConfig::default()), Err(SolveError::Market(MarketError::GoodUnwanted(1)))));
}
