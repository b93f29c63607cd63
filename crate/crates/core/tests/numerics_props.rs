use ad_market::numerics::{approx_power, ceil_log2, round_to_denominator, PowerBasis};
use ad_market::Q;
use num_bigint::{BigInt, BigUint};
use num_traits::{One, Signed};
use proptest::prelude::*;

fn exact_power(k: u64, l: u64) -> Q {
    let g = Q::new(BigInt::from(l + 1), BigInt::from(l));
    num_traits::pow(g, k as usize)
}

fn basis_for(k: u64, l: u64) -> PowerBasis {
    let bound = (k as f64 / l as f64 / std::f64::consts::LN_2).ceil() as u64 + 8;
    PowerBasis::with_bound(BigUint::from(l), bound).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn approx_power_within_quarter_step(k in 0u64..3000, l in 3u64..2000) {
        let basis = basis_for(k, l);
        let b = approx_power(&BigUint::from(k), &BigUint::from(l), basis.z_bits()).unwrap();
        let err = (b - exact_power(k, l)).abs();
        prop_assert!(err * Q::from_integer(BigInt::from(4 * l)) <= Q::one());
    }

    #[test]
    fn cached_and_direct_powers_agree(k in 0u64..3000, l in 3u64..2000) {
        let basis = basis_for(k, l);
        let direct = approx_power(&BigUint::from(k), &BigUint::from(l), basis.z_bits()).unwrap();
        prop_assert_eq!(basis.approx_power(&BigUint::from(k)).unwrap(), direct);
    }

    #[test]
    fn rounded_price_contracts(k in 0u64..3000, l in 3u64..2000) {
        let basis = basis_for(k, l);
        let p = exact_power(k, l);
        let r = basis.rounded_price(&BigUint::from(k)).unwrap();
        let lq = Q::from_integer(BigInt::from(l));
        let g = Q::one() + Q::one() / &lq;
        prop_assert!((&r - &p).abs() * &lq <= Q::one());
        prop_assert!(r <= &p * &g);
        prop_assert!(&r * &g >= p);
        prop_assert!((&r * &lq).is_integer());
    }

    #[test]
    fn round_to_denominator_is_nearest(num in 0i64..100_000, den in 1i64..1000, l in 1u64..1000) {
        let v = Q::new(BigInt::from(num), BigInt::from(den));
        let r = round_to_denominator(&v, &BigUint::from(l));
        let scaled = v * Q::from_integer(BigInt::from(l));
        let twice = (Q::from_integer(r.clone()) - &scaled).abs() * Q::from_integer(BigInt::from(2));
        prop_assert!(twice <= Q::one());
        if twice == Q::one() {
            prop_assert!(r % 2 == BigInt::from(0));
        }
    }

    #[test]
    fn factor_rounding_contract(a in 1u64..100_000, extra in 0u64..2_000_000, l in 3u64..500) {
        let x = Q::new(BigInt::from(a + extra % (20 * a)), BigInt::from(a));
        let basis = basis_for(5 * l, l);
        let k = basis.round_factor_to_power(&x).unwrap();
        let k = u64::try_from(&k).unwrap();
        let g = Q::new(BigInt::from(l + 1), BigInt::from(l));
        prop_assert!(x <= exact_power(k + 1, l));
        prop_assert!(x >= exact_power(k, l) / &g);
    }
}

#[test]
fn small_bases_are_rejected() {
    assert!(PowerBasis::new(BigUint::from(2u32), 64).is_err());
    assert!(PowerBasis::new(BigUint::from(3u32), 64).is_ok());
}

#[test]
fn ceil_log2_values() {
    for (x, want) in [(1u32, 0), (2, 1), (3, 2), (4, 2), (5, 3), (1024, 10), (1025, 11)] {
        assert_eq!(ceil_log2(&BigUint::from(x)), want);
    }
}
