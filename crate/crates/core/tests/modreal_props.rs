use proptest::prelude::*;
use titan::{ExactContext, Fixed, FloatContext, ModScalar, Scale};

const SCALE: f64 = 4294967296.0;

/// Grid values in a range that keeps every intermediate sum far from
/// overflow.
fn grid_value() -> impl Strategy<Value = f64> {
    (-(1i64 << 44)..(1i64 << 44)).prop_map(|t| t as f64 / SCALE)
}

fn modulus() -> impl Strategy<Value = f64> {
    (1i64..(1i64 << 40)).prop_map(|t| t as f64 / SCALE * 7.0)
}

/// Direct reduction in i128 ticks.
fn oracle_ticks(x_ticks: i128, m_ticks: i128) -> i128 {
    x_ticks.rem_euclid(m_ticks)
}

fn ticks(x: f64) -> i128 {
    (x * SCALE) as i128
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn reduce_matches_integer_oracle(x in grid_value(), m in modulus()) {
        let ctx = ExactContext::with_default_params(m).unwrap();
        let r = ctx.mod_reduce(x).unwrap().value();
        prop_assert_eq!(r.ticks() as i128, oracle_ticks(ticks(x), ctx.modulus().ticks() as i128));
    }

    #[test]
    fn reduce_is_idempotent(x in grid_value(), m in modulus()) {
        let ctx = ExactContext::with_default_params(m).unwrap();
        let once = ctx.mod_reduce(x).unwrap();
        prop_assert_eq!(ctx.reduce(once.value()), once);
    }

    #[test]
    fn pairwise_sum_reduces_consistently(x in grid_value(), y in grid_value(), m in modulus()) {
        let ctx = ExactContext::with_default_params(m).unwrap();
        let direct = ctx.mod_sum(&[x, y]).unwrap();
        let stepwise = ctx.add(ctx.mod_reduce(x).unwrap(), ctx.mod_reduce(y).unwrap());
        prop_assert_eq!(direct, stepwise);
    }

    #[test]
    fn tuple_sum_equals_sum_of_reductions(xs in prop::collection::vec(grid_value(), 0..20), m in modulus()) {
        let ctx = ExactContext::with_default_params(m).unwrap();
        let reduced: Vec<f64> = xs.iter().map(|&x| ctx.to_real(ctx.mod_reduce(x).unwrap().value())).collect();
        prop_assert_eq!(ctx.mod_sum(&xs).unwrap(), ctx.mod_sum(&reduced).unwrap());
        let total: i128 = xs.iter().map(|&x| ticks(x)).sum();
        prop_assert_eq!(
            ctx.mod_sum(&xs).unwrap().value().ticks() as i128,
            oracle_ticks(total, ctx.modulus().ticks() as i128)
        );
    }

    #[test]
    fn value_plus_negation_is_zero_or_modulus(x in grid_value(), m in modulus()) {
        let ctx = ExactContext::with_default_params(m).unwrap();
        let a = ctx.mod_reduce(x).unwrap().value();
        let b = ctx.mod_neg(x).unwrap().value();
        let s = a + b;
        prop_assert!(s == Fixed::from_ticks(0) || s == ctx.modulus());
        if a != Fixed::from_ticks(0) {
            prop_assert_eq!(b, ctx.modulus() - a);
        }
    }

    #[test]
    fn cancelling_masks_sum_to_zero(xs in prop::collection::vec(grid_value(), 1..30), m in modulus(), wraps in -5i64..5) {
        // xs plus their negations plus an integer multiple of the modulus
        let ctx = ExactContext::with_default_params(m).unwrap();
        let mut all: Vec<f64> = xs.clone();
        all.extend(xs.iter().map(|x| -x));
        all.push(ctx.modulus_real() * wraps as f64);
        prop_assert_eq!(ctx.mod_sum(&all).unwrap().value(), Fixed::from_ticks(0));
    }

    #[test]
    fn quantize_is_nearest_grid_point(x in -1e6f64..1e6) {
        let q = Fixed::quantize(x, &Scale::default()).unwrap();
        prop_assert!((q.to_real(&Scale::default()) - x).abs() <= 0.5 / SCALE);
    }

    #[test]
    fn float_backend_within_tolerance(x in -1e4f64..1e4, y in -1e4f64..1e4, m in 0.5f64..1e3) {
        let ctx = FloatContext::with_default_params(m).unwrap();
        let direct = ctx.mod_sum(&[x, y]).unwrap().value();
        let stepwise = ctx.add(ctx.mod_reduce(x).unwrap(), ctx.mod_reduce(y).unwrap()).value();
        prop_assert!(ctx.circular_distance(direct, stepwise) <= ctx.tolerance());
        prop_assert!((0.0..m).contains(&direct));
    }
}
