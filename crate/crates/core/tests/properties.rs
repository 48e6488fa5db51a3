use dcrn_core::eval::nrmse;
use dcrn_core::losses::{mmd_value, propensity_weight, Bandwidth};
use dcrn_core::sim::{all_plans, argmin_first, one_hot_plans};
use proptest::prelude::*;

fn cloud(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 2), 2..n)
}

proptest! {
    #[test]
    fn mmd_is_symmetric_and_non_negative(a in cloud(12), b in cloud(12), s in 0.1..5.0f64) {
        let ab = mmd_value(&a, &b, Bandwidth::Fixed(s)).unwrap();
        let ba = mmd_value(&b, &a, Bandwidth::Fixed(s)).unwrap();
        prop_assert!(ab > -1e-12);
        prop_assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn weights_are_at_least_one(treated: bool, a_c in 0.0..1.0f64, p in 0.01..0.99f64) {
        let w = propensity_weight(treated, a_c, p).unwrap();
        prop_assert!(w >= 1.0 && w.is_finite());
    }

    #[test]
    fn nrmse_scales_inversely_with_the_normalizer(
        pairs in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..30),
        k in 0.5..4.0f64,
    ) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let a = nrmse(&p, &t, 1.0).unwrap();
        let b = nrmse(&p, &t, k).unwrap();
        prop_assert!((a / k - b).abs() <= 1e-12 * a.max(1.0));
        prop_assert_eq!(nrmse(&t, &t, k).unwrap(), 0.0);
    }

    #[test]
    fn plan_families_are_consistent(tau in 1usize..7) {
        let all = all_plans(tau);
        prop_assert_eq!(all.len(), 1 << tau);
        prop_assert!(all.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(one_hot_plans(tau).iter().all(|p| all.contains(p)));
    }

    #[test]
    fn argmin_takes_the_first_minimum(v in prop::collection::vec(-3i32..3, 1..20)) {
        let xs: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
        let i = argmin_first(&xs);
        let m = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(xs[i], m);
        prop_assert!(xs[..i].iter().all(|&x| x > m));
    }
}
