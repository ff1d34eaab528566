mod common;

use common::rel_close;
use hfu_core::apps::{gini, lp_test, wilcoxon};
use hfu_core::kernel::{gini_even, lp_power, make_g1, sum_of_squares, Kernel};
use hfu_core::limit::{limit_cdf, rho, QuadratureRule, VolatilityPath};
use hfu_core::sim::{simulate_path, IncrementSeries, ProcessSpec};
use hfu_core::ustat::{u_statistic, u_statistic_path, EvaluationWindow};
use hfu_core::varest::{analytic_variance, variance_estimate};
use proptest::prelude::*;

fn series_strategy(min: usize, max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, min..=max)
}

fn kernels() -> Vec<Kernel> {
    vec![gini_even(), sum_of_squares(), lp_power(1.5).unwrap()]
}

fn raw_series(raw: Vec<f64>) -> IncrementSeries {
    let n = raw.len();
    let sq = (n as f64).sqrt();
    let scaled = raw.iter().map(|x| x * sq).collect();
    IncrementSeries { n, raw, scaled, alpha: None, seed: None }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn u_statistic_ignores_observation_order(xs in series_strategy(4, 40), rot in 0usize..40) {
        let n = xs.len();
        let mut ys = xs.clone();
        ys.reverse();
        ys.rotate_left(rot % n);
        let w = EvaluationWindow::new(1.0, n, 2).unwrap();
        for h in kernels() {
            let a = u_statistic(&h, &IncrementSeries::from_scaled(n, xs.clone()), &w).unwrap();
            let b = u_statistic(&h, &IncrementSeries::from_scaled(n, ys.clone()), &w).unwrap();
            prop_assert!(rel_close(a, b, 1e-10), "{} {a} {b}", h.name());
        }
    }

    #[test]
    fn path_agrees_with_windowed_statistic(xs in series_strategy(4, 60), t in 0.1f64..1.0) {
        let n = xs.len();
        let s = IncrementSeries::from_scaled(n, xs);
        let h = gini_even();
        let path = u_statistic_path(&h, &s).unwrap();
        if let Ok(w) = EvaluationWindow::new(t, n, 2) {
            let direct = u_statistic(&h, &s, &w).unwrap();
            prop_assert!(rel_close(path.at(t).unwrap(), direct, 1e-12));
        }
    }

    #[test]
    fn wilcoxon_path_is_scale_invariant(xs in series_strategy(10, 120), k in -20i32..20, neg in any::<bool>()) {
        let c = 2f64.powi(k) * if neg { -1.0 } else { 1.0 };
        let a = raw_series(xs.clone());
        let b = raw_series(xs.iter().map(|x| c * x).collect());
        let (ra, sa) = wilcoxon(&a, 0.05, None).unwrap();
        let (rb, sb) = wilcoxon(&b, 0.05, None).unwrap();
        prop_assert_eq!(sa.wl_path, sb.wl_path);
        prop_assert_eq!(sa.t_hat, sb.t_hat);
        prop_assert_eq!(ra.statistic, rb.statistic);
    }

    #[test]
    fn lp_gap_is_scale_invariant(xs in series_strategy(6, 50), c in 0.05f64..20.0, p in 1.2f64..3.0) {
        prop_assume!(xs.iter().any(|x| x.abs() > 1e-3));
        let a = raw_series(xs.clone());
        let b = raw_series(xs.iter().map(|x| c * x).collect());
        let (_, sa) = lp_test(&a, p, 0.05).unwrap();
        let (_, sb) = lp_test(&b, p, 0.05).unwrap();
        prop_assert!((sa.mn2 - sb.mn2).abs() <= 1e-10 * (1.0 + sa.mn2.abs()), "{} {}", sa.mn2, sb.mn2);
        prop_assert_eq!(sa.vn[0][1], sa.vn[1][0]);
    }

    #[test]
    fn gini_nonnegative_and_zero_only_at_zero(xs in series_strategy(4, 40), zero_mask in prop::collection::vec(any::<bool>(), 40)) {
        let n = xs.len();
        let ys: Vec<f64> = xs.iter().zip(&zero_mask).map(|(x, z)| if *z { 0.0 } else { *x }).collect();
        let w = EvaluationWindow::new(1.0, n, 2).unwrap();
        let r = gini(&IncrementSeries::from_scaled(n, ys.clone()), &w, None, 0.05).unwrap();
        prop_assert!(r.statistic >= 0.0);
        prop_assert_eq!(r.statistic == 0.0, ys.iter().all(|&y| y == 0.0));
        prop_assert!(r.std_error.unwrap() > 0.0);
        let zero = gini(&IncrementSeries::from_scaled(n, vec![0.0; n]), &w, None, 0.05).unwrap();
        prop_assert_eq!(zero.statistic, 0.0);
    }

    #[test]
    fn floored_variance_is_positive(xs in series_strategy(4, 40), t in 0.1f64..=1.0) {
        let n = xs.len();
        let s = IncrementSeries::from_scaled(n, xs);
        let w = EvaluationWindow::new(t.max(3.0 / n as f64), n, 2).unwrap();
        for h in kernels() {
            let v = variance_estimate(&h, &s, &w).unwrap();
            prop_assert!(v.v > 0.0);
            let floor = (1e-6 * v.v1).max(f64::MIN_POSITIVE);
            prop_assert_eq!(v.floored, v.v1 - v.v2 < floor);
        }
    }

    #[test]
    fn limit_cdf_is_symmetric(sig in prop::collection::vec(0.1f64..4.0, 1..5), x in -6.0f64..6.0, t in 0.0f64..=1.0) {
        let k = sig.len();
        let breaks: Vec<f64> = (1..k).map(|i| i as f64 / k as f64).collect();
        let vol = VolatilityPath::piecewise(&breaks, &sig, 1.0).unwrap();
        let s = limit_cdf(&vol, t, x).unwrap() + limit_cdf(&vol, t, -x).unwrap();
        prop_assert!((s - t).abs() < 1e-10, "{s} {t}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn statistics_do_not_depend_on_worker_count(xs in series_strategy(40, 400), threads in 2usize..5) {
        let n = xs.len();
        let s = IncrementSeries::from_scaled(n, xs);
        let w = EvaluationWindow::new(1.0, n, 2).unwrap();
        let h = gini_even();
        let compute = || (u_statistic(&h, &s, &w).unwrap(), variance_estimate(&h, &s, &w).unwrap());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        prop_assert_eq!(pool.install(compute), single.install(compute));
    }

    #[test]
    fn simulation_does_not_depend_on_worker_count(seed in any::<u64>(), threads in 2usize..5) {
        let spec = ProcessSpec::gbm_vol(1.0, 0.5, -0.3).with_substeps(2);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let a = simulate_path(&spec, 300, seed).unwrap();
        let b = pool.install(|| simulate_path(&spec, 300, seed).unwrap());
        prop_assert_eq!(a.x_values, b.x_values);
        prop_assert_eq!(a.sigma_values, b.sigma_values);
    }
}

#[test]
fn rho_scales_with_homogeneity() {
    let rule = QuadratureRule::default();
    for h in [gini_even(), lp_power(1.5).unwrap(), lp_power(2.0).unwrap(), sum_of_squares()] {
        let r = h.homogeneity().unwrap();
        for &(a, b) in &[(0.5, 1.0), (1.0, 2.0), (2.0, 2.0)] {
            let base = rho(&h, &[a, b], &rule).unwrap().value;
            for c in [0.5, 3.0] {
                let scaled = rho(&h, &[c * a, c * b], &rule).unwrap().value;
                assert!(rel_close(scaled, c.powf(r) * base, 1e-9), "{} c={c}", h.name());
            }
        }
    }
}

#[test]
fn derived_kernel_growth_doubles() {
    for h in kernels() {
        let g = make_g1(&h).unwrap();
        assert_eq!(g.claims().growth_degree, 2.0 * h.claims().growth_degree);
    }
}

#[test]
fn analytic_variance_vanishes_at_zero_and_is_continuous() {
    let rule = QuadratureRule::gauss_hermite(32);
    let vol = VolatilityPath::constant(1.0, 1.0).unwrap();
    let h = sum_of_squares();
    let at0 = analytic_variance(&h, &vol, 0.0, &rule).unwrap();
    assert_eq!((at0.v1, at0.v2, at0.v), (0.0, 0.0, 0.0));
    // g(x) = t(x² + 1), so V₁ = 24t³, V₂ = 16t³
    for k in 1..=50 {
        let t = k as f64 / 50.0;
        let a = analytic_variance(&h, &vol, t, &rule).unwrap();
        assert!(rel_close(a.v1, 24.0 * t.powi(3), 1e-9));
        assert!(rel_close(a.v, 8.0 * t.powi(3), 1e-9), "t={t} {}", a.v);
    }
}
