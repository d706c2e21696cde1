//! Sanity checks on the test oracles themselves.

mod common;

use common::{brute_force_mix, clopper_pearson, lp_by_bases, paired_t_greater, LnFactorial, OracleModel};

#[test]
fn all_success_lower_bound_is_closed_form() {
    let f = LnFactorial::new(20);
    let (lo, hi) = clopper_pearson(&f, 10, 10, 0.95);
    assert!((lo - 0.025_f64.powf(0.1)).abs() < 1e-12);
    assert_eq!(hi, 1.0);
}

#[test]
fn interval_at_100_95() {
    let (lo, hi) = clopper_pearson(&LnFactorial::new(100), 100, 95, 0.95);
    assert!((lo - 0.8871650889).abs() < 1e-9, "{lo}");
    assert!((hi - 0.9835681).abs() < 1e-6, "{hi}");
}

#[test]
fn tails_are_complementary() {
    let f = LnFactorial::new(300);
    for &(n, p, e) in &[(300, 0.99, 1), (300, 0.01, 299), (50, 0.5, 25), (7, 0.3, 0)] {
        let total = f.upper_tail(n, p, e) + f.lower_tail(n, p, e.saturating_sub(1)) * (e > 0) as u8 as f64;
        assert!((total - 1.0).abs() < 1e-12, "{n} {p} {e}: {total}");
    }
}

#[test]
fn basis_lp_two_model_vertex() {
    let obj = lp_by_bases(&[(0.03, 1.0), (0.001, 0.85)], 0.9).unwrap();
    assert!((obj - (0.03 / 3.0 + 0.002 / 3.0)).abs() < 1e-15);
}

#[test]
fn brute_force_respects_the_budget() {
    // Two cheap models each certified only at 0.95; together they would
    // need 0.95^2 < 0.95, so one of them must sit out.
    let levels = [0.95, 1.0];
    let cheap = |c| OracleModel { cost: c, is_reference: false, bounds: vec![0.95, 0.0] };
    let models = [OracleModel { cost: 1.0, is_reference: true, bounds: vec![1.0, 1.0] }, cheap(0.1), cheap(0.2)];
    assert_eq!(brute_force_mix(&models, &levels, 0.95, 0.9), Some(0.1));
}

#[test]
fn paired_t_direction() {
    let a = [2.0, 3.0, 4.0, 5.0, 6.5];
    let b = [1.0, 2.0, 3.0, 4.0, 5.0];
    assert!(paired_t_greater(&a, &b) < 0.001);
    assert!(paired_t_greater(&b, &a) > 0.999);
    assert_eq!(paired_t_greater(&a, &a), 1.0);
}
