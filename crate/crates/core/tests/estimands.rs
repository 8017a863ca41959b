use drivest::estimands::{
    analyze_pair, lambda_weights, pi_dr, pi_dr_multi, pi_v, wald, wald_x, EstimandConfig, SignMode, TrimRule,
    WeakIvRule,
};
use drivest::simulate::{generate, presets};
use drivest::{Dataset, Error};

fn dgp(name: &str, n: usize, seed: u64) -> Dataset {
    generate(&presets::preset(name).unwrap(), n, seed).unwrap()
}

#[test]
fn doubly_robust_aggregate_on_a_monotone_design() {
    let d = dgp("dgp_m", 2000, 21);
    let a = analyze_pair(&d, &EstimandConfig::default(), (0, 1)).unwrap();
    let r = pi_dr(&a).unwrap();
    assert!((r.point - 0.7).abs() < 0.2, "{}", r.point);
    assert!(r.rho_n > 0.0 && r.b_hat > 0.0);
    let wx = wald_x(&d, (0, 1), &WeakIvRule::default()).unwrap();
    assert!((wx.point - r.point).abs() < 0.1);
    // no negative cells under a monotone first stage of this size
    let plus = a.aggregate(SignMode::Positive, None).unwrap();
    assert!((plus.point - r.point).abs() < 1e-12);
}

#[test]
fn rank_similar_design_needs_the_quadratic_basis() {
    let d = dgp("dgp_rs", 2000, 22);
    let mut cfg = EstimandConfig::default();
    cfg.basis.j = 3;
    let r = pi_dr(&analyze_pair(&d, &cfg, (0, 1)).unwrap()).unwrap();
    assert!((r.point - 1.0).abs() < 0.15, "{}", r.point);
}

#[test]
fn quantile_level_estimates_require_grid_points() {
    let d = dgp("constant_effect", 600, 23);
    let a = analyze_pair(&d, &EstimandConfig::default(), (0, 1)).unwrap();
    assert!(matches!(pi_v(&a, 0.1), Err(Error::OffGrid(_))));
    let v = a.qfit.grid.points()[49];
    assert!((pi_v(&a, v).unwrap().point - 2.0).abs() < 0.3);
}

#[test]
fn everything_trimmed_is_an_error() {
    let d = dgp("dgp_m", 400, 24);
    let cfg = EstimandConfig { trimming: TrimRule::Fixed(1e6), ..EstimandConfig::default() };
    let a = analyze_pair(&d, &cfg, (0, 1)).unwrap();
    assert!(matches!(pi_dr(&a), Err(Error::AllTrimmed { .. })));
}

#[test]
fn covariate_dependent_assignment_separates_the_wald_estimands() {
    let d = dgp("dgp_x", 6000, 25);
    let rule = WeakIvRule::default();
    let w = wald(&d, (0, 2), &rule).unwrap().point;
    let wx = wald_x(&d, (0, 2), &rule).unwrap().point;
    assert!((wx - 0.15).abs() < 0.06, "{wx}");
    assert!(w > wx, "{w} {wx}");
}

#[test]
fn multi_valued_aggregate() {
    let d = dgp("dgp_multi", 3000, 26);
    let w = lambda_weights(&d).unwrap();
    assert!((w.lambda.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let r = pi_dr_multi(&d, &EstimandConfig::default()).unwrap();
    assert!((r.point - 0.7).abs() < 0.2, "{}", r.point);
    assert_eq!(r.per_pair_breakdown.len(), 2);
}

#[test]
fn missing_instrument_value_is_reported() {
    let constant = Dataset::new(vec![1.0; 20], (0..20).map(|i| i as f64).collect(), vec![], 0, vec![0; 20]);
    assert!(matches!(constant, Err(Error::SingleInstrumentValue { .. })));
    let d = dgp("dgp_m", 100, 27);
    assert!(analyze_pair(&d, &EstimandConfig::default(), (0, 2)).is_err());
    assert!(wald(&d, (1, 1), &WeakIvRule::default()).is_err());
}
