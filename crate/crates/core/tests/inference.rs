use drivest::estimands::{analyze_pair, pi_dr, EstimandConfig, TrimRule};
use drivest::inference::{influence_pi_dr, influence_pi_v, pairs_bootstrap, score_bootstrap_band, trim_threshold, Multiplier};
use drivest::simulate::{generate, presets};
use drivest::{estimate, Dataset, EstimandKind, Error, InferenceOptions};

fn dgp(name: &str, n: usize, seed: u64) -> Dataset {
    generate(&presets::preset(name).unwrap(), n, seed).unwrap()
}

#[test]
fn influence_totals_are_centered_and_scale_the_se() {
    let d = dgp("dgp_m", 1500, 31);
    let a = analyze_pair(&d, &EstimandConfig::default(), (0, 1)).unwrap();
    let p = pi_dr(&a).unwrap().point;
    let inf = influence_pi_dr(&a, p).unwrap();
    let tot = inf.totals();
    let n = tot.len() as f64;
    let mean = tot.iter().sum::<f64>() / n;
    assert!(mean.abs() < 1e-2 * inf.sigma);
    assert!((inf.se - inf.sigma / n.sqrt()).abs() < 1e-12);
    assert!(inf.se > 0.01 && inf.se < 0.2, "{}", inf.se);
    let j = a.qfit.grid.len() / 2;
    let pv = influence_pi_v(&a, j, p).unwrap();
    assert!(pv.se > inf.se);
}

#[test]
fn degenerate_first_stage_se_sets_threshold_to_zero() {
    // identical treatment in both cells: every quantile is fit exactly
    let t: Vec<f64> = (0..40).map(|i| (i % 20) as f64).collect();
    let z: Vec<u32> = (0..40).map(|i| (i / 20) as u32).collect();
    let d = Dataset::new(t.clone(), t, vec![], 0, z).unwrap();
    let qf = drivest::quantreg::fit_grid(&d, &drivest::quantreg::QuantileGrid::new(9).unwrap(), (0, 1)).unwrap();
    let (spec, warnings) = trim_threshold(&qf, TrimRule::Baseline);
    assert!(spec.rho_n >= 0.0);
    if spec.rho_n == 0.0 {
        assert!(!warnings.is_empty());
    }
    let (fixed, _) = trim_threshold(&qf, TrimRule::Fixed(0.3));
    assert_eq!(fixed.rho_n, 0.3);
}

#[test]
fn pairs_bootstrap_is_reproducible() {
    let d = dgp("constant_effect", 300, 32);
    let est = |x: &Dataset| Ok(x.outcome().iter().sum::<f64>() / x.n() as f64);
    let a = pairs_bootstrap(&d, est, 50, 0.9, 7).unwrap();
    let b = pairs_bootstrap(&d, est, 50, 0.9, 7).unwrap();
    assert_eq!(a, b);
    assert!(a.ci.0 < a.ci.1 && a.se > 0.0);
    let c = pairs_bootstrap(&d, est, 50, 0.9, 8).unwrap();
    assert_ne!(a.se, c.se);
}

#[test]
fn pairs_bootstrap_flags_unstable_estimators() {
    let d = dgp("constant_effect", 100, 33);
    let fail = |_: &Dataset| -> drivest::Result<f64> { Err(Error::InvalidArgument("nope".into())) };
    assert!(matches!(pairs_bootstrap(&d, fail, 10, 0.95, 1), Err(Error::BootstrapUnstable { .. })));
    assert!(pairs_bootstrap(&d, |_| Ok(1.0), 1, 0.95, 1).is_err());
}

#[test]
fn score_band_covers_the_pointwise_interval() {
    let d = dgp("dgp_m", 1200, 34);
    let a = analyze_pair(&d, &EstimandConfig::default(), (0, 1)).unwrap();
    let g = a.qfit.grid.points();
    let set: Vec<(Vec<f64>, f64)> =
        [0.2, 0.5, 0.8].iter().flat_map(|&x| [g[20], g[49], g[78]].map(|v| (vec![x], v))).collect();
    let band = score_bootstrap_band(&a, &set, 400, 0.05, Multiplier::Rademacher, 3).unwrap();
    assert_eq!(band.points.len() + band.dropped, set.len());
    assert!(band.critical_value >= 1.6, "{}", band.critical_value);
    for p in &band.points {
        assert!(p.lo < p.pi && p.pi < p.hi);
    }
    let again = score_bootstrap_band(&a, &set, 400, 0.05, Multiplier::Rademacher, 3).unwrap();
    assert_eq!(band, again);
    assert!(score_bootstrap_band(&a, &set, 400, 1.5, Multiplier::Normal, 3).is_err());
}

#[test]
fn multiplier_laws_parse() {
    for s in ["normal", "rademacher", "mammen"] {
        assert!(s.parse::<Multiplier>().is_ok());
    }
    assert!("cauchy".parse::<Multiplier>().is_err());
}

#[test]
fn pipeline_combines_plugin_and_bootstrap() {
    let d = dgp("constant_effect", 500, 35);
    let inf = InferenceOptions { bootstrap: 20, seed: 4, ..InferenceOptions::default() };
    let r = estimate(&d, EstimandKind::TauDr, &EstimandConfig::default(), (0, 1), &inf).unwrap();
    assert!(r.se_plugin.unwrap() > 0.0);
    assert!(r.se_bootstrap.unwrap() > 0.0);
    assert_eq!(r.ci.as_ref().unwrap().method, "plugin");
    assert_eq!(r.bootstrap.as_ref().unwrap().replicates, 20);
    let none = estimate(&d, EstimandKind::Wald, &EstimandConfig::default(), (0, 1), &InferenceOptions::none()).unwrap();
    assert!(none.se_plugin.is_none() && none.ci.is_none());
}
