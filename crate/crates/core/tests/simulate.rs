use drivest::simulate::{
    generate, monte_carlo, oracle, oracle_for_pair, potential_outcomes, presets, verify_restrictions, DgpSpec,
    McEstimator,
};
use drivest::{EstimandKind, Error};

fn preset(name: &str) -> DgpSpec {
    presets::preset(name).unwrap()
}

#[test]
fn generation_is_deterministic_in_the_seed() {
    let s = preset("dgp_x");
    assert_eq!(generate(&s, 300, 5).unwrap(), generate(&s, 300, 5).unwrap());
    assert_ne!(generate(&s, 300, 5).unwrap(), generate(&s, 300, 6).unwrap());
    let d = generate(&s, 300, 5).unwrap();
    assert_eq!(d.d_x(), 7);
    assert_eq!(d.labels()[2], "encouragement");
}

#[test]
fn potential_treatments_follow_the_coupling() {
    for p in potential_outcomes(&preset("dgp_m"), 200, 1).unwrap() {
        assert!((p.t[1] - p.t[0] - 0.5).abs() < 1e-12);
    }
    let (mut up, mut down) = (0, 0);
    for p in potential_outcomes(&preset("dgp_rs"), 2000, 1).unwrap() {
        if p.t[1] > p.t[0] {
            up += 1;
        } else {
            down += 1;
        }
    }
    assert!(up > 800 && down > 800);
}

#[test]
fn shipped_presets_pass_verification() {
    for name in presets::NAMES {
        let s = preset(name);
        let c = verify_restrictions(&s, 5000).unwrap();
        assert_eq!(c.monotone_holds, s.restrictions.monotone, "{name}");
        assert_eq!(c.rank_similar_holds, s.restrictions.rank_similar, "{name}");
        let back = DgpSpec::from_toml(&s.to_toml().unwrap()).unwrap();
        assert_eq!(back, s);
    }
}

#[test]
fn declared_flags_must_match() {
    let mut s = preset("dgp_rs");
    s.restrictions.monotone = true;
    assert!(matches!(generate(&s, 10, 1), Err(Error::SpecConsistency(_))));
}

#[test]
fn quantile_functions_must_increase_in_the_rank() {
    let mut s = preset("dgp_m");
    s.first_stage[1] = "1 + (u - 0.5)^2".into();
    assert!(generate(&s, 10, 1).is_err());
}

#[test]
fn strict_spec_parsing() {
    let src = presets::DGP_M.replace("noise = 1", "noise = 1\nextra = 2");
    assert!(DgpSpec::from_toml(&src).is_err());
    let src = presets::DGP_M.replace("0.7 * t", "0.7 * q");
    assert!(matches!(DgpSpec::from_toml(&src), Err(Error::Expression(_))));
}

#[test]
fn constant_effect_oracles_are_exact() {
    let s = preset("constant_effect");
    for id in ["tau_dr", "tau_dr_plus", "pi_dr", "wald_weighted_late", "tau_u(0.25)", "pi_v(0.5)"] {
        let o = oracle(&s, id, 32).unwrap();
        assert!((o.value - 2.0).abs() <= 1e-9, "{id}: {}", o.value);
    }
}

#[test]
fn monotone_designs_agree_across_estimands() {
    for name in ["dgp_m", "dgp_multi"] {
        let s = preset(name);
        let a = oracle(&s, "tau_dr", 32).unwrap();
        let b = oracle(&s, "wald_weighted_late", 32).unwrap();
        assert!((a.value - b.value).abs() <= a.error_bound + b.error_bound, "{name}");
    }
}

#[test]
fn rank_similar_oracle_is_stable() {
    let s = preset("dgp_rs");
    let a = oracle(&s, "tau_dr", 32).unwrap();
    let b = oracle(&s, "tau_dr", 64).unwrap();
    assert!((a.value - 1.0).abs() < 1e-8);
    assert!((a.value - b.value).abs() <= a.error_bound);
    // the positive part averages (T1^2 - T0^2) / (10 dT) over u > 1/2
    let plus = oracle(&s, "tau_dr_plus", 64).unwrap();
    assert!((plus.value - 1.2).abs() <= plus.error_bound.max(1e-6));
}

#[test]
fn oracle_refusals() {
    assert!(matches!(oracle(&preset("dgp_v"), "pi_dr", 32), Err(Error::Oracle(_))));
    assert!(oracle(&preset("dgp_rs"), "wald_weighted_late", 32).is_err());
    assert!(oracle(&preset("dgp_m"), "pi_dr_multi", 32).is_err());
    assert!(oracle(&preset("dgp_x"), "tau_dr", 32).is_err());
    assert!(oracle(&preset("dgp_m"), "late", 32).is_err());
    assert!(oracle_for_pair(&preset("dgp_multi"), "pi_dr", (1, 2), 32).is_ok());
}

#[test]
fn monte_carlo_smoke() {
    // noise-free constant effect: every estimator is exact
    let src = presets::CONSTANT_EFFECT.replace("0.5 * (u0 - 0.5) + 0.2 * qnorm(nu1)", "0");
    let exact = DgpSpec::from_toml(&src).unwrap();
    let est = [McEstimator::new("tau_dr", EstimandKind::TauDr), McEstimator::new("wald", EstimandKind::Wald)];
    let r = monte_carlo(&exact, &est, 2, 300, 9, 32).unwrap();
    for row in &r.rows {
        let bias = row.bias.unwrap();
        assert!(bias.abs() <= 3.0 * row.sd / 2f64.sqrt() + 1e-9, "{}: {bias} {}", row.label, row.sd);
    }

    let s = preset("constant_effect");
    let r = monte_carlo(&s, &est, 4, 400, 9, 32).unwrap();
    for row in &r.rows {
        assert_eq!(row.successes + row.failures, 4);
        let (bias, rmse) = (row.bias.unwrap(), row.rmse.unwrap());
        assert!((rmse * rmse - (bias * bias + row.sd * row.sd)).abs() < 1e-10);
        assert!((0.0..=1.0).contains(&row.coverage.unwrap()));
    }
    assert_eq!(r, monte_carlo(&s, &est, 4, 400, 9, 32).unwrap());
    assert!(monte_carlo(&s, &est, 1, 400, 9, 32).is_err());
}

#[test]
fn monte_carlo_counts_failures() {
    let s = preset("dgp_rs");
    let mut w = McEstimator::new("wald", EstimandKind::Wald);
    w.oracle = Some("none".into());
    let r = monte_carlo(&s, &[w], 10, 400, 3, 32).unwrap();
    let row = &r.rows[0];
    assert!(row.failures >= 5);
    assert_eq!(row.failure_kinds.get("weak_first_stage").copied().unwrap_or(0), row.failures);
    assert!(row.flagged);
    assert!(row.oracle.is_none());
}
