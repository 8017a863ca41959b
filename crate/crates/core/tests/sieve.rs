use drivest::sieve::{fit_series, BasisSpec};
use drivest::Dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// m_z(x, t) with polynomial degree two in t, inside every basis tested.
fn m(x: &[f64], t: f64, z: f64) -> f64 {
    0.5 + 1.2 * x[0] - 0.4 * x[1] + 0.3 * t - 0.2 * t * t + z * (0.7 - 0.5 * x[0] + 0.25 * t + 0.1 * t * t)
}

fn dm_dt(t: f64, z: f64) -> f64 {
    0.3 - 0.4 * t + z * (0.25 + 0.2 * t)
}

fn in_span_data(n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut y = Vec::new();
    let mut t = Vec::new();
    let mut x = Vec::new();
    let mut z = Vec::new();
    for i in 0..n {
        let xi = [rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0)];
        let ti = if i < 2 { 3.0 * i as f64 } else { rng.gen_range(0.0..3.0) };
        let zi = (i % 2) as u32;
        y.push(m(&xi, ti, zi as f64));
        t.push(ti);
        x.extend_from_slice(&xi);
        z.push(zi);
    }
    Dataset::new(y, t, x, 2, z).unwrap()
}

fn check_exact(spec: &BasisSpec) {
    let d = in_span_data(300);
    let f = fit_series(&d, spec, (0, 1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let x = [rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0)];
        let t = rng.gen_range(0.1..2.9);
        let z = rng.gen_range(0..2) as f64;
        assert!((f.predict(&x, t, z).unwrap() - m(&x, t, z)).abs() < 1e-8);
        let g = f.predict_dt(&x, t, z).unwrap();
        assert!((g - dm_dt(t, z)).abs() < 1e-8);
        let h = 1e-5;
        let fd = (f.predict(&x, t + h, z).unwrap() - f.predict(&x, t - h, z).unwrap()) / (2.0 * h);
        assert!((fd - g).abs() < 1e-6);
    }
}

#[test]
fn power_basis_reproduces_an_in_span_model() {
    check_exact(&BasisSpec::power(3));
}

#[test]
fn cubic_bspline_reproduces_an_in_span_model() {
    check_exact(&BasisSpec::bspline(6, 4));
}

#[test]
fn bspline_refuses_to_extrapolate() {
    let d = in_span_data(100);
    let f = fit_series(&d, &BasisSpec::bspline(5, 4), (0, 1)).unwrap();
    assert!(f.predict(&[0.0, 0.0], 10.0, 0.0).is_err());
}

#[test]
fn residuals_vanish_in_span() {
    let d = in_span_data(120);
    let f = fit_series(&d, &BasisSpec::power(3), (0, 1)).unwrap();
    assert!(f.full_rank());
    assert!(f.residuals.iter().all(|e| e.abs() < 1e-9));
}
