#![allow(dead_code)]

use drivest::estimands::{analyze_pair, pi_dr, EstimandConfig, PairAnalysis, SignMode};
use drivest::inference::influence_pi_dr;
use drivest::quantreg::{check_loss, rho};
use drivest::simulate::{generate, presets, DgpSpec};
use drivest::Dataset;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Smallest check loss over all basic solutions: every p-subset of rows
/// whose design block is nonsingular determines one candidate.
pub fn brute_force_min_loss(x: &DMatrix<f64>, y: &[f64], v: f64) -> f64 {
    let (n, p) = x.shape();
    let mut best = f64::INFINITY;
    let mut idx: Vec<usize> = (0..p).collect();
    loop {
        let a = DMatrix::from_fn(p, p, |r, c| x[(idx[r], c)]);
        let b = DVector::from_iterator(p, idx.iter().map(|&i| y[i]));
        if let Some(coef) = a.lu().solve(&b) {
            if coef.iter().all(|c| c.is_finite()) {
                best = best.min(check_loss(x, y, &coef, v));
            }
        }
        // next combination in lexicographic order
        let mut k = p;
        while k > 0 && idx[k - 1] == n - p + k - 1 {
            k -= 1;
        }
        if k == 0 {
            return best;
        }
        idx[k - 1] += 1;
        for m in k..p {
            idx[m] = idx[m - 1] + 1;
        }
    }
}

/// Random quantile regression instance with an intercept column.
pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, p: usize) -> (DMatrix<f64>, Vec<f64>, f64) {
    let x = DMatrix::from_fn(n, p, |_, c| if c == 0 { 1.0 } else { rng.gen_range(-2.0..2.0) });
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let lin: f64 = (1..p).map(|c| 0.7 * x[(i, c)]).sum();
            let e: f64 = rng.gen_range(-1.0..1.0);
            lin + e * e.abs() * 3.0
        })
        .collect();
    let v = rng.gen_range(0.1..0.9);
    (x, y, v)
}

pub fn loss_of(x: &DMatrix<f64>, y: &[f64], coef: &DVector<f64>, v: f64) -> f64 {
    let f = x * coef;
    y.iter().zip(f.iter()).map(|(a, b)| rho(a - b, v)).sum()
}

/// The four designs spanning monotonicity and rank similarity, with the
/// estimator configuration each is meant to be analysed with.
pub fn preset_cases() -> Vec<(&'static str, DgpSpec, EstimandConfig)> {
    ["dgp_m", "dgp_rs", "dgp_x", "dgp_v"]
        .into_iter()
        .map(|name| {
            let spec = presets::preset(name).unwrap();
            let mut cfg = EstimandConfig::default();
            if name == "dgp_rs" || name == "dgp_v" {
                cfg.basis.j = 3;
            }
            (name, spec, cfg)
        })
        .collect()
}

pub fn sample(spec: &DgpSpec, n: usize, seed: u64) -> Dataset {
    generate(spec, n, seed).unwrap()
}

/// Largest deviation of normalized weights from summing to one, over the
/// sign modes whose cell sets are nonempty.
pub fn weight_normalization_gap(a: &PairAnalysis) -> f64 {
    let mut worst: f64 = 0.0;
    for mode in [SignMode::Abs, SignMode::Positive, SignMode::Negative] {
        if let Ok(w) = a.weights(mode, None) {
            worst = worst.max((w.iter().sum::<f64>() - 1.0).abs());
        }
        if let Ok(w) = a.weights(mode, Some(a.eval.l / 2)) {
            worst = worst.max((w.iter().sum::<f64>() - 1.0).abs());
        }
    }
    worst
}

/// |pi B - (pi+ B+ - pi- B-)| with an empty sign set contributing zero.
pub fn decomposition_gap(a: &PairAnalysis) -> f64 {
    let part = |m| a.aggregate(m, None).map(|g| g.point * g.b).unwrap_or(0.0);
    let all = a.aggregate(SignMode::Abs, None).unwrap();
    (all.point * all.b - (part(SignMode::Positive) - part(SignMode::Negative))).abs()
}

/// Swap instrument codes 0 and 1 and compare pi_dr, pi_dr_plus and
/// pi_dr_minus (the last two trade places).
pub fn relabel_gap(d: &Dataset, cfg: &EstimandConfig) -> f64 {
    let mut perm: Vec<u32> = (0..d.n_codes() as u32).collect();
    perm.swap(0, 1);
    let e = d.relabel_instrument(&perm).unwrap();
    let a = analyze_pair(d, cfg, (0, 1)).unwrap();
    let b = analyze_pair(&e, cfg, (0, 1)).unwrap();
    let pt = |x: &PairAnalysis, m| x.aggregate(m, None).map(|g| g.point).ok();
    let mut gap = (pt(&a, SignMode::Abs).unwrap() - pt(&b, SignMode::Abs).unwrap()).abs();
    for (ma, mb) in [(SignMode::Positive, SignMode::Negative), (SignMode::Negative, SignMode::Positive)] {
        match (pt(&a, ma), pt(&b, mb)) {
            (Some(x), Some(y)) => gap = gap.max((x - y).abs()),
            (None, None) => {}
            _ => return f64::INFINITY,
        }
    }
    gap
}

/// Relative deviation from affine equivariance: Y -> 2 + 3Y scales pi by
/// 3 and T -> 1 + 2T scales it by 1/2.
pub fn affine_gap(d: &Dataset, cfg: &EstimandConfig) -> f64 {
    let base = pi_dr(&analyze_pair(d, cfg, (0, 1)).unwrap()).unwrap().point;
    let dy = d.with_outcome(d.outcome().iter().map(|y| 2.0 + 3.0 * y).collect()).unwrap();
    let py = pi_dr(&analyze_pair(&dy, cfg, (0, 1)).unwrap()).unwrap().point;
    let dt = d.with_treatment(d.treatment().iter().map(|t| 1.0 + 2.0 * t).collect()).unwrap();
    let pt = pi_dr(&analyze_pair(&dt, cfg, (0, 1)).unwrap()).unwrap().point;
    let scale = base.abs().max(1e-12);
    ((py - 3.0 * base).abs() / (3.0 * scale)).max((pt - 0.5 * base).abs() / (0.5 * scale))
}

/// Largest |mean| / sd over the three influence channels.
pub fn channel_mean_ratio(a: &PairAnalysis) -> f64 {
    let point = pi_dr(a).unwrap().point;
    let inf = influence_pi_dr(a, point).unwrap();
    [&inf.r1, &inf.r2, &inf.r3]
        .iter()
        .map(|c| {
            let n = c.len() as f64;
            let m = c.iter().sum::<f64>() / n;
            let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            if sd == 0.0 {
                0.0
            } else {
                m.abs() / sd
            }
        })
        .fold(0.0, f64::max)
}

/// Generate twice and estimate twice; true when everything is
/// bit-identical.
pub fn deterministic(spec: &DgpSpec, cfg: &EstimandConfig, n: usize, seed: u64) -> bool {
    let a = sample(spec, n, seed);
    let b = sample(spec, n, seed);
    if a != b {
        return false;
    }
    let pa = pi_dr(&analyze_pair(&a, cfg, (0, 1)).unwrap()).unwrap().point;
    let pb = pi_dr(&analyze_pair(&b, cfg, (0, 1)).unwrap()).unwrap().point;
    pa.to_bits() == pb.to_bits()
}
