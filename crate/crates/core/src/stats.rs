//! Small statistical utilities shared across modules.

use statrs::distribution::{ContinuousCDF, Normal};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Standard normal CDF.
pub fn pnorm(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// Standard normal quantile function.
pub fn qnorm(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    // One Newton step tightens the library approximation to full precision.
    let x = std_normal().inverse_cdf(p);
    let d = dnorm(x);
    if d > 0.0 {
        x - (pnorm(x) - p) / d
    } else {
        x
    }
}

/// Standard normal density.
pub fn dnorm(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the n - 1 denominator; zero for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

pub fn sd(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Empirical quantile by linear interpolation between order statistics
/// (type 7). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, p)
}

pub fn iqr(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25)
}

/// One-sided two-sample Kolmogorov–Smirnov statistic D+ = sup (F_a - F_b)
/// with its asymptotic p-value exp(-2 m n D^2 / (m + n)).
pub fn ks_one_sided(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.total_cmp(y));
    sb.sort_by(|x, y| x.total_cmp(y));
    let (m, n) = (sa.len(), sb.len());
    if m == 0 || n == 0 {
        return (0.0, 1.0);
    }
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < m || j < n {
        let t = match (sa.get(i), sb.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        while i < m && sa[i] <= t {
            i += 1;
        }
        while j < n && sb[j] <= t {
            j += 1;
        }
        d = d.max(i as f64 / m as f64 - j as f64 / n as f64);
    }
    let (mf, nf) = (m as f64, n as f64);
    let p = (-2.0 * mf * nf * d * d / (mf + nf)).exp().min(1.0);
    (d, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normal_roundtrip() {
        for &p in &[0.001, 0.025, 0.5, 0.9, 0.999] {
            assert_abs_diff_eq!(pnorm(qnorm(p)), p, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(qnorm(0.975), 1.959963984540054, epsilon = 1e-9);
    }

    #[test]
    fn type7_quantile() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_abs_diff_eq!(quantile_sorted(&v, 0.25), 1.75);
        assert_abs_diff_eq!(iqr(&v), 1.5);
    }

    #[test]
    fn ks_detects_shift() {
        // a is stochastically smaller than b, so F_a - F_b is large.
        let a: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..50).map(|i| i as f64 + 25.0).collect();
        let (d, p) = ks_one_sided(&a, &b);
        assert_abs_diff_eq!(d, 0.5, epsilon = 1e-12);
        assert!(p < 1e-4);
        let (d2, p2) = ks_one_sided(&b, &a);
        assert_abs_diff_eq!(d2, 0.0);
        assert_abs_diff_eq!(p2, 1.0);
    }
}
