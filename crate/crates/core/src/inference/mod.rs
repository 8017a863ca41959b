//! Standard errors: plug-in influence functions, the pairs bootstrap and
//! the multiplier score bootstrap.

pub mod bootstrap;

use nalgebra::DVector;

use crate::estimands::multi::MultiAnalysis;
use crate::estimands::{kappa, PairAnalysis, SignMode, TrimRule, TrimmingSpec};
use crate::error::Result;
use crate::quantreg::{delta_design, design_row, QuantileFit};
use crate::stats;

pub use bootstrap::{pairs_bootstrap, replicate_rng, score_bootstrap_band, BandPoint, BootstrapResult, Multiplier, ScoreBand};

/// Resolve the trimming threshold for a fitted first stage.
pub fn trim_threshold(qf: &QuantileFit, rule: TrimRule) -> (TrimmingSpec, Vec<String>) {
    let mut warnings = Vec::new();
    let baseline = || -> f64 {
        let n = qf.n();
        let xs: Vec<Vec<f64>> = (0..n).map(|i| qf.x_row(i)).collect();
        let mins = crate::par::map_indexed(qf.grid.len(), |j| {
            xs.iter().map(|x| qf.se_delta_q_at(x, j)).fold(f64::INFINITY, f64::min)
        });
        let min_se = mins.into_iter().fold(f64::INFINITY, f64::min);
        let scale = {
            let s = stats::sd(&qf.response);
            if s > 0.0 {
                s
            } else {
                1.0
            }
        };
        if !min_se.is_finite() || min_se <= 1e-8 * scale {
            return 0.0;
        }
        1.96 * min_se / (n as f64).ln()
    };
    let rho_n = match rule {
        TrimRule::Fixed(v) => v,
        TrimRule::Baseline | TrimRule::Multiple(_) => {
            let b = baseline();
            if b == 0.0 {
                warnings.push("first-stage standard errors are degenerate; trimming threshold set to 0".into());
            }
            match rule {
                TrimRule::Multiple(m) => m * b,
                _ => b,
            }
        }
    };
    (TrimmingSpec { rho_n, rule }, warnings)
}

/// Per-observation influence channels of a ratio estimate on one pair
/// subsample. Vectors follow the subsample row order.
#[derive(Debug, Clone)]
pub struct InfluenceDecomposition {
    /// Dataset row index of each subsample observation.
    pub rows: Vec<usize>,
    /// First-stage quantile regression channel.
    pub r1: Vec<f64>,
    /// Sieve regression channel.
    pub r2: Vec<f64>,
    /// Plug-in channel.
    pub r3: Vec<f64>,
    pub b_hat: f64,
    pub point: f64,
    pub sigma: f64,
    pub se: f64,
    /// Grid indices whose density matrix was ill-conditioned.
    pub ill_conditioned: Vec<usize>,
}

impl InfluenceDecomposition {
    pub fn total(&self, i: usize) -> f64 {
        self.r1[i] + self.r2[i] + self.r3[i]
    }
    pub fn totals(&self) -> Vec<f64> {
        (0..self.r1.len()).map(|i| self.total(i)).collect()
    }
}

/// Central-difference derivative of n^-1 sum_i c_i kappa(dS_i'alpha) in
/// alpha at the fitted coefficients of grid point j, with the cell weights
/// c_i = dm - point * dq held fixed.
pub fn numeric_weight_derivative(a: &PairAnalysis, j: usize, iota: f64, point: f64, mode: SignMode) -> Vec<f64> {
    let q = &a.qfit;
    let p = q.p();
    let n = a.n();
    let rho = a.rho();
    let mut g = vec![0.0; p];
    if !(iota > 0.0) {
        return g;
    }
    for i in 0..n {
        let ds = delta_design(&a.xs[i]);
        let dq = a.eval.dq(j, i);
        let c = a.eval.dm(j, i) - point * dq;
        if c == 0.0 {
            continue;
        }
        for (k, gk) in g.iter_mut().enumerate() {
            let h = ds[k] * iota / 2.0;
            if h == 0.0 {
                continue;
            }
            *gk += c * (kappa(dq + h, rho, mode) - kappa(dq - h, rho, mode));
        }
    }
    g.iter().map(|v| v / (n as f64 * iota)).collect()
}

/// Default step n^(-1/4) sd(dq(X_i, v_j)).
pub fn default_iota(a: &PairAnalysis, j: usize) -> f64 {
    let n = a.n();
    let dq: Vec<f64> = (0..n).map(|i| a.eval.dq(j, i)).collect();
    (n as f64).powf(-0.25) * stats::sd(&dq)
}

fn influence_over(a: &PairAnalysis, cols: &[usize], point: f64, mode: SignMode) -> Result<InfluenceDecomposition> {
    let n = a.n();
    let nf = n as f64;
    let lc = cols.len() as f64;
    let rho = a.rho();
    let q = &a.qfit;
    let s = &a.sfit;
    let p = q.p();
    let k = s.k();

    let per_col = crate::par::map_indexed(cols.len(), |c| -> Result<(Vec<f64>, DVector<f64>, DVector<f64>, f64)> {
        let j = cols[c];
        let mut r3 = vec![0.0; n];
        let mut dsum = DVector::<f64>::zeros(k);
        let mut gamma = DVector::<f64>::zeros(p);
        let mut b = 0.0;
        for i in 0..n {
            let dq = a.eval.dq(j, i);
            let kap = kappa(dq, rho, mode);
            if kap == 0.0 {
                continue;
            }
            let idx = j * n + i;
            let (q0, q1) = (a.eval.q0[idx], a.eval.q1[idx]);
            let x = &a.xs[i];
            r3[i] = (a.eval.dm[idx] - point * dq) * kap;
            b += dq * kap;
            let dpsi = s.spec.row(x, q1, 1.0)? - s.spec.row(x, q0, 0.0)?;
            dsum += dpsi * kap;
            let s1 = design_row(x, 1.0);
            let s0 = design_row(x, 0.0);
            let g = s1 * a.eval.dm1_dt[idx] - s0 * a.eval.dm0_dt[idx] - delta_design(x) * point;
            gamma += g * kap;
        }
        gamma /= nf;
        let iota = default_iota(a, j);
        let num = numeric_weight_derivative(a, j, iota, point, mode);
        gamma += DVector::from_vec(num);
        let weight = &q.sandwich[j].theta_inv * gamma;
        Ok((r3, dsum, weight, b))
    });

    let mut r1 = vec![0.0; n];
    let mut r3 = vec![0.0; n];
    let mut dvec = DVector::<f64>::zeros(k);
    let mut b = 0.0;
    for (c, res) in per_col.into_iter().enumerate() {
        let (r3c, dsum, weight, bc) = res?;
        let j = cols[c];
        let v = q.grid.points()[j];
        for i in 0..n {
            r3[i] += r3c[i] / lc;
            let u = if q.below(i, &q.coeffs[j]) { 1.0 } else { 0.0 } - v;
            if u != 0.0 {
                r1[i] += q.design.row(i).dot(&weight.transpose()) * u / lc;
            }
        }
        dvec += dsum;
        b += bc;
    }
    dvec /= nf * lc;
    let b_hat = b / (nf * lc);
    let h = &s.gram_pinv * dvec;
    let r2: Vec<f64> = (0..n).map(|i| s.design.row(i).dot(&h.transpose()) * s.residuals[i]).collect();

    let ms: f64 = (0..n).map(|i| (r1[i] + r2[i] + r3[i]).powi(2)).sum::<f64>() / nf;
    let sigma = ms.sqrt() / b_hat.abs();
    let ill_conditioned = cols.iter().copied().filter(|&j| q.sandwich[j].ill_conditioned).collect();
    Ok(InfluenceDecomposition {
        rows: q.rows.clone(),
        r1,
        r2,
        r3,
        b_hat,
        point,
        sigma,
        se: sigma / nf.sqrt(),
        ill_conditioned,
    })
}

/// Influence function of the grid-averaged aggregate.
pub fn influence_pi_dr(a: &PairAnalysis, point: f64) -> Result<InfluenceDecomposition> {
    let cols: Vec<usize> = (0..a.eval.l).collect();
    influence_over(a, &cols, point, a.config.sign_mode)
}

/// Influence function of the aggregate at a single grid point.
pub fn influence_pi_v(a: &PairAnalysis, j: usize, point: f64) -> Result<InfluenceDecomposition> {
    influence_over(a, &[j], point, a.config.sign_mode)
}

/// Influence of the multi-valued aggregate on the full sample.
#[derive(Debug, Clone)]
pub struct MultiInfluence {
    /// Pairwise decompositions; `None` for fully trimmed pairs.
    pub per_pair: Vec<Option<InfluenceDecomposition>>,
    /// Weight-estimation channel.
    pub r4: Vec<f64>,
    /// Full influence R_K of each observation.
    pub r: Vec<f64>,
    pub sigma: f64,
    pub se: f64,
}

pub fn influence_multi(d: &crate::Dataset, m: &MultiAnalysis) -> Result<MultiInfluence> {
    let n = d.n();
    let nf = n as f64;
    let w = &m.weights;
    let kk = w.lambda.len();
    let mut r = vec![0.0; n];
    let mut per_pair = Vec::with_capacity(kk);
    for k in 0..kk {
        let Some(point) = m.points[k] else {
            per_pair.push(None);
            continue;
        };
        let inf = influence_pi_dr(&m.pairs[k], point)?;
        let share = inf.rows.len() as f64 / nf;
        let scale = w.lambda[k] / (share * inf.b_hat);
        for (s, &row) in inf.rows.iter().enumerate() {
            r[row] += scale * inf.total(s);
        }
        per_pair.push(Some(inf));
    }

    // position of each observation's instrument value in the ordering
    let mut rank = vec![0usize; d.n_codes()];
    for (pos, &c) in w.order.iter().enumerate() {
        rank[c as usize] = pos;
    }
    let t = d.treatment();
    let t_bar = stats::mean(t);
    let total_a: f64 = w.a.iter().sum();
    let tails: Vec<f64> = (0..=kk)
        .map(|m1| (m1.max(1)..=kk).map(|l| w.r_hat[l] * (w.p_hat[l] - w.p_bar)).sum())
        .collect();
    let mut r4 = vec![0.0; n];
    for i in 0..n {
        let pos = rank[d.instrument()[i] as usize];
        let mut acc = 0.0;
        for k in 1..=kk {
            let pk = m.points[k - 1].unwrap_or(0.0);
            let qk = w.p_hat[k] - w.p_hat[k - 1];
            let if_q = if pos == k {
                (t[i] - w.p_hat[k]) / w.r_hat[k]
            } else if pos == k - 1 {
                -(t[i] - w.p_hat[k - 1]) / w.r_hat[k - 1]
            } else {
                0.0
            };
            let p_k = tails[k];
            let tail_ind: f64 = (k..=kk).map(|l| (pos == l) as i32 as f64 - w.r_hat[l]).sum();
            let if_p = tail_ind * (t[i] - t_bar) - p_k;
            acc += (if_q * p_k + qk * if_p) * (pk - m.point);
        }
        r4[i] = acc / total_a;
        r[i] += r4[i];
    }
    let sigma = (r.iter().map(|v| v * v).sum::<f64>() / nf).sqrt();
    Ok(MultiInfluence { per_pair, r4, r, sigma, se: sigma / nf.sqrt() })
}
