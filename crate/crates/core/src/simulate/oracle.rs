//! Ground-truth estimand values by numerical integration.
//!
//! Ranks are integrated on a midpoint grid. Covariates use a midpoint grid
//! in probability space when there is one covariate and scrambled Sobol
//! points otherwise. The outcome disturbance is integrated with a common set
//! of quasi-random draws shared across arms and cells. The error bound adds
//! the change from halving the rank/covariate resolution to the change from
//! halving the disturbance sample.

use serde::{Deserialize, Serialize};

use super::spec::{Compiled, Coupling, DgpSpec};
use crate::error::{Error, Result};
use crate::pipeline::EstimandKind;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    pub value: f64,
    pub error_bound: f64,
    pub resolution: usize,
}

/// Point in (0, 1)^dim from a scrambled Sobol sequence.
fn sobol_point(i: usize, dim: usize, seed: u32) -> Vec<f64> {
    (0..dim)
        .map(|d| {
            let s = sobol_burley::sample(i as u32, d as u32, seed) as f64;
            // keep away from the endpoints at f32 resolution
            (s * 16_777_216.0).floor() / 16_777_216.0 + 0.5 / 16_777_216.0
        })
        .collect()
}

fn midpoints(r: usize) -> Vec<f64> {
    (0..r).map(|i| (i as f64 + 0.5) / r as f64).collect()
}

/// Unit-cube points for `dim` dimensions: a midpoint grid for one
/// dimension, Sobol points otherwise.
fn cube(count: usize, dim: usize, seed: u32) -> Vec<Vec<f64>> {
    match dim {
        0 => vec![vec![]],
        1 => midpoints(count).into_iter().map(|p| vec![p]).collect(),
        _ => (0..count).map(|i| sobol_point(i, dim, seed)).collect(),
    }
}

struct Setup<'a> {
    spec: &'a DgpSpec,
    c: Compiled,
    /// Transform of the disturbance of the outcome (identity or indicator).
    indicator: Option<f64>,
}

/// Nodes for one resolution level.
struct Nodes {
    xs: Vec<Vec<f64>>,
    /// Base covariate weights (sum to one).
    vs: Vec<f64>,
    inner: Vec<Vec<f64>>,
}

impl Setup<'_> {
    fn inner_dim(&self) -> usize {
        self.c.noise + matches!(self.spec.coupling, Coupling::Similar { .. }) as usize
    }

    fn nodes(&self, r: usize, m: usize) -> Nodes {
        let xs = cube(r, self.c.d_x, 0x0dd5)
            .into_iter()
            .map(|p| p.iter().zip(&self.c.laws).map(|(u, l)| l.quantile(*u)).collect())
            .collect();
        Nodes { xs, vs: midpoints(r), inner: cube(m, self.inner_dim(), 0x1a2b) }
    }

    fn g(&self, t: f64, eps: f64, x: &[f64], buf: &mut Vec<f64>) -> f64 {
        let y = self.c.outcome(t, eps, x, buf);
        match self.indicator {
            Some(thr) => (y <= thr) as i32 as f64,
            None => y,
        }
    }

    /// eps given rank U = v (rank-conditional) for one inner draw.
    fn eps_given_rank(&self, v: f64, inner: &[f64], x: &[f64], buf: &mut Vec<f64>) -> Result<f64> {
        match &self.spec.coupling {
            Coupling::Invariant => Ok(self.c.eps(v, inner, x, buf)),
            Coupling::Similar { rho } => {
                // w | Phi^-1(U) = s is N(rho s, 1 - rho^2)
                let s = stats::qnorm(v);
                let w = rho * s + (1.0 - rho * rho).sqrt() * stats::qnorm(inner[0]);
                Ok(self.c.eps(stats::pnorm(w), &inner[1..], x, buf))
            }
            Coupling::Violated { .. } => Err(Error::Oracle(
                "rank-conditional estimands have no ground truth under a violated coupling".into(),
            )),
        }
    }

    /// (Delta q, E[g(T_b) - g(T_a) | x, U = v]) for a pair of arms.
    fn cell(&self, pair: (usize, usize), x: &[f64], v: f64, inner: &[Vec<f64>], buf: &mut Vec<f64>) -> Result<(f64, f64)> {
        let t0 = self.c.treatment(pair.0, x, v, buf);
        let t1 = self.c.treatment(pair.1, x, v, buf);
        let mut acc = 0.0;
        for e in inner {
            let eps = self.eps_given_rank(v, e, x, buf)?;
            acc += self.g(t1, eps, x, buf) - self.g(t0, eps, x, buf);
        }
        Ok((t1 - t0, acc / inner.len() as f64))
    }

    /// (E[T | Z = k], E[Y | Z = k]) for every arm, integrating over u0, the
    /// coupling shock and the noise, with covariates weighted by P(Z = k | x).
    fn arm_means(&self, nd: &Nodes) -> Vec<(f64, f64)> {
        let k = self.c.k;
        let mut buf = Vec::new();
        let mut sum_t = vec![0.0; k];
        let mut sum_y = vec![0.0; k];
        let mut sum_w = vec![0.0; k];
        let mut unit = super::Unit { x: vec![], z: 0, u0: 0.0, nu: vec![], xi: vec![0.0; k], eps: 0.0 };
        for x in &nd.xs {
            let prop = self.c.propensity(x);
            unit.x = x.clone();
            for &u0 in &nd.vs {
                unit.u0 = u0;
                for e in &nd.inner {
                    let (xi, nu) = match self.spec.coupling {
                        Coupling::Similar { .. } => (stats::qnorm(e[0]), &e[1..]),
                        _ => (0.0, &e[..]),
                    };
                    unit.eps = self.c.eps(u0, nu, x, &mut buf);
                    for a in 0..k {
                        unit.xi[a] = xi;
                        let t = self.c.treatment(a, x, super::rank(self.spec, &self.c, &unit, a), &mut buf);
                        let y = self.g(t, unit.eps, x, &mut buf);
                        sum_t[a] += prop[a] * t;
                        sum_y[a] += prop[a] * y;
                    }
                }
            }
            for a in 0..k {
                sum_w[a] += prop[a] * (nd.vs.len() * nd.inner.len()) as f64;
            }
        }
        (0..k).map(|a| (sum_t[a] / sum_w[a], sum_y[a] / sum_w[a])).collect()
    }

    /// Marginal arm shares E_x P(Z = k | x).
    fn shares(&self, nd: &Nodes) -> Vec<f64> {
        let mut s = vec![0.0; self.c.k];
        for x in &nd.xs {
            for (a, p) in self.c.propensity(x).iter().enumerate() {
                s[a] += p / nd.xs.len() as f64;
            }
        }
        s
    }

    /// Ratio aggregate over (x, v) cells for a pair with pooled-pair
    /// covariate weights. `mode` picks the weight multiplier: 0 signed
    /// (Wald_X), 1 abs, 2 positive, 3 negative.
    fn ratio(&self, nd: &Nodes, pair: (usize, usize), vs: &[f64], mode: u8) -> Result<f64> {
        let mut buf = Vec::new();
        let (mut a, mut b) = (0.0, 0.0);
        for x in &nd.xs {
            let prop = self.c.propensity(x);
            let wx = prop[pair.0] + prop[pair.1];
            for &v in vs {
                let (dq, dg) = self.cell(pair, x, v, &nd.inner, &mut buf)?;
                let k = match mode {
                    0 => 1.0,
                    1 => dq.signum() * (dq != 0.0) as i32 as f64,
                    2 => (dq > 0.0) as i32 as f64,
                    _ => (dq < 0.0) as i32 as f64,
                };
                a += wx * k * dg;
                b += wx * k * dq;
            }
        }
        if b == 0.0 {
            return Err(Error::Oracle("the estimand's denominator is zero for this design".into()));
        }
        Ok(a / b)
    }
}

fn evaluate(s: &Setup, kind: EstimandKind, pair: (usize, usize), r: usize, m: usize) -> Result<f64> {
    let nd = s.nodes(r, m);
    let covariate_free = || -> Result<()> {
        if s.c.first_stage_uses_x() || s.c.tilt.is_some() {
            return Err(Error::Oracle(
                "covariate-free estimands need a first stage and arm assignment free of covariates".into(),
            ));
        }
        Ok(())
    };
    match kind {
        EstimandKind::Wald => {
            let m = s.arm_means(&nd);
            Ok((m[pair.1].1 - m[pair.0].1) / (m[pair.1].0 - m[pair.0].0))
        }
        EstimandKind::WaldX => s.ratio(&nd, pair, &nd.vs, 0),
        EstimandKind::PiDr | EstimandKind::Distributional(_) => s.ratio(&nd, pair, &nd.vs, 1),
        EstimandKind::PiDrPlus => s.ratio(&nd, pair, &nd.vs, 2),
        EstimandKind::PiDrMinus => s.ratio(&nd, pair, &nd.vs, 3),
        EstimandKind::PiV(v) => s.ratio(&nd, pair, &[v], 1),
        EstimandKind::TauDr => covariate_free().and_then(|_| s.ratio(&nd, pair, &nd.vs, 1)),
        EstimandKind::TauDrPlus => covariate_free().and_then(|_| s.ratio(&nd, pair, &nd.vs, 2)),
        EstimandKind::TauDrMinus => covariate_free().and_then(|_| s.ratio(&nd, pair, &nd.vs, 3)),
        EstimandKind::TauU(u) => covariate_free().and_then(|_| s.ratio(&nd, pair, &[u], 1)),
        EstimandKind::PiDrMulti => {
            let means = s.arm_means(&nd);
            let r_k = s.shares(&nd);
            let k = s.c.k;
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| means[a].0.total_cmp(&means[b].0));
            let p: Vec<f64> = order.iter().map(|&a| means[a].0).collect();
            let r: Vec<f64> = order.iter().map(|&a| r_k[a]).collect();
            let pbar: f64 = p.iter().zip(&r).map(|(a, b)| a * b).sum();
            let weights: Vec<f64> = (1..k)
                .map(|m| (p[m] - p[m - 1]) * (m..k).map(|l| r[l] * (p[l] - pbar)).sum::<f64>())
                .collect();
            let total: f64 = weights.iter().sum();
            let mut out = 0.0;
            for m in 1..k {
                let pi = s.ratio(&nd, (order[m - 1], order[m]), &nd.vs, 1)?;
                out += weights[m - 1] / total * pi;
            }
            Ok(out)
        }
        EstimandKind::WaldXMulti => Err(Error::Oracle("no oracle for the multi-valued Wald aggregate".into())),
    }
}

fn parse_id(id: &str) -> Result<EstimandKind> {
    if id.trim() == "wald_weighted_late" {
        return Ok(EstimandKind::Wald);
    }
    id.parse().map_err(|_| Error::Oracle(format!("unknown oracle estimand `{id}`")))
}

/// True value of `id` for the instrument pair (0, 1).
pub fn oracle(spec: &DgpSpec, id: &str, resolution: usize) -> Result<OracleValue> {
    oracle_for_pair(spec, id, (0, 1), resolution)
}

/// True value of `id` for the arm pair `pair` (z = 0 is `pair.0`).
pub fn oracle_for_pair(spec: &DgpSpec, id: &str, pair: (usize, usize), resolution: usize) -> Result<OracleValue> {
    let kind = parse_id(id)?;
    let c = spec.validate()?;
    if pair.0 >= c.k || pair.1 >= c.k || pair.0 == pair.1 {
        return Err(Error::InvalidArgument(format!("invalid arm pair {pair:?}")));
    }
    if resolution < 8 {
        return Err(Error::InvalidArgument("oracle resolution must be at least 8".into()));
    }
    if kind == EstimandKind::PiDrMulti && c.k < 3 {
        return Err(Error::Oracle("the multi-valued aggregate needs at least three arms".into()));
    }
    let indicator = match kind {
        EstimandKind::Distributional(y) => Some(y),
        _ => None,
    };
    let s = Setup { spec, c, indicator };
    let r = resolution;
    let x_cells = if s.c.d_x == 0 { 1 } else { r };
    let m = if s.inner_dim() == 0 { 1 } else { ((1usize << 20) / (x_cells * r)).clamp(64, 8192) };
    let full = evaluate(&s, kind, pair, r, m)?;
    let half = evaluate(&s, kind, pair, r / 2, m)?;
    let quarter = evaluate(&s, kind, pair, r / 4, m)?;
    let inner = if m > 1 { (full - evaluate(&s, kind, pair, r, m / 2)?).abs() } else { 0.0 };
    if !(full.is_finite() && half.is_finite() && quarter.is_finite()) {
        return Err(Error::Oracle(format!("`{id}` is not finite for this design")));
    }
    let (d1, d2) = ((half - quarter).abs(), (full - half).abs());
    let floor = 1e-10 * (1.0 + full.abs());
    if d2 > 2.0 * d1 + floor {
        return Err(Error::Oracle(format!(
            "quadrature does not converge for `{id}` at resolution {r} (successive changes {d1:.3e}, {d2:.3e})"
        )));
    }
    Ok(OracleValue { value: full, error_bound: d2 + inner + floor, resolution: r })
}
