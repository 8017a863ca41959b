//! Resampling inference.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimands::{kappa, PairAnalysis, SignMode};
use crate::{linalg, par, stats};

/// Replicate `b` of a job seeded by `seed` draws from its own stream.
pub fn replicate_rng(seed: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub se: f64,
    /// Percentile interval at `level`.
    pub ci: (f64, f64),
    pub level: f64,
    /// Successful replicate estimates in replicate order.
    pub replicates: Vec<f64>,
    pub failed: usize,
}

/// Nonparametric pairs bootstrap: resample rows with replacement and
/// re-run `estimator`. Failed replicates are dropped and counted.
pub fn pairs_bootstrap<F>(d: &Dataset, estimator: F, b: usize, level: f64, seed: u64) -> Result<BootstrapResult>
where
    F: Fn(&Dataset) -> Result<f64> + Sync,
{
    if b < 2 {
        return Err(Error::InvalidArgument("bootstrap needs at least 2 replicates".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level {level} outside (0, 1)")));
    }
    let n = d.n();
    let draws = par::map_indexed(b, |r| -> Option<f64> {
        let mut rng = replicate_rng(seed, r as u64);
        let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let db = d.select_rows(&idx).ok()?;
        estimator(&db).ok().filter(|v| v.is_finite())
    });
    let replicates: Vec<f64> = draws.iter().flatten().copied().collect();
    let failed = b - replicates.len();
    if failed as f64 > 0.2 * b as f64 || replicates.len() < 2 {
        return Err(Error::BootstrapUnstable { failed, total: b });
    }
    let mut sorted = replicates.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let alpha = 1.0 - level;
    Ok(BootstrapResult {
        se: stats::sd(&replicates),
        ci: (stats::quantile_sorted(&sorted, alpha / 2.0), stats::quantile_sorted(&sorted, 1.0 - alpha / 2.0)),
        level,
        replicates,
        failed,
    })
}

/// Law of the score-bootstrap multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Multiplier {
    #[default]
    Normal,
    Rademacher,
    Mammen,
}

impl std::str::FromStr for Multiplier {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Multiplier::Normal),
            "rademacher" => Ok(Multiplier::Rademacher),
            "mammen" => Ok(Multiplier::Mammen),
            _ => Err(Error::InvalidArgument(format!("unknown multiplier law `{s}`"))),
        }
    }
}

impl Multiplier {
    pub fn draw<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            Multiplier::Normal => rng.sample(rand_distr::StandardNormal),
            Multiplier::Rademacher => {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            Multiplier::Mammen => {
                let s5 = 5f64.sqrt();
                if rng.gen::<f64>() < (s5 + 1.0) / (2.0 * s5) {
                    (1.0 - s5) / 2.0
                } else {
                    (1.0 + s5) / 2.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub x: Vec<f64>,
    pub v: f64,
    pub pi: f64,
    /// sigma(x, v); the pointwise se is sigma / sqrt(n).
    pub sigma: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBand {
    /// Critical value z*.
    pub critical_value: f64,
    pub alpha: f64,
    pub points: Vec<BandPoint>,
    /// Evaluation points removed because |dq| < rho.
    pub dropped: usize,
}

/// Uniform band for pi(x, v) over `eval_set` from the multiplier bootstrap
/// of the sieve t-process. `alpha` is the non-coverage probability; z* is
/// the (1 - alpha) quantile of the sup over the set.
pub fn score_bootstrap_band(
    a: &PairAnalysis,
    eval_set: &[(Vec<f64>, f64)],
    b: usize,
    alpha: f64,
    multiplier: Multiplier,
    seed: u64,
) -> Result<ScoreBand> {
    if b < 2 {
        return Err(Error::InvalidArgument("bootstrap needs at least 2 draws".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    let s = &a.sfit;
    let q = &a.qfit;
    let rho = a.rho();
    let n = s.n();
    let mut points = Vec::new();
    let mut loads: Vec<DVector<f64>> = Vec::new();
    let mut dropped = 0;
    for (x, v) in eval_set {
        let j = q.grid.index_of(*v).ok_or(Error::OffGrid(*v))?;
        if x.len() != q.d_x {
            return Err(Error::InvalidArgument(format!("x has length {}, expected {}", x.len(), q.d_x)));
        }
        let q0 = q.quantile_path(x, 0.0, a.config.rearrange)[j];
        let q1 = q.quantile_path(x, 1.0, a.config.rearrange)[j];
        let dq = q1 - q0;
        if kappa(dq, rho, SignMode::Abs) == 0.0 {
            dropped += 1;
            continue;
        }
        let dpsi = s.spec.row(x, q1, 1.0)? - s.spec.row(x, q0, 0.0)?;
        let sigma = linalg::quad(&dpsi, &s.mho).max(0.0).sqrt() / dq.abs();
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("zero sieve variance at v = {v}")));
        }
        let pi = dpsi.dot(&s.coeffs) / dq;
        loads.push(&s.gram_pinv * &dpsi / (dq * sigma));
        points.push(BandPoint { x: x.clone(), v: *v, pi, sigma, lo: 0.0, hi: 0.0 });
    }
    if points.is_empty() {
        return Err(Error::InvalidArgument("no evaluation point survives trimming".into()));
    }
    let scores: Vec<DVector<f64>> =
        (0..n).map(|i| s.design.row(i).transpose() * s.residuals[i]).collect();
    let sqrt_n = (n as f64).sqrt();
    let sups = par::map_indexed(b, |r| {
        let mut rng = replicate_rng(seed, r as u64);
        let mut acc = DVector::<f64>::zeros(s.k());
        for sc in &scores {
            acc.axpy(multiplier.draw(&mut rng), sc, 1.0);
        }
        acc /= sqrt_n;
        loads.iter().map(|w| w.dot(&acc).abs()).fold(0.0, f64::max)
    });
    let mut sorted = sups;
    sorted.sort_by(|a, b| a.total_cmp(b));
    let crit = stats::quantile_sorted(&sorted, 1.0 - alpha);
    for p in &mut points {
        p.lo = p.pi - crit * p.sigma / sqrt_n;
        p.hi = p.pi + crit * p.sigma / sqrt_n;
    }
    Ok(ScoreBand { critical_value: crit, alpha, points, dropped })
}
