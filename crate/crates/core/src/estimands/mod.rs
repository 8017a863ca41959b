//! Step three: trimmed, weighted aggregation into the target estimands.

pub mod multi;
pub mod wald;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::inference;
use crate::quantreg::{self, DensityMode, QrOptions, QuantileFit, QuantileGrid};
use crate::sieve::{self, BasisSpec, SeriesFit};

pub use multi::{lambda_weights, pi_dr_multi, wald_x_multi, LambdaWeights};
pub use wald::{wald, wald_x, WeakIvRule};

/// Which cells enter the aggregation and with what sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    /// Weights |dq| on all untrimmed cells.
    #[default]
    Abs,
    /// Cells with dq >= rho only.
    Positive,
    /// Cells with dq <= -rho only; the normalizer B is negative.
    Negative,
}

impl SignMode {
    pub fn name(self) -> &'static str {
        match self {
            SignMode::Abs => "abs",
            SignMode::Positive => "positive",
            SignMode::Negative => "negative",
        }
    }
}

impl FromStr for SignMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abs" => Ok(SignMode::Abs),
            "positive" => Ok(SignMode::Positive),
            "negative" => Ok(SignMode::Negative),
            _ => Err(Error::InvalidArgument(format!("unknown sign mode `{s}`"))),
        }
    }
}

/// Rule producing the trimming threshold rho_n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(try_from = "String", into = "String")]
pub enum TrimRule {
    /// 1.96 min_{i,v} se(dq(X_i, v)) / ln n.
    #[default]
    Baseline,
    Multiple(f64),
    Fixed(f64),
}

impl fmt::Display for TrimRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrimRule::Baseline => write!(f, "baseline"),
            TrimRule::Multiple(m) => write!(f, "multiple:{m}"),
            TrimRule::Fixed(v) => write!(f, "fixed:{v}"),
        }
    }
}

impl FromStr for TrimRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad trimming rule `{s}`"));
        let num = |v: &str| -> Result<f64> {
            let x: f64 = v.trim().parse().map_err(|_| bad())?;
            if x.is_finite() && x >= 0.0 {
                Ok(x)
            } else {
                Err(bad())
            }
        };
        match s.split_once(':') {
            None if s == "baseline" => Ok(TrimRule::Baseline),
            Some(("multiple", v)) => Ok(TrimRule::Multiple(num(v)?)),
            Some(("fixed", v)) => Ok(TrimRule::Fixed(num(v)?)),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for TrimRule {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TrimRule> for String {
    fn from(r: TrimRule) -> String {
        r.to_string()
    }
}

/// A resolved trimming threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimmingSpec {
    pub rho_n: f64,
    pub rule: TrimRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimandConfig {
    pub grid_size: usize,
    pub basis: BasisSpec,
    pub trimming: TrimRule,
    pub sign_mode: SignMode,
    pub use_covariates: bool,
    /// Sort fitted quantile paths over the grid before evaluation.
    pub rearrange: bool,
    pub density: DensityMode,
    pub weak_iv: WeakIvRule,
}

impl Default for EstimandConfig {
    fn default() -> Self {
        EstimandConfig {
            grid_size: 99,
            basis: BasisSpec::default(),
            trimming: TrimRule::Baseline,
            sign_mode: SignMode::Abs,
            use_covariates: true,
            rearrange: true,
            density: DensityMode::GridSnapped,
            weak_iv: WeakIvRule::default(),
        }
    }
}

impl EstimandConfig {
    pub fn grid(&self) -> Result<QuantileGrid> {
        QuantileGrid::new(self.grid_size)
    }
    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.basis.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairBreakdown {
    pub pair: (u32, u32),
    pub labels: (String, String),
    pub lambda: f64,
    pub point: f64,
    pub se_plugin: Option<f64>,
    pub b_hat: f64,
    pub trimmed_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub replicates: usize,
    pub failed: usize,
    pub percentile_ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimand_id: String,
    pub point: f64,
    pub se_plugin: Option<f64>,
    pub se_bootstrap: Option<f64>,
    pub ci: Option<ConfidenceInterval>,
    pub trimmed_fraction: f64,
    pub b_hat: f64,
    pub rho_n: f64,
    pub n: usize,
    pub per_pair_breakdown: Vec<PairBreakdown>,
    pub bootstrap: Option<BootstrapSummary>,
    pub warnings: Vec<String>,
}

impl EstimateReport {
    pub fn new(id: &str, point: f64, n: usize) -> Self {
        EstimateReport {
            estimand_id: id.into(),
            point,
            se_plugin: None,
            se_bootstrap: None,
            ci: None,
            trimmed_fraction: 0.0,
            b_hat: f64::NAN,
            rho_n: 0.0,
            n,
            per_pair_breakdown: vec![],
            bootstrap: None,
            warnings: vec![],
        }
    }

    /// Normal-theory interval from the plug-in se.
    pub fn set_plugin_ci(&mut self, level: f64) {
        if let Some(se) = self.se_plugin {
            let z = crate::stats::qnorm(0.5 + level / 2.0);
            self.ci = Some(ConfidenceInterval {
                lo: self.point - z * se,
                hi: self.point + z * se,
                level,
                method: "plugin".into(),
            });
        }
    }
}

/// Fitted quantities evaluated at every (observation, grid point) cell of a
/// pair subsample. Arrays are indexed `j * n + i`.
#[derive(Debug, Clone)]
pub struct GridEval {
    pub n: usize,
    pub l: usize,
    pub q0: Vec<f64>,
    pub q1: Vec<f64>,
    /// m1(x, q1) - m0(x, q0).
    pub dm: Vec<f64>,
    pub dm0_dt: Vec<f64>,
    pub dm1_dt: Vec<f64>,
}

impl GridEval {
    #[inline]
    pub fn dq(&self, j: usize, i: usize) -> f64 {
        let k = j * self.n + i;
        self.q1[k] - self.q0[k]
    }
    #[inline]
    pub fn dm(&self, j: usize, i: usize) -> f64 {
        self.dm[j * self.n + i]
    }
}

/// (dq >= rho and dq > 0, dq <= -rho and dq < 0).
#[inline]
pub fn sign_sets(dq: f64, rho: f64) -> (bool, bool) {
    (dq > 0.0 && dq >= rho, dq < 0.0 && dq <= -rho)
}

/// Weight multiplier for a cell: sgn for abs, chi+ or chi- otherwise.
#[inline]
pub fn kappa(dq: f64, rho: f64, mode: SignMode) -> f64 {
    let (pos, neg) = sign_sets(dq, rho);
    match mode {
        SignMode::Abs => pos as i32 as f64 - neg as i32 as f64,
        SignMode::Positive => pos as i32 as f64,
        SignMode::Negative => neg as i32 as f64,
    }
}

/// Ratio aggregate A / B over a set of cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub point: f64,
    pub a: f64,
    pub b: f64,
    pub trimmed_fraction: f64,
    pub active: usize,
}

/// Steps one and two for one instrument pair plus their evaluation.
#[derive(Debug, Clone)]
pub struct PairAnalysis {
    pub config: EstimandConfig,
    pub qfit: QuantileFit,
    pub sfit: SeriesFit,
    pub trimming: TrimmingSpec,
    pub eval: GridEval,
    /// Covariates of each subsample row.
    pub xs: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// Fit both stages on the pair subsample and evaluate them on the grid.
pub fn analyze_pair(d: &Dataset, config: &EstimandConfig, pair: (u32, u32)) -> Result<PairAnalysis> {
    config.validate()?;
    let stripped;
    let d = if config.use_covariates {
        d
    } else {
        stripped = d.without_covariates();
        &stripped
    };
    let grid = config.grid()?;
    let qopts = QrOptions { density: config.density, ..QrOptions::default() };
    let qfit = quantreg::fit_grid_with(d, &grid, pair, &qopts)?;
    let sfit = sieve::fit_series(d, &config.basis, pair)?;
    let (trimming, mut warnings) = inference::trim_threshold(&qfit, config.trimming);
    let xs: Vec<Vec<f64>> = (0..qfit.n()).map(|i| qfit.x_row(i)).collect();
    let eval = evaluate(&qfit, &sfit, &xs, config.rearrange)?;
    warnings.extend(qfit.warnings.iter().cloned());
    warnings.extend(sfit.warnings.iter().cloned());
    Ok(PairAnalysis { config: config.clone(), qfit, sfit, trimming, eval, xs, warnings })
}

fn evaluate(q: &QuantileFit, s: &SeriesFit, xs: &[Vec<f64>], rearrange: bool) -> Result<GridEval> {
    let n = q.n();
    let l = q.grid.len();
    let cols = crate::par::map_indexed(n, |i| -> Result<[Vec<f64>; 5]> {
        let x = &xs[i];
        let p0 = q.quantile_path(x, 0.0, rearrange);
        let p1 = q.quantile_path(x, 1.0, rearrange);
        let mut dm = vec![0.0; l];
        let mut d0 = vec![0.0; l];
        let mut d1 = vec![0.0; l];
        for j in 0..l {
            dm[j] = s.predict(x, p1[j], 1.0)? - s.predict(x, p0[j], 0.0)?;
            d0[j] = s.predict_dt(x, p0[j], 0.0)?;
            d1[j] = s.predict_dt(x, p1[j], 1.0)?;
        }
        Ok([p0, p1, dm, d0, d1])
    });
    let mut e = GridEval {
        n,
        l,
        q0: vec![0.0; n * l],
        q1: vec![0.0; n * l],
        dm: vec![0.0; n * l],
        dm0_dt: vec![0.0; n * l],
        dm1_dt: vec![0.0; n * l],
    };
    for (i, c) in cols.into_iter().enumerate() {
        let c = c?;
        for j in 0..l {
            let k = j * n + i;
            e.q0[k] = c[0][j];
            e.q1[k] = c[1][j];
            e.dm[k] = c[2][j];
            e.dm0_dt[k] = c[3][j];
            e.dm1_dt[k] = c[4][j];
        }
    }
    Ok(e)
}

impl PairAnalysis {
    pub fn n(&self) -> usize {
        self.eval.n
    }
    pub fn rho(&self) -> f64 {
        self.trimming.rho_n
    }

    /// Aggregate over all cells (`v = None`) or over one grid column.
    pub fn aggregate(&self, mode: SignMode, v: Option<usize>) -> Result<Aggregate> {
        let (n, l) = (self.eval.n, self.eval.l);
        let rho = self.rho();
        let cols: Vec<usize> = match v {
            Some(j) => vec![j],
            None => (0..l).collect(),
        };
        let (mut a, mut b) = (0.0, 0.0);
        let (mut trimmed, mut active) = (0usize, 0usize);
        for &j in &cols {
            for i in 0..n {
                let dq = self.eval.dq(j, i);
                let (pos, neg) = sign_sets(dq, rho);
                if !pos && !neg {
                    trimmed += 1;
                }
                let k = kappa(dq, rho, mode);
                if k != 0.0 {
                    active += 1;
                    a += self.eval.dm(j, i) * k;
                    b += dq * k;
                }
            }
        }
        let cells = (cols.len() * n) as f64;
        if active == 0 {
            return Err(match mode {
                SignMode::Abs => Error::AllTrimmed { threshold: rho },
                m => Error::EmptySignSet { sign: m.name().into() },
            });
        }
        let (a, b) = (a / cells, b / cells);
        Ok(Aggregate { point: a / b, a, b, trimmed_fraction: trimmed as f64 / cells, active })
    }

    /// Normalized weights over cells, indexed `j * n + i` (or `i` for a
    /// single grid column).
    pub fn weights(&self, mode: SignMode, v: Option<usize>) -> Result<Vec<f64>> {
        let agg = self.aggregate(mode, v)?;
        let (n, l) = (self.eval.n, self.eval.l);
        let rho = self.rho();
        let cols: Vec<usize> = match v {
            Some(j) => vec![j],
            None => (0..l).collect(),
        };
        let cells = (cols.len() * n) as f64;
        let mut w = Vec::with_capacity(cols.len() * n);
        for &j in &cols {
            for i in 0..n {
                let dq = self.eval.dq(j, i);
                w.push(dq * kappa(dq, rho, mode) / (cells * agg.b));
            }
        }
        Ok(w)
    }

    /// pi(x, v_j) at an arbitrary covariate value.
    pub fn pi_xv(&self, x: &[f64], j: usize) -> Result<f64> {
        pi_xv_with(&self.qfit, &self.sfit, x, j, self.rho(), self.config.rearrange)
    }

    /// pi(X_i, v_j) for subsample row i.
    pub fn pi_cell(&self, j: usize, i: usize) -> f64 {
        let dq = self.eval.dq(j, i);
        if kappa(dq, self.rho(), SignMode::Abs) == 0.0 {
            0.0
        } else {
            self.eval.dm(j, i) / dq
        }
    }
}

fn pi_xv_with(
    qf: &QuantileFit,
    sf: &SeriesFit,
    x: &[f64],
    j: usize,
    rho: f64,
    rearrange: bool,
) -> Result<f64> {
    if x.len() != qf.d_x {
        return Err(Error::InvalidArgument(format!("x has length {}, expected {}", x.len(), qf.d_x)));
    }
    let q0 = qf.quantile_path(x, 0.0, rearrange)[j];
    let q1 = qf.quantile_path(x, 1.0, rearrange)[j];
    let dq = q1 - q0;
    if kappa(dq, rho, SignMode::Abs) == 0.0 {
        return Ok(0.0);
    }
    Ok((sf.predict(x, q1, 1.0)? - sf.predict(x, q0, 0.0)?) / dq)
}

/// pi(x, v) = dm(x, v) / dq(x, v), zero when |dq| < rho.
pub fn pi_xv(qf: &QuantileFit, sf: &SeriesFit, x: &[f64], v: f64, trim: &TrimmingSpec) -> Result<f64> {
    let j = qf.grid.index_of(v).ok_or(Error::OffGrid(v))?;
    pi_xv_with(qf, sf, x, j, trim.rho_n, true)
}

/// pi(v): weighted average of pi(X_i, v) with weights |dq|.
pub fn pi_v(a: &PairAnalysis, v: f64) -> Result<EstimateReport> {
    let j = a.qfit.grid.index_of(v).ok_or(Error::OffGrid(v))?;
    let mode = a.config.sign_mode;
    let agg = a.aggregate(mode, Some(j))?;
    let mut r = EstimateReport::new(&format!("pi_v({v})"), agg.point, a.n());
    r.trimmed_fraction = agg.trimmed_fraction;
    r.b_hat = agg.b;
    r.rho_n = a.rho();
    r.warnings = a.warnings.clone();
    Ok(r)
}

/// The doubly robust aggregate over all cells for the configured sign mode.
pub fn pi_dr(a: &PairAnalysis) -> Result<EstimateReport> {
    let mode = a.config.sign_mode;
    let agg = a.aggregate(mode, None)?;
    let id = match mode {
        SignMode::Abs => "pi_dr",
        SignMode::Positive => "pi_dr_plus",
        SignMode::Negative => "pi_dr_minus",
    };
    let mut r = EstimateReport::new(id, agg.point, a.n());
    r.trimmed_fraction = agg.trimmed_fraction;
    r.b_hat = agg.b;
    r.rho_n = a.rho();
    r.warnings = a.warnings.clone();
    Ok(r)
}

/// Replace Y by 1(Y <= y).
pub fn indicator_outcome(d: &Dataset, y_threshold: f64) -> Result<Dataset> {
    d.with_outcome(d.outcome().iter().map(|&y| (y <= y_threshold) as i32 as f64).collect())
}

/// pi_dr on the transformed outcome 1(Y <= y).
pub fn distributional_dr(
    d: &Dataset,
    y_threshold: f64,
    config: &EstimandConfig,
    pair: (u32, u32),
) -> Result<EstimateReport> {
    let dt = indicator_outcome(d, y_threshold)?;
    let a = analyze_pair(&dt, config, pair)?;
    let mut r = pi_dr(&a)?;
    r.estimand_id = format!("distributional({y_threshold})");
    Ok(r)
}
