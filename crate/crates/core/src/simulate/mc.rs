//! Monte Carlo harness: repeated generate-then-estimate against an oracle.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::oracle::oracle_for_pair;
use super::spec::DgpSpec;
use super::generate_compiled;
use crate::error::{Error, Result};
use crate::estimands::EstimandConfig;
use crate::inference::replicate_rng;
use crate::par;
use crate::pipeline::{estimate, EstimandKind, InferenceOptions};

/// One estimator to run on every replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McEstimator {
    pub label: String,
    pub estimand: EstimandKind,
    #[serde(default)]
    pub config: EstimandConfig,
    #[serde(default = "default_pair")]
    pub pair: (u32, u32),
    #[serde(default)]
    pub inference: InferenceOptions,
    /// Oracle estimand to compare against. Defaults to the estimand itself;
    /// `"none"` skips the comparison.
    #[serde(default)]
    pub oracle: Option<String>,
}

fn default_pair() -> (u32, u32) {
    (0, 1)
}

impl McEstimator {
    pub fn new(label: &str, estimand: EstimandKind) -> Self {
        McEstimator {
            label: label.into(),
            estimand,
            config: EstimandConfig::default(),
            pair: (0, 1),
            inference: InferenceOptions::default(),
            oracle: None,
        }
    }

    fn oracle_id(&self) -> Option<String> {
        match self.oracle.as_deref() {
            Some("none") => None,
            Some(s) => Some(s.to_string()),
            None => Some(self.estimand.to_string()),
        }
    }
}

/// Summary of one estimator across replicates. Moments use the 1/R
/// divisor, so `rmse^2 = bias^2 + sd^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub label: String,
    pub estimand_id: String,
    pub oracle_id: Option<String>,
    pub oracle: Option<f64>,
    pub oracle_error: Option<f64>,
    pub successes: usize,
    pub failures: usize,
    pub failure_kinds: BTreeMap<String, usize>,
    /// More than 20% of replicates failed.
    pub flagged: bool,
    pub mean: f64,
    pub sd: f64,
    pub mc_se: f64,
    pub bias: Option<f64>,
    pub rmse: Option<f64>,
    /// Mean and median of the plug-in standard errors.
    pub se_mean: Option<f64>,
    pub se_median: Option<f64>,
    pub se_bootstrap_mean: Option<f64>,
    pub coverage: Option<f64>,
    /// Per-replicate results, `None` where the estimator failed.
    pub estimates: Vec<Option<f64>>,
    pub se_plugin: Vec<Option<f64>>,
    pub se_bootstrap: Vec<Option<f64>>,
    pub covered: Vec<Option<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub spec: String,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub oracle_resolution: usize,
    pub rows: Vec<McRow>,
}

impl McReport {
    pub fn row(&self, label: &str) -> Option<&McRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Plain-text table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "spec {}  n {}  reps {}  seed {}", self.spec, self.n, self.reps, self.seed);
        let _ = writeln!(
            s,
            "{:<16} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>9} {:>8}",
            "estimator", "oracle", "mean", "bias", "sd", "rmse", "se mean", "coverage", "failed"
        );
        let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<16} {:>10} {:>10.4} {:>10} {:>10.4} {:>10} {:>10} {:>9} {:>7}{}",
                r.label,
                f(r.oracle),
                r.mean,
                f(r.bias),
                r.sd,
                f(r.rmse),
                f(r.se_mean),
                f(r.coverage),
                r.failures,
                if r.flagged { "!" } else { "" }
            );
        }
        s
    }
}

struct RepResult {
    point: f64,
    se_plugin: Option<f64>,
    se_bootstrap: Option<f64>,
    ci: Option<(f64, f64)>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Run every estimator on `reps` datasets of size `n` drawn from `spec`.
/// Replicate `r` uses data seed and bootstrap seed drawn from the stream
/// (seed, r), so results do not depend on the worker count.
pub fn monte_carlo(
    spec: &DgpSpec,
    estimators: &[McEstimator],
    reps: usize,
    n: usize,
    seed: u64,
    oracle_resolution: usize,
) -> Result<McReport> {
    if reps < 2 {
        return Err(Error::InvalidArgument("monte carlo needs at least 2 replicates".into()));
    }
    let c = spec.validate()?;
    for e in estimators {
        e.inference.validate()?;
        e.config.validate()?;
    }
    let oracles: Vec<Option<(String, f64, f64)>> = estimators
        .iter()
        .map(|e| {
            e.oracle_id()
                .map(|id| {
                    let pair = (e.pair.0 as usize, e.pair.1 as usize);
                    oracle_for_pair(spec, &id, pair, oracle_resolution).map(|o| (id, o.value, o.error_bound))
                })
                .transpose()
        })
        .collect::<Result<_>>()?;

    let results: Vec<Vec<std::result::Result<RepResult, Error>>> = par::map_indexed(reps, |r| {
        let mut rng = replicate_rng(seed, r as u64);
        let data_seed = rng.next_u64();
        let boot_seed = rng.next_u64();
        let d = match generate_compiled(spec, &c, n, data_seed) {
            Ok(d) => d,
            Err(e) => return estimators.iter().map(|_| Err(e.clone())).collect(),
        };
        estimators
            .iter()
            .map(|e| {
                let inf = InferenceOptions { seed: boot_seed, ..e.inference };
                estimate(&d, e.estimand, &e.config, e.pair, &inf).map(|rep| RepResult {
                    point: rep.point,
                    se_plugin: rep.se_plugin,
                    se_bootstrap: rep.se_bootstrap,
                    ci: rep.ci.map(|ci| (ci.lo, ci.hi)),
                })
            })
            .collect()
    });

    let rows = estimators
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let orc = &oracles[k];
            let mut failure_kinds = BTreeMap::new();
            let (mut estimates, mut se_plugin, mut se_bootstrap, mut covered) = (vec![], vec![], vec![], vec![]);
            for rep in &results {
                match &rep[k] {
                    Ok(r) => {
                        estimates.push(Some(r.point));
                        se_plugin.push(r.se_plugin);
                        se_bootstrap.push(r.se_bootstrap);
                        covered.push(match (orc, r.ci) {
                            (Some((_, o, _)), Some((lo, hi))) => Some(lo <= *o && *o <= hi),
                            _ => None,
                        });
                    }
                    Err(err) => {
                        *failure_kinds.entry(err.kind().to_string()).or_insert(0) += 1;
                        estimates.push(None);
                        se_plugin.push(None);
                        se_bootstrap.push(None);
                        covered.push(None);
                    }
                }
            }
            let ok: Vec<f64> = estimates.iter().flatten().copied().collect();
            let successes = ok.len();
            let failures = reps - successes;
            let (m, sd) = if ok.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let m = mean(&ok);
                (m, (ok.iter().map(|v| (v - m).powi(2)).sum::<f64>() / ok.len() as f64).sqrt())
            };
            let (bias, rmse) = match orc {
                Some((_, o, _)) if !ok.is_empty() => {
                    let mse = ok.iter().map(|v| (v - o).powi(2)).sum::<f64>() / ok.len() as f64;
                    (Some(m - o), Some(mse.sqrt()))
                }
                _ => (None, None),
            };
            let mut ses: Vec<f64> = se_plugin.iter().flatten().copied().collect();
            let bses: Vec<f64> = se_bootstrap.iter().flatten().copied().collect();
            let cov: Vec<bool> = covered.iter().flatten().copied().collect();
            McRow {
                label: e.label.clone(),
                estimand_id: e.estimand.to_string(),
                oracle_id: orc.as_ref().map(|o| o.0.clone()),
                oracle: orc.as_ref().map(|o| o.1),
                oracle_error: orc.as_ref().map(|o| o.2),
                successes,
                failures,
                failure_kinds,
                flagged: failures * 5 > reps,
                mean: m,
                sd,
                mc_se: sd / (successes as f64).sqrt(),
                bias,
                rmse,
                se_mean: (!ses.is_empty()).then(|| mean(&ses)),
                se_median: (!ses.is_empty()).then(|| median(&mut ses)),
                se_bootstrap_mean: (!bses.is_empty()).then(|| mean(&bses)),
                coverage: (!cov.is_empty()).then(|| cov.iter().filter(|&&b| b).count() as f64 / cov.len() as f64),
                estimates,
                se_plugin,
                se_bootstrap,
                covered,
            }
        })
        .collect();

    Ok(McReport { spec: spec.name.clone(), n, reps, seed, oracle_resolution, rows })
}
