//! One-call estimation: estimand id, configuration and inference choices
//! in, report out.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimands::multi::{analyze_multi, report_multi};
use crate::estimands::{
    analyze_pair, indicator_outcome, pi_dr, pi_v, wald, wald_x, wald_x_multi, BootstrapSummary, ConfidenceInterval,
    EstimandConfig, EstimateReport, SignMode,
};
use crate::inference::{self, Multiplier};

/// Target estimand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EstimandKind {
    Wald,
    WaldX,
    PiDr,
    PiDrPlus,
    PiDrMinus,
    /// Aggregate at one quantile level.
    PiV(f64),
    /// Covariate-free versions of the above.
    TauDr,
    TauDrPlus,
    TauDrMinus,
    TauU(f64),
    PiDrMulti,
    WaldXMulti,
    /// pi_dr with outcome 1(Y <= y).
    Distributional(f64),
}

impl fmt::Display for EstimandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimandKind::Wald => write!(f, "wald"),
            EstimandKind::WaldX => write!(f, "wald_x"),
            EstimandKind::PiDr => write!(f, "pi_dr"),
            EstimandKind::PiDrPlus => write!(f, "pi_dr_plus"),
            EstimandKind::PiDrMinus => write!(f, "pi_dr_minus"),
            EstimandKind::PiV(v) => write!(f, "pi_v({v})"),
            EstimandKind::TauDr => write!(f, "tau_dr"),
            EstimandKind::TauDrPlus => write!(f, "tau_dr_plus"),
            EstimandKind::TauDrMinus => write!(f, "tau_dr_minus"),
            EstimandKind::TauU(u) => write!(f, "tau_u({u})"),
            EstimandKind::PiDrMulti => write!(f, "pi_dr_multi"),
            EstimandKind::WaldXMulti => write!(f, "wald_x_multi"),
            EstimandKind::Distributional(y) => write!(f, "distributional({y})"),
        }
    }
}

/// Split `name(arg)` into its parts.
pub(crate) fn call_syntax(s: &str) -> Option<(&str, &str)> {
    let s = s.trim();
    let open = s.find('(')?;
    if !s.ends_with(')') {
        return None;
    }
    Some((s[..open].trim(), s[open + 1..s.len() - 1].trim()))
}

impl FromStr for EstimandKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown estimand `{s}`"));
        if let Some((name, arg)) = call_syntax(s) {
            let x: f64 = arg.parse().map_err(|_| bad())?;
            if !x.is_finite() {
                return Err(bad());
            }
            return match name {
                "pi_v" => Ok(EstimandKind::PiV(x)),
                "tau_u" => Ok(EstimandKind::TauU(x)),
                "distributional" => Ok(EstimandKind::Distributional(x)),
                _ => Err(bad()),
            };
        }
        Ok(match s.trim() {
            "wald" => EstimandKind::Wald,
            "wald_x" => EstimandKind::WaldX,
            "pi_dr" => EstimandKind::PiDr,
            "pi_dr_plus" => EstimandKind::PiDrPlus,
            "pi_dr_minus" => EstimandKind::PiDrMinus,
            "tau_dr" => EstimandKind::TauDr,
            "tau_dr_plus" => EstimandKind::TauDrPlus,
            "tau_dr_minus" => EstimandKind::TauDrMinus,
            "pi_dr_multi" => EstimandKind::PiDrMulti,
            "wald_x_multi" => EstimandKind::WaldXMulti,
            _ => return Err(bad()),
        })
    }
}

impl TryFrom<String> for EstimandKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EstimandKind> for String {
    fn from(k: EstimandKind) -> String {
        k.to_string()
    }
}

impl EstimandKind {
    /// Sign mode implied by the id, if it fixes one.
    fn sign_mode(self) -> Option<SignMode> {
        match self {
            EstimandKind::PiDrPlus | EstimandKind::TauDrPlus => Some(SignMode::Positive),
            EstimandKind::PiDrMinus | EstimandKind::TauDrMinus => Some(SignMode::Negative),
            EstimandKind::PiDr | EstimandKind::TauDr => Some(SignMode::Abs),
            _ => None,
        }
    }

    fn covariate_free(self) -> bool {
        matches!(
            self,
            EstimandKind::TauDr | EstimandKind::TauDrPlus | EstimandKind::TauDrMinus | EstimandKind::TauU(_)
        )
    }

    pub fn is_multi(self) -> bool {
        matches!(self, EstimandKind::PiDrMulti | EstimandKind::WaldXMulti)
    }
}

/// Which standard errors to compute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceOptions {
    pub plugin: bool,
    /// Pairs-bootstrap replicates; zero disables the bootstrap.
    pub bootstrap: usize,
    /// Confidence level of reported intervals.
    pub level: f64,
    pub seed: u64,
    pub multiplier: Multiplier,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        InferenceOptions { plugin: true, bootstrap: 0, level: 0.95, seed: 0, multiplier: Multiplier::Normal }
    }
}

impl InferenceOptions {
    pub fn none() -> Self {
        InferenceOptions { plugin: false, ..Default::default() }
    }
    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidArgument(format!("level {} outside (0, 1)", self.level)));
        }
        if self.bootstrap == 1 {
            return Err(Error::InvalidArgument("bootstrap needs at least 2 replicates".into()));
        }
        Ok(())
    }
}

fn effective_config(kind: EstimandKind, config: &EstimandConfig) -> EstimandConfig {
    let mut c = config.clone();
    if let Some(m) = kind.sign_mode() {
        c.sign_mode = m;
    }
    if kind.covariate_free() {
        c.use_covariates = false;
    }
    c
}

/// Point estimate and (optionally) plug-in standard error.
fn estimate_once(
    d: &Dataset,
    kind: EstimandKind,
    config: &EstimandConfig,
    pair: (u32, u32),
    plugin: bool,
) -> Result<EstimateReport> {
    let cfg = effective_config(kind, config);
    let mut r = match kind {
        EstimandKind::Wald => wald(d, pair, &cfg.weak_iv)?,
        EstimandKind::WaldX => {
            let dd;
            let d = if cfg.use_covariates {
                d
            } else {
                dd = d.without_covariates();
                &dd
            };
            wald_x(d, pair, &cfg.weak_iv)?
        }
        EstimandKind::PiDr
        | EstimandKind::PiDrPlus
        | EstimandKind::PiDrMinus
        | EstimandKind::TauDr
        | EstimandKind::TauDrPlus
        | EstimandKind::TauDrMinus => {
            let a = analyze_pair(d, &cfg, pair)?;
            let mut r = pi_dr(&a)?;
            if plugin {
                r.se_plugin = Some(inference::influence_pi_dr(&a, r.point)?.se);
            }
            r
        }
        EstimandKind::PiV(v) | EstimandKind::TauU(v) => {
            let a = analyze_pair(d, &cfg, pair)?;
            let j = a.qfit.grid.index_of(v).ok_or(Error::OffGrid(v))?;
            let mut r = pi_v(&a, v)?;
            if plugin {
                r.se_plugin = Some(inference::influence_pi_v(&a, j, r.point)?.se);
            }
            r
        }
        EstimandKind::Distributional(y) => {
            let dt = indicator_outcome(d, y)?;
            let a = analyze_pair(&dt, &cfg, pair)?;
            let mut r = pi_dr(&a)?;
            if plugin {
                r.se_plugin = Some(inference::influence_pi_dr(&a, r.point)?.se);
            }
            r
        }
        EstimandKind::PiDrMulti => {
            if d.n_codes() < 3 {
                return Err(Error::InvalidArgument(
                    "multi-valued aggregate needs at least three instrument values".into(),
                ));
            }
            let m = analyze_multi(d, &cfg)?;
            let mut r = report_multi(d, &m);
            if plugin {
                let inf = inference::influence_multi(d, &m)?;
                r.se_plugin = Some(inf.se);
                for (row, p) in r.per_pair_breakdown.iter_mut().zip(&inf.per_pair) {
                    row.se_plugin = p.as_ref().map(|p| p.se);
                }
            }
            r
        }
        EstimandKind::WaldXMulti => {
            let mut r = wald_x_multi(d, &cfg.weak_iv)?;
            if plugin {
                r.warnings.push("no plug-in se for the multi-valued Wald aggregate; use the bootstrap".into());
            }
            r
        }
    };
    r.estimand_id = kind.to_string();
    if !plugin {
        r.se_plugin = None;
    }
    Ok(r)
}

/// Estimate `kind` on `d` with the requested inference.
pub fn estimate(
    d: &Dataset,
    kind: EstimandKind,
    config: &EstimandConfig,
    pair: (u32, u32),
    inf: &InferenceOptions,
) -> Result<EstimateReport> {
    inf.validate()?;
    let mut r = estimate_once(d, kind, config, pair, inf.plugin)?;
    r.set_plugin_ci(inf.level);
    if inf.bootstrap >= 2 {
        let b = inference::pairs_bootstrap(
            d,
            |db| estimate_once(db, kind, config, pair, false).map(|r| r.point),
            inf.bootstrap,
            inf.level,
            inf.seed,
        )?;
        r.se_bootstrap = Some(b.se);
        r.bootstrap = Some(BootstrapSummary { replicates: inf.bootstrap, failed: b.failed, percentile_ci: b.ci });
        if b.failed > 0 {
            r.warnings.push(format!("{} of {} bootstrap replicates failed and were dropped", b.failed, inf.bootstrap));
        }
        if r.ci.is_none() {
            r.ci = Some(ConfidenceInterval { lo: b.ci.0, hi: b.ci.1, level: inf.level, method: "percentile".into() });
        }
    }
    Ok(r)
}

/// Point estimate only; the unit of work inside bootstraps and simulations.
pub fn point_estimate(d: &Dataset, kind: EstimandKind, config: &EstimandConfig, pair: (u32, u32)) -> Result<f64> {
    estimate_once(d, kind, config, pair, false).map(|r| r.point)
}
