//! Declarative description of a data-generating process.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::expr::Expr;
use crate::error::{Error, Result};
use crate::stats;

/// Marginal law of one covariate. Covariates are mutually independent and
/// independent of all disturbances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovariateLaw {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
}

impl CovariateLaw {
    /// Quantile function.
    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            CovariateLaw::Uniform { lo, hi } => lo + (hi - lo) * p,
            CovariateLaw::Normal { mean, sd } => mean + sd * stats::qnorm(p),
        }
    }
}

/// A named covariate. Serialized flat: `{ name, law = "uniform", lo, hi }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CovariateRepr", into = "CovariateRepr")]
pub struct Covariate {
    pub name: String,
    pub law: CovariateLaw,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
enum CovariateRepr {
    Uniform { name: String, lo: f64, hi: f64 },
    Normal { name: String, mean: f64, sd: f64 },
}

impl TryFrom<CovariateRepr> for Covariate {
    type Error = std::convert::Infallible;
    fn try_from(r: CovariateRepr) -> std::result::Result<Self, Self::Error> {
        Ok(match r {
            CovariateRepr::Uniform { name, lo, hi } => Covariate { name, law: CovariateLaw::Uniform { lo, hi } },
            CovariateRepr::Normal { name, mean, sd } => Covariate { name, law: CovariateLaw::Normal { mean, sd } },
        })
    }
}

impl From<Covariate> for CovariateRepr {
    fn from(c: Covariate) -> Self {
        match c.law {
            CovariateLaw::Uniform { lo, hi } => CovariateRepr::Uniform { name: c.name, lo, hi },
            CovariateLaw::Normal { mean, sd } => CovariateRepr::Normal { name: c.name, mean, sd },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentSpec {
    pub labels: Vec<String>,
    /// Baseline arm probabilities r_k.
    pub probabilities: Vec<f64>,
    /// Optional per-arm log-odds shifts in the covariates; P(Z = k | x) is
    /// proportional to r_k exp(tilt_k(x)).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tilt: Option<Vec<String>>,
}

/// How the potential-treatment ranks U_k relate to each other and to the
/// outcome disturbance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Coupling {
    /// U_k = u0 for every arm.
    Invariant,
    /// U_k = Phi(rho Phi^-1(u0) + sqrt(1 - rho^2) xi_k) with independent
    /// standard normal xi_k.
    Similar { rho: f64 },
    /// U_0 = u0; for higher arms U_k = 1 - u0 whenever `trigger > 0`.
    Violated { trigger: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Restrictions {
    pub monotone: bool,
    pub rank_similar: bool,
}

/// A data-generating process.
///
/// Expressions may use: in `first_stage`, `u` and the covariates; in
/// `disturbance`, `u0`, `nu1..nuK` and the covariates; in `outcome`, `t`,
/// `eps` and the covariates; in a tilt, the covariates; in a violation
/// trigger, `eps`, `u0` and the covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub name: String,
    #[serde(default)]
    pub covariates: Vec<Covariate>,
    pub instrument: InstrumentSpec,
    /// Conditional quantile function T_k(x, u) of each arm.
    pub first_stage: Vec<String>,
    /// Number of auxiliary uniform disturbances nu1..nuK.
    #[serde(default)]
    pub noise: usize,
    /// eps as a function of u0, the nu's and the covariates.
    pub disturbance: String,
    /// Structural outcome g(t, x, eps).
    pub outcome: String,
    pub coupling: Coupling,
    pub restrictions: Restrictions,
}

const RESERVED: &[&str] = &["t", "u", "u0", "eps", "pi"];

/// Compiled form of a DgpSpec.
#[derive(Debug, Clone)]
pub struct Compiled {
    pub d_x: usize,
    pub k: usize,
    pub first_stage: Vec<Expr>,
    pub disturbance: Expr,
    pub outcome: Expr,
    pub tilt: Option<Vec<Expr>>,
    pub trigger: Option<Expr>,
    pub log_r: Vec<f64>,
    pub noise: usize,
    pub laws: Vec<CovariateLaw>,
}

impl Compiled {
    /// T_k(x, u).
    pub fn treatment(&self, k: usize, x: &[f64], u: f64, buf: &mut Vec<f64>) -> f64 {
        buf.clear();
        buf.push(u);
        buf.extend_from_slice(x);
        self.first_stage[k].eval(buf)
    }
    /// eps(u0, nu, x).
    pub fn eps(&self, u0: f64, nu: &[f64], x: &[f64], buf: &mut Vec<f64>) -> f64 {
        buf.clear();
        buf.push(u0);
        buf.extend_from_slice(nu);
        buf.extend_from_slice(x);
        self.disturbance.eval(buf)
    }
    /// g(t, x, eps).
    pub fn outcome(&self, t: f64, eps: f64, x: &[f64], buf: &mut Vec<f64>) -> f64 {
        buf.clear();
        buf.push(t);
        buf.push(eps);
        buf.extend_from_slice(x);
        self.outcome.eval(buf)
    }
    /// P(Z = k | x) for every arm.
    pub fn propensity(&self, x: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = match &self.tilt {
            None => self.log_r.clone(),
            Some(t) => self.log_r.iter().zip(t).map(|(lr, e)| lr + e.eval(x)).collect(),
        };
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    }
    /// Violation trigger at (eps, u0, x).
    pub fn triggered(&self, eps: f64, u0: f64, x: &[f64]) -> bool {
        match &self.trigger {
            None => false,
            Some(e) => {
                let mut b = vec![eps, u0];
                b.extend_from_slice(x);
                e.eval(&b) > 0.0
            }
        }
    }
    /// Whether any first-stage function depends on the covariates.
    pub fn first_stage_uses_x(&self) -> bool {
        self.first_stage.iter().any(|e| (1..=self.d_x).any(|s| e.uses(s)))
    }
}

impl DgpSpec {
    pub fn covariate_names(&self) -> Vec<String> {
        self.covariates.iter().map(|c| c.name.clone()).collect()
    }
    pub fn n_arms(&self) -> usize {
        self.first_stage.len()
    }

    pub fn from_toml(s: &str) -> Result<DgpSpec> {
        let spec: DgpSpec = toml::from_str(s).map_err(|e| Error::Schema(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Schema(e.to_string()))
    }

    /// Parse all expressions and check the structural requirements, without
    /// the restriction probe.
    pub fn compile(&self) -> Result<Compiled> {
        let k = self.first_stage.len();
        if k < 2 {
            return Err(Error::Schema("a DGP needs at least two instrument arms".into()));
        }
        if self.instrument.labels.len() != k || self.instrument.probabilities.len() != k {
            return Err(Error::Schema(format!(
                "{k} first-stage functions but {} labels and {} probabilities",
                self.instrument.labels.len(),
                self.instrument.probabilities.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &self.instrument.labels {
            if !seen.insert(l) {
                return Err(Error::Schema(format!("duplicate arm label `{l}`")));
            }
        }
        let p = &self.instrument.probabilities;
        if p.iter().any(|&x| !(x > 0.0 && x.is_finite())) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Schema("arm probabilities must be positive and sum to 1".into()));
        }
        let names = self.covariate_names();
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            let reserved = RESERVED.contains(&n.as_str())
                || (n.starts_with("nu") && n[2..].parse::<usize>().is_ok());
            if reserved || !seen.insert(n) {
                return Err(Error::Schema(format!("covariate name `{n}` is reserved or repeated")));
            }
        }
        for c in &self.covariates {
            let ok = match c.law {
                CovariateLaw::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
                CovariateLaw::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
            };
            if !ok {
                return Err(Error::Schema(format!("invalid law for covariate `{}`", c.name)));
            }
        }
        let xs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let with = |head: &[&str]| -> Vec<String> {
            head.iter().map(|s| s.to_string()).chain(names.iter().cloned()).collect()
        };
        let as_refs = |v: &[String]| -> Vec<String> { v.to_vec() };
        let fs_vars = with(&["u"]);
        let fs_refs: Vec<&str> = fs_vars.iter().map(|s| s.as_str()).collect();
        let first_stage = self
            .first_stage
            .iter()
            .map(|s| Expr::parse(s, &fs_refs))
            .collect::<Result<Vec<_>>>()?;
        let nu_names: Vec<String> = (1..=self.noise).map(|i| format!("nu{i}")).collect();
        let mut dv: Vec<String> = vec!["u0".into()];
        dv.extend(as_refs(&nu_names));
        dv.extend(names.iter().cloned());
        let dv_refs: Vec<&str> = dv.iter().map(|s| s.as_str()).collect();
        let disturbance = Expr::parse(&self.disturbance, &dv_refs)?;
        let ov = with(&["t", "eps"]);
        let ov_refs: Vec<&str> = ov.iter().map(|s| s.as_str()).collect();
        let outcome = Expr::parse(&self.outcome, &ov_refs)?;
        let tilt = match &self.instrument.tilt {
            None => None,
            Some(t) => {
                if t.len() != k {
                    return Err(Error::Schema("one tilt expression per arm is required".into()));
                }
                Some(t.iter().map(|s| Expr::parse(s, &xs)).collect::<Result<Vec<_>>>()?)
            }
        };
        let trigger = match &self.coupling {
            Coupling::Violated { trigger } => {
                let tv = with(&["eps", "u0"]);
                let tv_refs: Vec<&str> = tv.iter().map(|s| s.as_str()).collect();
                Some(Expr::parse(trigger, &tv_refs)?)
            }
            Coupling::Similar { rho } => {
                if !(rho.abs() < 1.0) {
                    return Err(Error::Schema(format!("similar coupling needs |rho| < 1, got {rho}")));
                }
                None
            }
            Coupling::Invariant => None,
        };
        Ok(Compiled {
            d_x: names.len(),
            k,
            first_stage,
            disturbance,
            outcome,
            tilt,
            trigger,
            log_r: p.iter().map(|x| x.ln()).collect(),
            noise: self.noise,
            laws: self.covariates.iter().map(|c| c.law).collect(),
        })
    }

    /// Full validation: compile, probe strict monotonicity of each T_k(x, .)
    /// and check the declared restrictions.
    pub fn validate(&self) -> Result<Compiled> {
        let c = self.compile()?;
        probe_monotone_in_u(&c)?;
        let check = super::verify_restrictions(self, 20_000)?;
        if check.monotone_holds != self.restrictions.monotone || check.rank_similar_holds != self.restrictions.rank_similar
        {
            return Err(Error::SpecConsistency(format!(
                "declared monotone = {}, rank_similar = {}; verified {}, {}",
                self.restrictions.monotone,
                self.restrictions.rank_similar,
                check.monotone_holds,
                check.rank_similar_holds
            )));
        }
        Ok(c)
    }
}

/// Draw one covariate vector.
pub fn draw_x(c: &Compiled, rng: &mut ChaCha8Rng) -> Vec<f64> {
    c.laws.iter().map(|l| l.quantile(rng.gen::<f64>())).collect()
}

/// Each T_k(x, .) must be finite and strictly increasing on a 1000-point
/// probe grid for 100 probe covariate values.
fn probe_monotone_in_u(c: &Compiled) -> Result<()> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut buf = Vec::new();
    for _ in 0..100 {
        let x = draw_x(c, &mut rng);
        for k in 0..c.k {
            let mut prev = f64::NEG_INFINITY;
            for i in 0..1000 {
                let u = (i as f64 + 0.5) / 1000.0;
                let t = c.treatment(k, &x, u, &mut buf);
                if !t.is_finite() || t <= prev {
                    return Err(Error::Schema(format!(
                        "first stage of arm {k} is not strictly increasing in u near u = {u:.4}"
                    )));
                }
                prev = t;
            }
        }
    }
    Ok(())
}
