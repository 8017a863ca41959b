//! Run configuration: command defaults, then the config file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::ValueEnum;
use drivest::estimands::{EstimandConfig, SignMode, TrimRule};
use drivest::inference::Multiplier;
use drivest::quantreg::DensityMode;
use drivest::sieve::{BasisFamily, BasisSpec, KnotRule};
use drivest::simulate::{presets, DgpSpec};
use drivest::{EstimandKind, InferenceOptions, Schema};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Estimate,
    Diagnose,
    Simulate,
    Mc,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Estimate => "estimate",
            Command::Diagnose => "diagnose",
            Command::Simulate => "simulate",
            Command::Mc => "mc",
        }
    }
}

/// Everything a run depends on. The resolved copy written next to the
/// results reproduces them when passed back with `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    /// Output prefix; the run writes PREFIX.json, PREFIX.txt and
    /// PREFIX.resolved.toml.
    pub output: PathBuf,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    /// Seeds data generation and resampling; copied into `inference.seed`.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<Schema>,
    /// Path to a design file, or the name of a shipped preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<String>,
    pub n: usize,
    pub reps: usize,
    pub oracle_resolution: usize,
    pub estimands: Vec<EstimandKind>,
    /// Instrument codes compared by the pairwise estimands.
    pub pair: (u32, u32),
    pub estimator: EstimandConfig,
    pub inference: InferenceOptions,
}

impl RunConfig {
    pub fn defaults(command: Command) -> Self {
        RunConfig {
            command,
            output: PathBuf::from(format!("drivest-{}", command.name())),
            workers: 0,
            seed: 0,
            data: None,
            schema: None,
            spec: None,
            n: 1000,
            reps: 100,
            oracle_resolution: 64,
            estimands: vec![EstimandKind::PiDr],
            pair: (0, 1),
            estimator: EstimandConfig::default(),
            inference: InferenceOptions {
                // a bootstrap inside every Monte Carlo replicate is rarely wanted
                bootstrap: if command == Command::Mc { 0 } else { 200 },
                ..InferenceOptions::default()
            },
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing the resolved config")
    }

    /// Design named by `spec`: a file if one exists at that path, otherwise
    /// a shipped preset.
    pub fn load_spec(&self) -> Result<DgpSpec> {
        let name = self.spec.as_deref().ok_or_else(|| anyhow!("`{}` needs --spec", self.command.name()))?;
        let path = Path::new(name);
        if path.is_file() {
            let src = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            return DgpSpec::from_toml(&src).with_context(|| format!("parsing {}", path.display()));
        }
        presets::preset(name).map_err(|_| {
            anyhow!("--spec `{name}` is neither a file nor a preset (presets: {})", presets::NAMES.join(", "))
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.estimator.validate()?;
        self.inference.validate()?;
        if self.estimands.is_empty() {
            bail!("no estimands requested");
        }
        if self.pair.0 == self.pair.1 {
            bail!("pair must name two different instrument codes");
        }
        match self.command {
            Command::Estimate | Command::Diagnose => {
                if self.data.is_none() {
                    bail!("`{}` needs --data", self.command.name());
                }
                if self.schema.is_none() {
                    bail!("`{}` needs --outcome, --treatment and --iv", self.command.name());
                }
            }
            Command::Simulate | Command::Mc => {
                self.load_spec()?;
                if self.n < 2 {
                    bail!("n must be at least 2");
                }
                if self.command == Command::Mc && self.reps < 2 {
                    bail!("reps must be at least 2");
                }
                if self.oracle_resolution < 2 {
                    bail!("oracle_resolution must be at least 2");
                }
            }
        }
        Ok(())
    }
}

/// Recursively overlay `top` onto `base`.
fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Command-line overrides. Every flag is optional; unset flags leave the
/// config file (or the default) in place.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Flags {
    /// TOML config file; flags given alongside it win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output prefix.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,

    /// CSV file with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub outcome: Option<String>,
    #[arg(long)]
    pub treatment: Option<String>,
    /// Instrument column.
    #[arg(long)]
    pub iv: Option<String>,
    /// Covariate columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Raw instrument values in code order, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub instrument_order: Option<Vec<String>>,

    /// Design file or preset name.
    #[arg(long)]
    pub spec: Option<String>,
    /// Sample size for simulate and mc.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub oracle_resolution: Option<usize>,

    /// Estimand ids, comma separated (pi_dr, pi_dr_plus, wald, pi_v(0.5), ...).
    #[arg(long = "estimand", value_delimiter = ',')]
    pub estimands: Option<Vec<String>>,
    /// Instrument codes to compare, as `a,b`.
    #[arg(long)]
    pub pair: Option<String>,
    /// Number of quantile grid points.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long, value_enum)]
    pub basis: Option<BasisArg>,
    /// Basis functions in the treatment block, constant included.
    #[arg(long)]
    pub j: Option<usize>,
    /// B-spline order.
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long, value_enum)]
    pub knots: Option<KnotArg>,
    /// baseline, multiple:C or fixed:RHO.
    #[arg(long)]
    pub trim: Option<String>,
    #[arg(long, value_enum)]
    pub sign_mode: Option<SignArg>,
    #[arg(long)]
    pub use_covariates: Option<bool>,
    #[arg(long)]
    pub rearrange: Option<bool>,
    #[arg(long, value_enum)]
    pub density: Option<DensityArg>,
    /// z threshold of the weak first-stage gate (0 disables the statistical part).
    #[arg(long)]
    pub weak_iv_z: Option<f64>,

    /// Influence-function standard errors.
    #[arg(long)]
    pub plugin: Option<bool>,
    /// Pairs-bootstrap replicates (0 disables).
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long, value_enum)]
    pub multiplier: Option<MultiplierArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BasisArg {
    Power,
    Bspline,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KnotArg {
    Uniform,
    Quantile,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SignArg {
    Abs,
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DensityArg {
    GridSnapped,
    Exact,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MultiplierArg {
    Normal,
    Rademacher,
    Mammen,
}

fn parse_pair(s: &str) -> Result<(u32, u32)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok((a.parse().context("pair")?, b.parse().context("pair")?)),
        _ => bail!("pair must look like `0,1`, got `{s}`"),
    }
}

/// Defaults for `command`, overlaid with the config file and then the
/// flags.
pub fn resolve(command: Command, flags: &Flags) -> Result<RunConfig> {
    let mut cfg = RunConfig::defaults(command);
    if let Some(path) = &flags.config {
        let src = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: toml::Value = toml::from_str(&src).with_context(|| format!("parsing {}", path.display()))?;
        let mut base = toml::Value::try_from(&cfg)?;
        merge(&mut base, file);
        cfg = base.try_into().with_context(|| format!("in {}", path.display()))?;
        if cfg.command != command {
            bail!("{} is a `{}` config, not `{}`", path.display(), cfg.command.name(), command.name());
        }
    }
    apply_flags(&mut cfg, flags)?;
    // one seed drives data generation and resampling alike
    cfg.inference.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn apply_flags(cfg: &mut RunConfig, f: &Flags) -> Result<()> {
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v;
            }
        };
    }
    set!(cfg.output, f.out);
    set!(cfg.workers, f.workers);
    set!(cfg.seed, f.seed);
    if f.data.is_some() {
        cfg.data = f.data.clone();
    }
    if f.spec.is_some() {
        cfg.spec = f.spec.clone();
    }
    set!(cfg.n, f.n);
    set!(cfg.reps, f.reps);
    set!(cfg.oracle_resolution, f.oracle_resolution);

    let any_schema = f.outcome.is_some()
        || f.treatment.is_some()
        || f.iv.is_some()
        || f.covariates.is_some()
        || f.instrument_order.is_some();
    if any_schema {
        let mut s = cfg.schema.take().unwrap_or_else(|| Schema::new("", "", "", &[]));
        set!(s.outcome, f.outcome);
        set!(s.treatment, f.treatment);
        set!(s.instrument, f.iv);
        set!(s.covariates, f.covariates);
        if f.instrument_order.is_some() {
            s.instrument_order = f.instrument_order.clone();
        }
        for (role, col) in [("--outcome", &s.outcome), ("--treatment", &s.treatment), ("--iv", &s.instrument)] {
            if col.is_empty() {
                bail!("{role} is required when the schema is given on the command line");
            }
        }
        cfg.schema = Some(s);
    }

    if let Some(list) = &f.estimands {
        cfg.estimands = list.iter().map(|s| s.parse::<EstimandKind>()).collect::<Result<_, _>>()?;
    }
    if let Some(p) = &f.pair {
        cfg.pair = parse_pair(p)?;
    }

    let e = &mut cfg.estimator;
    set!(e.grid_size, f.grid);
    if let Some(b) = f.basis {
        let family = match b {
            BasisArg::Power => BasisFamily::Power,
            BasisArg::Bspline => BasisFamily::Bspline,
        };
        if family != e.basis.family {
            // switching family resets the family-specific settings
            e.basis = match family {
                BasisFamily::Power => BasisSpec::power(e.basis.j),
                BasisFamily::Bspline => BasisSpec { family, interior_knots: vec![], ..e.basis.clone() },
            };
        }
    }
    set!(e.basis.j, f.j);
    set!(e.basis.order, f.order);
    if let Some(k) = f.knots {
        e.basis.knot_rule = match k {
            KnotArg::Uniform => KnotRule::Uniform,
            KnotArg::Quantile => KnotRule::Quantile,
        };
    }
    if let Some(t) = &f.trim {
        e.trimming = t.parse::<TrimRule>()?;
    }
    if let Some(s) = f.sign_mode {
        e.sign_mode = match s {
            SignArg::Abs => SignMode::Abs,
            SignArg::Positive => SignMode::Positive,
            SignArg::Negative => SignMode::Negative,
        };
    }
    set!(e.use_covariates, f.use_covariates);
    set!(e.rearrange, f.rearrange);
    if let Some(d) = f.density {
        e.density = match d {
            DensityArg::GridSnapped => DensityMode::GridSnapped,
            DensityArg::Exact => DensityMode::Exact,
        };
    }
    set!(e.weak_iv.z, f.weak_iv_z);

    let inf = &mut cfg.inference;
    set!(inf.plugin, f.plugin);
    set!(inf.bootstrap, f.bootstrap);
    set!(inf.level, f.level);
    if let Some(m) = f.multiplier {
        inf.multiplier = match m {
            MultiplierArg::Normal => Multiplier::Normal,
            MultiplierArg::Rademacher => Multiplier::Rademacher,
            MultiplierArg::Mammen => Multiplier::Mammen,
        };
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_config_round_trips() {
        for c in [Command::Estimate, Command::Diagnose, Command::Simulate, Command::Mc] {
            let mut cfg = RunConfig::defaults(c);
            cfg.schema = Some(Schema::new("y", "t", "z", &["x1"]));
            cfg.spec = Some("dgp_m".into());
            cfg.estimands = vec![EstimandKind::PiDr, EstimandKind::PiV(0.25)];
            let text = cfg.to_toml().unwrap();
            let back: RunConfig = toml::from_str(&text).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn merge_overlays_nested_tables() {
        let mut a: toml::Value = toml::from_str("x = 1\n[t]\na = 1\nb = 2\n").unwrap();
        merge(&mut a, toml::from_str("[t]\nb = 3\n").unwrap());
        assert_eq!(a["t"]["a"].as_integer(), Some(1));
        assert_eq!(a["t"]["b"].as_integer(), Some(3));
        assert_eq!(a["x"].as_integer(), Some(1));
    }

    #[test]
    fn pair_parsing() {
        assert_eq!(parse_pair("1, 2").unwrap(), (1, 2));
        assert!(parse_pair("1").is_err());
        assert!(parse_pair("a,b").is_err());
    }
}
