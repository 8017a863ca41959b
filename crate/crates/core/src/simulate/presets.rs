//! Shipped designs, stored as TOML so they double as examples of the
//! format.

use super::spec::DgpSpec;
use crate::error::{Error, Result};

/// Monotone mean shift with one covariate; constant effect 0.7.
pub const DGP_M: &str = r#"
name = "dgp_m"
first_stage = ["1 + u", "1.5 + u"]
noise = 1
disturbance = "0.8 * (u0 - 0.5) + 0.5 * qnorm(nu1)"
outcome = "0.7 * t + 0.3 * x1 + eps"

[[covariates]]
name = "x1"
law = "uniform"
lo = 0.0
hi = 1.0

[instrument]
labels = ["0", "1"]
probabilities = [0.5, 0.5]

[coupling]
mode = "invariant"

[restrictions]
monotone = true
rank_similar = true
"#;

/// Variance shift with no change in mean treatment: the quantile gap
/// 2u - 1 changes sign, so monotonicity fails while ranks are invariant.
pub const DGP_RS: &str = r#"
name = "dgp_rs"
first_stage = ["5 + (2 * u - 1)", "5 + 2 * (2 * u - 1)"]
noise = 1
disturbance = "0.5 * (u0 - 0.5) + 0.3 * qnorm(nu1)"
outcome = "t^2 / 10 + eps"

[instrument]
labels = ["0", "1"]
probabilities = [0.5, 0.5]

[coupling]
mode = "invariant"

[restrictions]
monotone = false
rank_similar = true
"#;

/// Three arms with the cell means of a small encouragement experiment,
/// seven covariates, and an arm propensity that depends on x1.
pub const DGP_X: &str = r#"
name = "dgp_x"
first_stage = [
    "5.62 + 0.2 * x1 + 0.1 * x2 + 0.80 * sqrt(12) * (u - 0.5)",
    "5.99 + 0.2 * x1 + 0.1 * x2 + 0.85 * sqrt(12) * (u - 0.5)",
    "6.22 + 0.2 * x1 + 0.1 * x2 + 0.95 * sqrt(12) * (u - 0.5)",
]
noise = 1
disturbance = "0.2 * (u0 - 0.5) + 0.1 * qnorm(nu1)"
outcome = "0.1 + 0.15 * t + 0.05 * x1 - 0.03 * x3 + 0.02 * x5 + eps"

[[covariates]]
name = "x1"
law = "normal"
mean = 0.0
sd = 1.0

[[covariates]]
name = "x2"
law = "normal"
mean = 0.0
sd = 1.0

[[covariates]]
name = "x3"
law = "uniform"
lo = 0.0
hi = 1.0

[[covariates]]
name = "x4"
law = "uniform"
lo = 0.0
hi = 1.0

[[covariates]]
name = "x5"
law = "normal"
mean = 0.0
sd = 1.0

[[covariates]]
name = "x6"
law = "uniform"
lo = -1.0
hi = 1.0

[[covariates]]
name = "x7"
law = "normal"
mean = 0.0
sd = 0.5

[instrument]
labels = ["control", "information", "encouragement"]
probabilities = [0.34, 0.33, 0.33]
tilt = ["0", "0.4 * x1", "0.8 * x1"]

[coupling]
mode = "invariant"

[restrictions]
monotone = true
rank_similar = true
"#;

/// Neither monotone nor rank similar: the estimators have no causal target
/// here and the design exists to exercise the diagnostics.
pub const DGP_V: &str = r#"
name = "dgp_v"
first_stage = ["5 + (2 * u - 1)", "5.1 + 2 * (2 * u - 1)"]
noise = 1
disturbance = "qnorm(u0) + 0.5 * qnorm(nu1)"
outcome = "0.5 * t + eps"

[instrument]
labels = ["0", "1"]
probabilities = [0.5, 0.5]

[coupling]
mode = "violated"
trigger = "eps"

[restrictions]
monotone = false
rank_similar = false
"#;

/// Three arms with a constant effect 0.7.
pub const DGP_MULTI: &str = r#"
name = "dgp_multi"
first_stage = ["1 + u", "1.5 + u", "2 + u"]
noise = 1
disturbance = "0.8 * (u0 - 0.5) + 0.5 * qnorm(nu1)"
outcome = "0.7 * t + 0.3 * x1 + eps"

[[covariates]]
name = "x1"
law = "uniform"
lo = 0.0
hi = 1.0

[instrument]
labels = ["0", "1", "2"]
probabilities = [0.333333333333, 0.333333333333, 0.333333333334]

[coupling]
mode = "invariant"

[restrictions]
monotone = true
rank_similar = true
"#;

/// Linear outcome without covariates, effect 2.
pub const CONSTANT_EFFECT: &str = r#"
name = "constant_effect"
first_stage = ["u", "0.5 + 1.5 * u"]
noise = 1
disturbance = "0.5 * (u0 - 0.5) + 0.2 * qnorm(nu1)"
outcome = "2 * t + eps"

[instrument]
labels = ["0", "1"]
probabilities = [0.5, 0.5]

[coupling]
mode = "invariant"

[restrictions]
monotone = true
rank_similar = true
"#;

pub const NAMES: &[&str] = &["dgp_m", "dgp_rs", "dgp_x", "dgp_v", "dgp_multi", "constant_effect"];

/// TOML source of a preset.
pub fn preset_source(name: &str) -> Result<&'static str> {
    Ok(match name {
        "dgp_m" => DGP_M,
        "dgp_rs" => DGP_RS,
        "dgp_x" => DGP_X,
        "dgp_v" => DGP_V,
        "dgp_multi" => DGP_MULTI,
        "constant_effect" => CONSTANT_EFFECT,
        _ => return Err(Error::InvalidArgument(format!("unknown preset `{name}`; known: {}", NAMES.join(", ")))),
    })
}

pub fn preset(name: &str) -> Result<DgpSpec> {
    DgpSpec::from_toml(preset_source(name)?)
}
