//! Synthetic data-generating processes, numerically integrated ground
//! truth, and a Monte Carlo harness.

pub mod expr;
pub mod mc;
pub mod oracle;
pub mod presets;
pub mod spec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::Result;
use crate::stats;

pub use mc::{monte_carlo, McEstimator, McReport, McRow};
pub use oracle::{oracle, oracle_for_pair, OracleValue};
pub use spec::{Compiled, Coupling, Covariate, CovariateLaw, DgpSpec, InstrumentSpec, Restrictions};

/// All latent draws for one unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub x: Vec<f64>,
    pub z: usize,
    pub u0: f64,
    pub nu: Vec<f64>,
    /// Arm-specific normal shocks used by the similar coupling.
    pub xi: Vec<f64>,
    pub eps: f64,
}

fn draw_unit(c: &Compiled, rng: &mut ChaCha8Rng, buf: &mut Vec<f64>) -> Unit {
    let x = spec::draw_x(c, rng);
    let prop = c.propensity(&x);
    let r: f64 = rng.gen();
    let mut z = c.k - 1;
    let mut acc = 0.0;
    for (k, p) in prop.iter().enumerate() {
        acc += p;
        if r < acc {
            z = k;
            break;
        }
    }
    let u0: f64 = rng.gen();
    let nu: Vec<f64> = (0..c.noise).map(|_| rng.gen()).collect();
    let xi: Vec<f64> = (0..c.k).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    let eps = c.eps(u0, &nu, &x, buf);
    Unit { x, z, u0, nu, xi, eps }
}

/// Rank U_k of a unit under the spec's coupling.
pub fn rank(spec: &DgpSpec, c: &Compiled, unit: &Unit, k: usize) -> f64 {
    match &spec.coupling {
        Coupling::Invariant => unit.u0,
        Coupling::Similar { rho } => {
            let w = stats::qnorm(unit.u0);
            stats::pnorm(rho * w + (1.0 - rho * rho).sqrt() * unit.xi[k])
        }
        Coupling::Violated { .. } => {
            if k > 0 && c.triggered(unit.eps, unit.u0, &unit.x) {
                1.0 - unit.u0
            } else {
                unit.u0
            }
        }
    }
}

/// Potential treatments and outcomes of one unit under every arm.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    pub z: usize,
    pub t: Vec<f64>,
    pub y: Vec<f64>,
}

fn units(c: &Compiled, n: usize, seed: u64) -> Vec<Unit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = Vec::new();
    (0..n).map(|_| draw_unit(c, &mut rng, &mut buf)).collect()
}

/// Potential outcomes of the units that `generate` with the same arguments
/// would draw.
pub fn potential_outcomes(spec: &DgpSpec, n: usize, seed: u64) -> Result<Vec<Potential>> {
    let c = spec.validate()?;
    let mut buf = Vec::new();
    Ok(units(&c, n, seed)
        .into_iter()
        .map(|u| {
            let t: Vec<f64> = (0..c.k).map(|k| c.treatment(k, &u.x, rank(spec, &c, &u, k), &mut buf)).collect();
            let y = t.iter().map(|&tk| c.outcome(tk, u.eps, &u.x, &mut buf)).collect();
            Potential { z: u.z, t, y }
        })
        .collect())
}

/// Draw `n` observations. Deterministic in (spec, n, seed).
pub fn generate(spec: &DgpSpec, n: usize, seed: u64) -> Result<Dataset> {
    let c = spec.validate()?;
    generate_compiled(spec, &c, n, seed)
}

/// `generate` for a spec that has already been validated.
pub fn generate_compiled(spec: &DgpSpec, c: &Compiled, n: usize, seed: u64) -> Result<Dataset> {
    let mut buf = Vec::new();
    let us = units(c, n, seed);
    let mut y = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n * c.d_x);
    let mut z = Vec::with_capacity(n);
    for u in &us {
        let tk = c.treatment(u.z, &u.x, rank(spec, c, u, u.z), &mut buf);
        y.push(c.outcome(tk, u.eps, &u.x, &mut buf));
        t.push(tk);
        x.extend_from_slice(&u.x);
        z.push(u.z as u32);
    }
    Dataset::with_labels(y, t, x, c.d_x, z, spec.instrument.labels.clone(), spec.covariate_names())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestrictionCheck {
    pub monotone_holds: bool,
    pub rank_similar_holds: bool,
}

/// Check monotonicity by sampling potential treatments (every adjacent pair
/// of arms must be ordered the same way in every draw) and rank similarity
/// from the coupling mode.
pub fn verify_restrictions(spec: &DgpSpec, probe_size: usize) -> Result<RestrictionCheck> {
    let c = spec.compile()?;
    let mut buf = Vec::new();
    let us = units(&c, probe_size, 0x9e37_79b9);
    let mut monotone = true;
    for k in 1..c.k {
        let (mut up, mut down) = (false, false);
        for u in &us {
            let t0 = c.treatment(k - 1, &u.x, rank(spec, &c, u, k - 1), &mut buf);
            let t1 = c.treatment(k, &u.x, rank(spec, &c, u, k), &mut buf);
            let tol = 1e-12 * (1.0 + t0.abs());
            up |= t1 > t0 + tol;
            down |= t1 < t0 - tol;
        }
        monotone &= !(up && down);
    }
    let rank_similar = !matches!(spec.coupling, Coupling::Violated { .. });
    Ok(RestrictionCheck { monotone_holds: monotone, rank_similar_holds: rank_similar })
}
