//! Multi-valued instruments: ordering, lambda weights, and the pairwise
//! aggregate.

use serde::{Deserialize, Serialize};

use super::{analyze_pair, wald::wald_x, EstimandConfig, EstimateReport, PairAnalysis, PairBreakdown, WeakIvRule};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaWeights {
    /// Instrument codes sorted by their mean treatment.
    pub order: Vec<u32>,
    /// Cell mean of T, in `order`.
    pub p_hat: Vec<f64>,
    /// Cell share, in `order`.
    pub r_hat: Vec<f64>,
    pub p_bar: f64,
    /// lambda_1..lambda_K for the adjacent ordered pairs.
    pub lambda: Vec<f64>,
    /// Unnormalized lambda numerators A_k = (p_k - p_{k-1}) P_k.
    pub a: Vec<f64>,
    pub warnings: Vec<String>,
}

impl LambdaWeights {
    /// Adjacent ordered pairs (lower code, upper code).
    pub fn pairs(&self) -> Vec<(u32, u32)> {
        self.order.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Order instrument values by mean treatment and compute the weights
/// lambda_k proportional to (p_k - p_{k-1}) sum_{l >= k} r_l (p_l - pbar).
pub fn lambda_weights(d: &Dataset) -> Result<LambdaWeights> {
    let k = d.n_codes();
    let n = d.n() as f64;
    let means: Vec<f64> = (0..k as u32)
        .map(|c| {
            let t: Vec<f64> = d.cell_rows(c).into_iter().map(|i| d.treatment()[i]).collect();
            stats::mean(&t)
        })
        .collect();
    let counts = d.cell_counts();
    let mut order: Vec<u32> = (0..k as u32).collect();
    order.sort_by(|&a, &b| means[a as usize].total_cmp(&means[b as usize]));
    let p_hat: Vec<f64> = order.iter().map(|&c| means[c as usize]).collect();
    let r_hat: Vec<f64> = order.iter().map(|&c| counts[c as usize] as f64 / n).collect();
    let p_bar: f64 = p_hat.iter().zip(&r_hat).map(|(p, r)| p * r).sum();
    let scale = 1.0 + p_hat.iter().map(|p| p.abs()).fold(0.0, f64::max);
    let mut warnings = Vec::new();
    for m in 1..k {
        if (p_hat[m] - p_hat[m - 1]).abs() <= 1e-10 * scale {
            warnings.push(format!(
                "instrument values `{}` and `{}` have tied mean treatment; original code order kept",
                d.labels()[order[m - 1] as usize],
                d.labels()[order[m] as usize]
            ));
        }
    }
    let a: Vec<f64> = (1..k)
        .map(|m| {
            let tail: f64 = (m..k).map(|l| r_hat[l] * (p_hat[l] - p_bar)).sum();
            (p_hat[m] - p_hat[m - 1]) * tail
        })
        .collect();
    let total: f64 = a.iter().sum();
    if !(total > 1e-14 * scale * scale) {
        return Err(Error::WeakMultiFirstStage(format!(
            "mean treatment does not vary across instrument values (normalizer {total:.3e})"
        )));
    }
    let lambda = a.iter().map(|x| x / total).collect();
    Ok(LambdaWeights { order, p_hat, r_hat, p_bar, lambda, a, warnings })
}

/// Per-pair fits for the multi-valued aggregate.
#[derive(Debug, Clone)]
pub struct MultiAnalysis {
    pub weights: LambdaWeights,
    /// One entry per adjacent ordered pair; `None` when every cell of the
    /// pair was trimmed.
    pub pairs: Vec<PairAnalysis>,
    pub points: Vec<Option<f64>>,
    pub b_hats: Vec<f64>,
    pub trimmed: Vec<f64>,
    pub point: f64,
    pub warnings: Vec<String>,
}

fn in_pair(d: &Dataset, pair: (u32, u32), e: Error) -> Error {
    let l = d.labels();
    Error::InPair { pair: (l[pair.0 as usize].clone(), l[pair.1 as usize].clone()), source: Box::new(e) }
}

pub fn analyze_multi(d: &Dataset, config: &EstimandConfig) -> Result<MultiAnalysis> {
    let weights = lambda_weights(d)?;
    let mut warnings = weights.warnings.clone();
    let mut pairs = Vec::new();
    let mut points = Vec::new();
    let mut b_hats = Vec::new();
    let mut trimmed = Vec::new();
    let mut point = 0.0;
    for (k, pair) in weights.pairs().into_iter().enumerate() {
        let a = analyze_pair(d, config, pair).map_err(|e| in_pair(d, pair, e))?;
        match a.aggregate(config.sign_mode, None) {
            Ok(agg) => {
                point += weights.lambda[k] * agg.point;
                points.push(Some(agg.point));
                b_hats.push(agg.b);
                trimmed.push(agg.trimmed_fraction);
            }
            Err(Error::AllTrimmed { .. }) | Err(Error::EmptySignSet { .. }) => {
                warnings.push(format!(
                    "pair ({}, {}): every cell trimmed; contributes zero",
                    d.labels()[pair.0 as usize],
                    d.labels()[pair.1 as usize]
                ));
                points.push(None);
                b_hats.push(0.0);
                trimmed.push(1.0);
            }
            Err(e) => return Err(in_pair(d, pair, e)),
        }
        pairs.push(a);
    }
    Ok(MultiAnalysis { weights, pairs, points, b_hats, trimmed, point, warnings })
}

pub fn report_multi(d: &Dataset, m: &MultiAnalysis) -> EstimateReport {
    let mut r = EstimateReport::new("pi_dr_multi", m.point, d.n());
    let cells: f64 = m.pairs.iter().map(|p| (p.n() * p.eval.l) as f64).sum();
    r.trimmed_fraction = m
        .pairs
        .iter()
        .zip(&m.trimmed)
        .map(|(p, t)| t * (p.n() * p.eval.l) as f64)
        .sum::<f64>()
        / cells;
    r.b_hat = m.weights.a.iter().sum();
    r.rho_n = m.pairs.iter().map(|p| p.rho()).fold(0.0, f64::max);
    for (k, pair) in m.weights.pairs().into_iter().enumerate() {
        r.per_pair_breakdown.push(PairBreakdown {
            pair,
            labels: (d.labels()[pair.0 as usize].clone(), d.labels()[pair.1 as usize].clone()),
            lambda: m.weights.lambda[k],
            point: m.points[k].unwrap_or(0.0),
            se_plugin: None,
            b_hat: m.b_hats[k],
            trimmed_fraction: m.trimmed[k],
        });
    }
    r.warnings = m.warnings.clone();
    for p in &m.pairs {
        r.warnings.extend(p.warnings.iter().cloned());
    }
    r
}

/// lambda-weighted aggregate of pairwise doubly robust estimates.
pub fn pi_dr_multi(d: &Dataset, config: &EstimandConfig) -> Result<EstimateReport> {
    if d.n_codes() < 3 {
        return Err(Error::InvalidArgument("multi-valued aggregate needs at least three instrument values".into()));
    }
    let m = analyze_multi(d, config)?;
    Ok(report_multi(d, &m))
}

/// lambda-weighted aggregate of pairwise covariate-adjusted Wald ratios.
pub fn wald_x_multi(d: &Dataset, rule: &WeakIvRule) -> Result<EstimateReport> {
    let w = lambda_weights(d)?;
    let mut r = EstimateReport::new("wald_x_multi", 0.0, d.n());
    for (k, pair) in w.pairs().into_iter().enumerate() {
        let e = wald_x(d, pair, rule).map_err(|e| in_pair(d, pair, e))?;
        r.point += w.lambda[k] * e.point;
        r.per_pair_breakdown.push(PairBreakdown {
            pair,
            labels: (d.labels()[pair.0 as usize].clone(), d.labels()[pair.1 as usize].clone()),
            lambda: w.lambda[k],
            point: e.point,
            se_plugin: e.se_plugin,
            b_hat: e.b_hat,
            trimmed_fraction: 0.0,
        });
    }
    r.b_hat = w.a.iter().sum();
    r.warnings = w.warnings;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_arm(means: [f64; 3], sizes: [usize; 3]) -> Dataset {
        let mut t = Vec::new();
        let mut z = Vec::new();
        for k in 0..3 {
            for i in 0..sizes[k] {
                // symmetric offsets keep the cell mean exact
                let off = (i as f64 - (sizes[k] - 1) as f64 / 2.0) * 0.01;
                t.push(means[k] + off);
                z.push(k as u32);
            }
        }
        Dataset::new(t.clone(), t, vec![], 0, z).unwrap()
    }

    #[test]
    fn table_three_structure() {
        let d = three_arm([5.62, 5.99, 6.22], [77, 75, 74]);
        let w = lambda_weights(&d).unwrap();
        assert!(w.lambda[0] >= 0.60 && w.lambda[0] <= 0.72, "{:?}", w.lambda);
        assert!((w.lambda.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.lambda.iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn ordering_by_mean() {
        let d = three_arm([6.22, 5.62, 5.99], [20, 20, 20]);
        let w = lambda_weights(&d).unwrap();
        assert_eq!(w.order, vec![1, 2, 0]);
    }

    #[test]
    fn binary_weight_is_one() {
        let t = vec![1.0, 2.0, 3.0, 4.0];
        let d = Dataset::new(t.clone(), t, vec![], 0, vec![0, 0, 1, 1]).unwrap();
        assert_eq!(lambda_weights(&d).unwrap().lambda, vec![1.0]);
    }

    #[test]
    fn equal_means_are_degenerate() {
        let d = three_arm([5.0, 5.0, 5.0], [10, 10, 10]);
        assert!(matches!(lambda_weights(&d), Err(Error::WeakMultiFirstStage(_))));
    }
}
