//! Wald ratio and its covariate-adjusted version.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::EstimateReport;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::quantreg::{delta_design, design_row, pair_rows};
use crate::{linalg, stats};

/// When a first-stage denominator counts as too weak to divide by: its
/// magnitude must exceed both `rel_tol * sd(T)` and `z * se`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakIvRule {
    pub rel_tol: f64,
    /// Set to zero to gate on the numerical tolerance alone.
    pub z: f64,
}

impl Default for WeakIvRule {
    fn default() -> Self {
        WeakIvRule { rel_tol: 1e-3, z: 1.96 }
    }
}

impl WeakIvRule {
    pub fn check(&self, denominator: f64, se: f64, sd_t: f64) -> Result<()> {
        if !(denominator.abs() >= self.rel_tol * sd_t && denominator.abs() >= self.z * se)
            || denominator == 0.0
        {
            return Err(Error::WeakFirstStage { denominator, se });
        }
        Ok(())
    }
}

fn cell_moments(xs: &[f64]) -> (f64, f64) {
    (stats::mean(xs), stats::variance(xs))
}

/// (Ybar_1 - Ybar_0) / (Tbar_1 - Tbar_0) on the pair's cells, with a
/// delta-method standard error.
pub fn wald(d: &Dataset, pair: (u32, u32), rule: &WeakIvRule) -> Result<EstimateReport> {
    let (rows, z) = pair_rows(d, pair)?;
    let split = |col: &[f64], want: u8| -> Vec<f64> {
        rows.iter().zip(&z).filter(|(_, &zz)| zz == want).map(|(&i, _)| col[i]).collect()
    };
    let (y0, y1) = (split(d.outcome(), 0), split(d.outcome(), 1));
    let (t0, t1) = (split(d.treatment(), 0), split(d.treatment(), 1));
    let (n0, n1) = (t0.len() as f64, t1.len() as f64);
    let (mt0, vt0) = cell_moments(&t0);
    let (mt1, vt1) = cell_moments(&t1);
    let den = mt1 - mt0;
    let se_den = (vt0 / n0 + vt1 / n1).sqrt();
    let t_all: Vec<f64> = rows.iter().map(|&i| d.treatment()[i]).collect();
    rule.check(den, se_den, stats::sd(&t_all))?;
    let num = stats::mean(&y1) - stats::mean(&y0);
    let tau = num / den;
    let resid = |y: &[f64], t: &[f64]| -> Vec<f64> { y.iter().zip(t).map(|(a, b)| a - tau * b).collect() };
    let var = stats::variance(&resid(&y0, &t0)) / n0 + stats::variance(&resid(&y1, &t1)) / n1;
    let mut r = EstimateReport::new("wald", tau, rows.len());
    r.se_plugin = Some(var.sqrt() / den.abs());
    r.b_hat = den;
    Ok(r)
}

/// Result of a linear fit with full instrument interactions.
struct InteractedOls {
    theta: f64,
    /// Influence of theta for each row.
    infl: Vec<f64>,
}

fn interacted_ols(w: &DMatrix<f64>, dw: &DMatrix<f64>, y: &[f64]) -> Result<InteractedOls> {
    let n = w.nrows();
    let nf = n as f64;
    let yv = DVector::from_column_slice(y);
    let wtw = w.transpose() * w / nf;
    let chol = wtw.clone().cholesky().ok_or_else(|| Error::SingularDesign {
        columns: (0..w.ncols()).map(|j| format!("column {j}")).collect(),
    })?;
    let beta = chol.solve(&(w.transpose() * &yv / nf));
    let resid = &yv - w * &beta;
    let dbar = DVector::from_fn(w.ncols(), |c, _| dw.column(c).mean());
    let h = chol.solve(&dbar);
    let per_row = dw * &beta;
    let theta = per_row.mean();
    let infl = (0..n)
        .map(|i| (per_row[i] - theta) + w.row(i).dot(&h.transpose()) * resid[i])
        .collect();
    Ok(InteractedOls { theta, infl })
}

/// Covariate-adjusted Wald ratio: Y and T are each regressed on
/// (1, X, z, zX) over the pair subsample, and the implied z contrasts are
/// averaged over the pooled covariate distribution.
pub fn wald_x(d: &Dataset, pair: (u32, u32), rule: &WeakIvRule) -> Result<EstimateReport> {
    let (rows, z) = pair_rows(d, pair)?;
    let n = rows.len();
    let p = 2 * (d.d_x() + 1);
    if n <= p {
        return Err(Error::SampleSize { have: n, need: p + 1 });
    }
    let w = DMatrix::from_fn(n, p, |r, c| design_row(d.x(rows[r]), z[r] as f64)[c]);
    let dw = DMatrix::from_fn(n, p, |r, c| delta_design(d.x(rows[r]))[c]);
    let dep = linalg::dependent_columns(&w, linalg::PINV_RTOL);
    if !dep.is_empty() {
        let mut names = vec!["intercept".to_string()];
        names.extend(d.covariate_names().iter().cloned());
        names.push("z".into());
        names.extend(d.covariate_names().iter().map(|c| format!("z*{c}")));
        return Err(Error::SingularDesign { columns: dep.iter().map(|&j| names[j].clone()).collect() });
    }
    let y: Vec<f64> = rows.iter().map(|&i| d.outcome()[i]).collect();
    let t: Vec<f64> = rows.iter().map(|&i| d.treatment()[i]).collect();
    let fy = interacted_ols(&w, &dw, &y)?;
    let ft = interacted_ols(&w, &dw, &t)?;
    let nf = n as f64;
    let se_den = (ft.infl.iter().map(|v| v * v).sum::<f64>() / nf / nf).sqrt();
    rule.check(ft.theta, se_den, stats::sd(&t))?;
    let tau = fy.theta / ft.theta;
    let var: f64 = fy
        .infl
        .iter()
        .zip(&ft.infl)
        .map(|(a, b)| ((a - tau * b) / ft.theta).powi(2))
        .sum::<f64>()
        / nf;
    let mut r = EstimateReport::new("wald_x", tau, n);
    r.se_plugin = Some((var / nf).sqrt());
    r.b_hat = ft.theta;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_one_anchor() {
        let d = Dataset::new(vec![-0.005, 0.145, 0.10], vec![5.62, 5.99, 6.22], vec![], 0, vec![0, 1, 2])
            .unwrap();
        let r = wald(&d, (0, 1), &WeakIvRule::default()).unwrap();
        assert!((r.point - 0.15 / 0.37).abs() < 1e-6);
    }

    #[test]
    fn identity_outcome_and_covariate_free_equality() {
        let n = 60;
        let z: Vec<u32> = (0..n).map(|i| (i % 2) as u32).collect();
        let t: Vec<f64> = (0..n).map(|i| (i as f64 * 0.77).sin() + 2.0 * z[i] as f64).collect();
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.31).cos()).collect();
        let d = Dataset::new(t.clone(), t, x, 1, z).unwrap();
        let rule = WeakIvRule::default();
        assert!((wald(&d, (0, 1), &rule).unwrap().point - 1.0).abs() < 1e-12);
        assert!((wald_x(&d, (0, 1), &rule).unwrap().point - 1.0).abs() < 1e-12);
        let d0 = d.without_covariates();
        let a = wald(&d0, (0, 1), &rule).unwrap();
        let b = wald_x(&d0, (0, 1), &rule).unwrap();
        assert!((a.point - b.point).abs() < 1e-12);
    }

    #[test]
    fn zero_first_stage_is_weak() {
        let d = Dataset::new(vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 2.0, 2.0, 1.0], vec![], 0, vec![0, 0, 1, 1])
            .unwrap();
        assert!(matches!(wald(&d, (0, 1), &WeakIvRule::default()), Err(Error::WeakFirstStage { .. })));
    }
}
