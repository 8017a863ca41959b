//! Step two: partially linear series regression
//! m_z(x, t) = x'b0 + g0(t) + z x'b1 + z g1(t).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::quantreg::pair_rows;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisFamily {
    Power,
    Bspline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KnotRule {
    #[default]
    Uniform,
    Quantile,
}

/// Basis for the treatment block. `j` counts basis functions including the
/// constant, so the power family with `j = 2` is linear in t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub family: BasisFamily,
    pub j: usize,
    /// B-spline order (degree + 1).
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default)]
    pub knot_rule: KnotRule,
    /// Support of t; set from data when fitting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_range: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub interior_knots: Vec<f64>,
}

fn default_order() -> usize {
    4
}

impl Default for BasisSpec {
    fn default() -> Self {
        BasisSpec::power(2)
    }
}

impl BasisSpec {
    pub fn power(j: usize) -> Self {
        BasisSpec {
            family: BasisFamily::Power,
            j,
            order: default_order(),
            knot_rule: KnotRule::Uniform,
            t_range: None,
            interior_knots: vec![],
        }
    }

    pub fn bspline(j: usize, order: usize) -> Self {
        BasisSpec { family: BasisFamily::Bspline, order, ..BasisSpec::power(j) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.j == 0 {
            return Err(Error::InvalidArgument("basis needs J >= 1".into()));
        }
        if self.family == BasisFamily::Bspline {
            if self.order < 2 {
                return Err(Error::InvalidArgument("B-spline order must be at least 2".into()));
            }
            if self.j < self.order {
                return Err(Error::InvalidArgument(format!(
                    "B-spline with order {} needs J >= {}",
                    self.order, self.order
                )));
            }
        }
        if let Some((lo, hi)) = self.t_range {
            if !(hi > lo) {
                return Err(Error::InvalidArgument("empty t_range".into()));
            }
            if self.interior_knots.iter().any(|&k| !(k > lo && k < hi))
                || self.interior_knots.windows(2).any(|w| !(w[0] < w[1]))
            {
                return Err(Error::InvalidArgument("knots must be strictly inside t_range".into()));
            }
        }
        Ok(())
    }

    /// Set the support from observed treatments (padded by 1% of the range
    /// on each side) and place interior knots.
    pub fn resolve(&self, t: &[f64]) -> Result<BasisSpec> {
        self.validate()?;
        let lo = t.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let pad = if hi > lo { 0.01 * (hi - lo) } else { 0.5 * (1.0 + lo.abs()) };
        let (lo, hi) = (lo - pad, hi + pad);
        let mut out = self.clone();
        out.t_range = Some((lo, hi));
        out.interior_knots.clear();
        if self.family == BasisFamily::Bspline {
            let m = self.j - self.order;
            let uniform: Vec<f64> = (1..=m).map(|k| lo + (hi - lo) * k as f64 / (m + 1) as f64).collect();
            out.interior_knots = match self.knot_rule {
                KnotRule::Uniform => uniform,
                KnotRule::Quantile => {
                    let mut s = t.to_vec();
                    s.sort_by(|a, b| a.total_cmp(b));
                    let q: Vec<f64> =
                        (1..=m).map(|k| stats::quantile_sorted(&s, k as f64 / (m + 1) as f64)).collect();
                    if q.windows(2).all(|w| w[0] < w[1]) && q.iter().all(|&k| k > lo && k < hi) {
                        q
                    } else {
                        uniform
                    }
                }
            };
        }
        out.validate()?;
        Ok(out)
    }

    /// Length of psi^J for `d_x` covariates.
    pub fn dim(&self, d_x: usize) -> usize {
        2 * (d_x + self.j)
    }

    fn full_knots(&self) -> Result<(Vec<f64>, f64, f64)> {
        let (lo, hi) = self
            .t_range
            .ok_or_else(|| Error::InvalidArgument("B-spline basis needs a t_range".into()))?;
        let mut k = vec![lo; self.order];
        k.extend_from_slice(&self.interior_knots);
        k.extend(std::iter::repeat(hi).take(self.order));
        Ok((k, lo, hi))
    }

    /// Treatment block psi_1(t), ..., psi_J(t) and, if requested, its
    /// derivative.
    pub fn t_block(&self, t: f64, deriv: bool) -> Result<Vec<f64>> {
        match self.family {
            BasisFamily::Power => {
                let (s, ds) = match self.t_range {
                    Some((lo, hi)) => (2.0 * (t - lo) / (hi - lo) - 1.0, 2.0 / (hi - lo)),
                    None => (t, 1.0),
                };
                Ok((0..self.j)
                    .map(|k| {
                        if !deriv {
                            s.powi(k as i32)
                        } else if k == 0 {
                            0.0
                        } else {
                            k as f64 * s.powi(k as i32 - 1) * ds
                        }
                    })
                    .collect())
            }
            BasisFamily::Bspline => {
                let (knots, lo, hi) = self.full_knots()?;
                if !(t >= lo && t <= hi) {
                    return Err(Error::Extrapolation { t, lo, hi });
                }
                Ok(bspline_eval(&knots, self.order, t, deriv))
            }
        }
    }

    /// psi^J(x, t, z) = (x', psi(t)', z x', z psi(t)').
    pub fn row(&self, x: &[f64], t: f64, z: f64) -> Result<DVector<f64>> {
        Ok(self.layout(x, &self.t_block(t, false)?, z, true))
    }

    /// Derivative of psi^J in t (covariate blocks are zero).
    pub fn row_dt(&self, x: &[f64], t: f64, z: f64) -> Result<DVector<f64>> {
        Ok(self.layout(x, &self.t_block(t, true)?, z, false))
    }

    fn layout(&self, x: &[f64], tb: &[f64], z: f64, with_x: bool) -> DVector<f64> {
        let d = x.len();
        let j = self.j;
        let mut v = DVector::zeros(2 * (d + j));
        for c in 0..d {
            if with_x {
                v[c] = x[c];
                v[d + j + c] = z * x[c];
            }
        }
        for k in 0..j {
            v[d + k] = tb[k];
            v[2 * d + j + k] = z * tb[k];
        }
        v
    }
}

/// All B-spline basis functions (or their derivatives) of the given order at
/// t, by the Cox–de Boor recursion.
fn bspline_eval(knots: &[f64], order: usize, t: f64, deriv: bool) -> Vec<f64> {
    let m = knots.len() - 1;
    let nb = knots.len() - order;
    // Order-1 indicators; the right end of the support belongs to the last
    // nonempty interval.
    let mut b: Vec<f64> = (0..m)
        .map(|i| if knots[i] <= t && t < knots[i + 1] { 1.0 } else { 0.0 })
        .collect();
    if t >= knots[m] {
        if let Some(i) = (0..m).rev().find(|&i| knots[i] < knots[i + 1]) {
            b[i] = 1.0;
        }
    }
    let ratio = |a: f64, d: f64| if d > 0.0 { a / d } else { 0.0 };
    let top = if deriv { order - 1 } else { order };
    for k in 2..=top {
        let next: Vec<f64> = (0..m + 1 - k)
            .map(|i| {
                ratio(t - knots[i], knots[i + k - 1] - knots[i]) * b[i]
                    + ratio(knots[i + k] - t, knots[i + k] - knots[i + 1]) * b[i + 1]
            })
            .collect();
        b = next;
    }
    if !deriv {
        return b[..nb].to_vec();
    }
    let k = order;
    (0..nb)
        .map(|i| {
            let left = ratio(b[i], knots[i + k - 1] - knots[i]);
            let right = if i + 1 < b.len() { ratio(b[i + 1], knots[i + k] - knots[i + 1]) } else { 0.0 };
            (k - 1) as f64 * (left - right)
        })
        .collect()
}

pub fn build_basis(spec: &BasisSpec, x: &[f64], t: f64, z: f64) -> Result<DVector<f64>> {
    spec.row(x, t, z)
}

/// Fitted partially linear series regression for one instrument pair.
#[derive(Debug, Clone)]
pub struct SeriesFit {
    pub spec: BasisSpec,
    pub pair: (u32, u32),
    pub d_x: usize,
    pub rows: Vec<usize>,
    pub z: Vec<u8>,
    /// Psi, n x k.
    pub design: DMatrix<f64>,
    pub response: Vec<f64>,
    pub coeffs: DVector<f64>,
    /// G = Psi'Psi / n.
    pub gram: DMatrix<f64>,
    pub gram_pinv: DMatrix<f64>,
    pub effective_rank: usize,
    pub residuals: Vec<f64>,
    /// Omega = n^-1 sum e_i^2 psi_i psi_i'.
    pub omega: DMatrix<f64>,
    /// G^- Omega G^-.
    pub mho: DMatrix<f64>,
    pub warnings: Vec<String>,
}

impl SeriesFit {
    pub fn n(&self) -> usize {
        self.design.nrows()
    }
    pub fn k(&self) -> usize {
        self.design.ncols()
    }
    pub fn full_rank(&self) -> bool {
        self.effective_rank == self.k()
    }
    pub fn predict(&self, x: &[f64], t: f64, z: f64) -> Result<f64> {
        Ok(self.spec.row(x, t, z)?.dot(&self.coeffs))
    }
    pub fn predict_dt(&self, x: &[f64], t: f64, z: f64) -> Result<f64> {
        Ok(self.spec.row_dt(x, t, z)?.dot(&self.coeffs))
    }
}

pub fn fit_series(d: &Dataset, spec: &BasisSpec, pair: (u32, u32)) -> Result<SeriesFit> {
    let (rows, z) = pair_rows(d, pair)?;
    let t: Vec<f64> = rows.iter().map(|&i| d.treatment()[i]).collect();
    let y: Vec<f64> = rows.iter().map(|&i| d.outcome()[i]).collect();
    let spec = spec.resolve(&t)?;
    let d_x = d.d_x();
    let k = spec.dim(d_x);
    let n = rows.len();
    if n <= k {
        return Err(Error::SampleSize { have: n, need: k + 1 });
    }
    let mut design = DMatrix::zeros(n, k);
    for (r, &i) in rows.iter().enumerate() {
        design.set_row(r, &spec.row(d.x(i), t[r], z[r] as f64)?.transpose());
    }
    let yv = DVector::from_column_slice(&y);
    let (coeffs, rank, xtx_pinv) = linalg::lstsq_svd(&design, &yv, linalg::PINV_RTOL);
    let nf = n as f64;
    let gram = design.transpose() * &design / nf;
    let gram_pinv = xtx_pinv * nf;
    let fitted = &design * &coeffs;
    let residuals: Vec<f64> = (0..n).map(|i| y[i] - fitted[i]).collect();
    let mut omega = DMatrix::zeros(k, k);
    for i in 0..n {
        let row = design.row(i);
        omega += row.transpose() * row * residuals[i].powi(2);
    }
    omega /= nf;
    let mho = &gram_pinv * &omega * &gram_pinv;
    let mut warnings = Vec::new();
    if rank < k {
        warnings.push(format!("sieve design has effective rank {rank} of {k}; minimum-norm fit"));
    }
    Ok(SeriesFit {
        spec,
        pair,
        d_x,
        rows,
        z,
        design,
        response: y,
        coeffs,
        gram,
        gram_pinv,
        effective_rank: rank,
        residuals,
        omega,
        mho,
        warnings,
    })
}

pub fn predict_m(f: &SeriesFit, x: &[f64], t: f64, z: f64) -> Result<f64> {
    f.predict(x, t, z)
}

pub fn predict_dm_dt(f: &SeriesFit, x: &[f64], t: f64, z: f64) -> Result<f64> {
    f.predict_dt(x, t, z)
}
