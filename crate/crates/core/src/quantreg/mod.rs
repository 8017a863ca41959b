//! Step one: linear quantile regression of T on (1, X, Z, Z X) over a grid
//! of quantile levels, with the sandwich pieces used by the influence
//! functions.

pub mod solver;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::{linalg, par, stats};

pub use solver::{check_loss, fit_check_loss, rho, SolverOptions};

/// Midpoint grid v_j = (j - 1/2) / l, j = 1..l.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileGrid {
    l: usize,
    points: Vec<f64>,
}

impl QuantileGrid {
    pub fn new(l: usize) -> Result<Self> {
        if l == 0 {
            return Err(Error::InvalidArgument("grid needs at least one point".into()));
        }
        let points = (1..=l).map(|j| (j as f64 - 0.5) / l as f64).collect();
        Ok(QuantileGrid { l, points })
    }
    pub fn len(&self) -> usize {
        self.l
    }
    pub fn is_empty(&self) -> bool {
        self.l == 0
    }
    pub fn points(&self) -> &[f64] {
        &self.points
    }
    /// Index of `v` on the grid, if it is a grid point.
    pub fn index_of(&self, v: f64) -> Option<usize> {
        let j = (v * self.l as f64 + 0.5).round() as isize - 1;
        if j < 0 || j as usize >= self.l {
            return None;
        }
        let j = j as usize;
        ((self.points[j] - v).abs() <= 1e-12).then_some(j)
    }
    /// Grid index closest to `v`.
    pub fn nearest(&self, v: f64) -> usize {
        let j = (v * self.l as f64).floor() as isize;
        j.clamp(0, self.l as isize - 1) as usize
    }
}

impl Default for QuantileGrid {
    fn default() -> Self {
        QuantileGrid::new(99).expect("default grid")
    }
}

/// How the conditional density inside the sandwich is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DensityMode {
    /// Reuse neighbouring grid fits: the Hall–Sheather bandwidth is rounded
    /// to a whole number of grid steps, one-sided at the grid edges.
    #[default]
    GridSnapped,
    /// Two extra solves at v +/- h for every grid point.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct QrOptions {
    pub solver: SolverOptions,
    pub density: DensityMode,
}

/// Sandwich components at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Sandwich {
    /// theta(v) = n^-1 sum f_i S_i S_i'.
    pub theta: DMatrix<f64>,
    pub theta_inv: DMatrix<f64>,
    /// n^-1 sum (v - 1(T_i <= S_i'a))^2 S_i S_i'.
    pub inner: DMatrix<f64>,
    /// theta^-1 inner theta^-1.
    pub cov: DMatrix<f64>,
    pub min_eigenvalue: f64,
    pub ill_conditioned: bool,
    /// Observations whose difference quotient was floored.
    pub floored: usize,
    /// Half-width of the quantile window used for the density.
    pub bandwidth: f64,
}

/// Quantile-regression process for one instrument pair.
#[derive(Debug, Clone)]
pub struct QuantileFit {
    pub grid: QuantileGrid,
    /// (lower code, upper code); the upper code is coded z = 1.
    pub pair: (u32, u32),
    /// Dataset rows entering the fit.
    pub rows: Vec<usize>,
    pub d_x: usize,
    /// Rows S_i = (1, X_i', z_i, z_i X_i').
    pub design: DMatrix<f64>,
    pub response: Vec<f64>,
    pub z: Vec<u8>,
    pub coeffs: Vec<DVector<f64>>,
    pub sandwich: Vec<Sandwich>,
    pub column_names: Vec<String>,
    pub iterations: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Hall–Sheather bandwidth at quantile level v for sample size n.
pub fn hall_sheather(n: usize, v: f64) -> f64 {
    let z = stats::qnorm(0.975);
    let x = stats::qnorm(v);
    let f = stats::dnorm(x);
    (n as f64).powf(-1.0 / 3.0) * z.powf(2.0 / 3.0) * (1.5 * f * f / (2.0 * x * x + 1.0)).powf(1.0 / 3.0)
}

/// S(x, z) = (1, x', z, z x').
pub fn design_row(x: &[f64], z: f64) -> DVector<f64> {
    let d = x.len();
    let mut s = DVector::zeros(2 * (d + 1));
    s[0] = 1.0;
    for j in 0..d {
        s[1 + j] = x[j];
        s[d + 2 + j] = z * x[j];
    }
    s[d + 1] = z;
    s
}

/// Delta S(x) = (0, 0', 1, x').
pub fn delta_design(x: &[f64]) -> DVector<f64> {
    let d = x.len();
    let mut s = DVector::zeros(2 * (d + 1));
    s[d + 1] = 1.0;
    for j in 0..d {
        s[d + 2 + j] = x[j];
    }
    s
}

/// Subsample rows and pair indicator for `pair`.
pub fn pair_rows(d: &Dataset, pair: (u32, u32)) -> Result<(Vec<usize>, Vec<u8>)> {
    let k = d.n_codes() as u32;
    if pair.0 >= k || pair.1 >= k || pair.0 == pair.1 {
        return Err(Error::InvalidArgument(format!("pair {pair:?} not valid for {k} codes")));
    }
    let mut rows = Vec::new();
    let mut z = Vec::new();
    for (i, &c) in d.instrument().iter().enumerate() {
        if c == pair.0 || c == pair.1 {
            rows.push(i);
            z.push((c == pair.1) as u8);
        }
    }
    Ok((rows, z))
}

const CHUNK: usize = 10;

pub fn fit_grid(d: &Dataset, grid: &QuantileGrid, pair: (u32, u32)) -> Result<QuantileFit> {
    fit_grid_with(d, grid, pair, &QrOptions::default())
}

pub fn fit_grid_with(
    d: &Dataset,
    grid: &QuantileGrid,
    pair: (u32, u32),
    opts: &QrOptions,
) -> Result<QuantileFit> {
    let (rows, z) = pair_rows(d, pair)?;
    let d_x = d.d_x();
    let p = 2 * (d_x + 1);
    let n = rows.len();
    let design = DMatrix::from_fn(n, p, |r, c| design_row(d.x(rows[r]), z[r] as f64)[c]);
    let response: Vec<f64> = rows.iter().map(|&i| d.treatment()[i]).collect();

    let mut names = vec!["intercept".to_string()];
    names.extend(d.covariate_names().iter().cloned());
    names.push("z".into());
    names.extend(d.covariate_names().iter().map(|c| format!("z*{c}")));
    solver::validate(&design, &response, grid.points()[0], Some(&names))?;

    // Grid points are solved in fixed chunks: the first point of each chunk
    // from scratch, the rest warm-started from their left neighbour. Chunks
    // run in parallel and do not depend on the worker count.
    let pts = grid.points();
    let chunks: Vec<&[f64]> = pts.chunks(CHUNK).collect();
    let band = (4.0 * ((n * p) as f64).sqrt()) as usize + 2 * n / grid.len() + 10 * p;
    let solved = par::map_slice(&chunks, |chunk| -> Result<Vec<solver::Solution>> {
        let mut out: Vec<solver::Solution> = Vec::with_capacity(chunk.len());
        for &v in chunk.iter() {
            let s = match out.last() {
                None => solver::solve(&design, &response, v, &opts.solver),
                Some(prev) => solver::solve_banded(&design, &response, v, &opts.solver, &prev.coef, band),
            };
            out.push(s.map_err(|e| annotate(e, v))?);
        }
        Ok(out)
    });
    let mut coeffs = Vec::with_capacity(grid.len());
    let mut iterations = Vec::with_capacity(grid.len());
    for chunk in solved {
        for s in chunk? {
            coeffs.push(s.coef);
            iterations.push(s.iterations);
        }
    }

    let mut fit = QuantileFit {
        grid: grid.clone(),
        pair,
        rows,
        d_x,
        design,
        response,
        z,
        coeffs,
        sandwich: Vec::new(),
        column_names: names,
        iterations,
        warnings: Vec::new(),
    };
    fit.sandwich = build_sandwiches(&fit, opts)?;
    let floored: usize = fit.sandwich.iter().map(|s| s.floored).sum();
    let cells = n * grid.len();
    if floored as f64 > 0.1 * cells as f64 {
        fit.warnings.push(format!(
            "density floor applied in {floored} of {cells} observation-quantile cells"
        ));
    }
    let ill: Vec<f64> = fit
        .sandwich
        .iter()
        .zip(grid.points())
        .filter(|(s, _)| s.ill_conditioned)
        .map(|(_, &v)| v)
        .collect();
    if !ill.is_empty() {
        fit.warnings.push(format!("near-singular theta(v) at {} grid points", ill.len()));
    }
    Ok(fit)
}

fn annotate(e: Error, v: f64) -> Error {
    Error::AtQuantile { v, source: Box::new(e) }
}

fn build_sandwiches(fit: &QuantileFit, opts: &QrOptions) -> Result<Vec<Sandwich>> {
    let n = fit.n();
    let l = fit.grid.len();
    let pts = fit.grid.points();
    let scale = {
        let iqr = stats::iqr(&fit.response);
        if iqr > 0.0 {
            iqr
        } else {
            let s = stats::sd(&fit.response);
            if s > 0.0 {
                s
            } else {
                1.0
            }
        }
    };
    let floor = 1e-3 / scale;
    let cap = 1e10 / scale;
    let exact = opts.density == DensityMode::Exact || l < 2;

    let out = par::map_indexed(l, |j| -> Result<Sandwich> {
        let v = pts[j];
        let h = hall_sheather(n, v);
        let (v_lo, v_hi, a_lo, a_hi) = if exact {
            let h = h.min(0.999 * v.min(1.0 - v));
            let lo = solver::solve(&fit.design, &fit.response, v - h, &opts.solver)?.coef;
            let hi = solver::solve(&fit.design, &fit.response, v + h, &opts.solver)?.coef;
            (v - h, v + h, lo, hi)
        } else {
            let steps = ((h * l as f64).round() as usize).max(1);
            let lo = j.saturating_sub(steps);
            let hi = (j + steps).min(l - 1);
            (pts[lo], pts[hi], fit.coeffs[lo].clone(), fit.coeffs[hi].clone())
        };
        let da = &a_hi - &a_lo;
        let dv = v_hi - v_lo;
        let a = &fit.coeffs[j];
        let p = fit.p();
        let mut theta = DMatrix::<f64>::zeros(p, p);
        let mut inner = DMatrix::<f64>::zeros(p, p);
        let mut floored = 0;
        let mut row = vec![0.0; p];
        for i in 0..n {
            for (c, r) in row.iter_mut().enumerate() {
                *r = fit.design[(i, c)];
            }
            let denom: f64 = row.iter().zip(da.iter()).map(|(s, d)| s * d).sum();
            let tol = 1e-13 * (1.0 + fit.response[i].abs());
            let mut f = if denom.abs() <= tol { cap } else { dv / denom };
            if !(f >= floor) {
                f = floor;
                floored += 1;
            }
            f = f.min(cap);
            let u = v - if fit.below(i, a) { 1.0 } else { 0.0 };
            let uu = u * u;
            for c in 0..p {
                for r in c..p {
                    let ss = row[r] * row[c];
                    theta[(r, c)] += f * ss;
                    inner[(r, c)] += uu * ss;
                }
            }
        }
        theta.fill_upper_triangle_with_lower_triangle();
        inner.fill_upper_triangle_with_lower_triangle();
        theta /= n as f64;
        inner /= n as f64;
        let (lo_eig, hi_eig) = linalg::eig_range(&theta);
        let ill = !(lo_eig > 1e-10 * hi_eig.abs());
        // Cholesky keeps the inverse equivariant under reparametrizations of
        // the design; the truncated pseudo-inverse does not.
        let theta_inv = match theta.clone().cholesky() {
            Some(c) => c.inverse(),
            None => linalg::pinv_sym(&theta, linalg::PINV_RTOL).0,
        };
        let cov = &theta_inv * &inner * &theta_inv;
        Ok(Sandwich {
            theta,
            theta_inv,
            inner,
            cov,
            min_eigenvalue: lo_eig,
            ill_conditioned: ill,
            floored,
            bandwidth: dv / 2.0,
        })
    });
    out.into_iter().collect()
}

impl QuantileFit {
    pub fn n(&self) -> usize {
        self.design.nrows()
    }
    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    /// 1(T_i <= S_i'a), with a relative tolerance so that observations
    /// interpolated by a basic solution count as below.
    pub fn below(&self, i: usize, a: &DVector<f64>) -> bool {
        let fitted = self.design.row(i).dot(&a.transpose());
        self.response[i] - fitted <= 1e-11 * (1.0 + self.response[i].abs())
    }

    fn index(&self, v: f64) -> Result<usize> {
        self.grid.index_of(v).ok_or(Error::OffGrid(v))
    }

    /// q_z(x, v_j) without rearrangement.
    pub fn quantile_at(&self, x: &[f64], z: f64, j: usize) -> f64 {
        design_row(x, z).dot(&self.coeffs[j])
    }

    /// q_z(x, .) over the grid, optionally monotone-rearranged.
    pub fn quantile_path(&self, x: &[f64], z: f64, rearrange: bool) -> Vec<f64> {
        let s = design_row(x, z);
        let mut q: Vec<f64> = self.coeffs.iter().map(|a| s.dot(a)).collect();
        if rearrange {
            q.sort_by(|a, b| a.total_cmp(b));
        }
        q
    }

    /// a_2(v_j) + x'a_3(v_j).
    pub fn delta_q_at(&self, x: &[f64], j: usize) -> f64 {
        delta_design(x).dot(&self.coeffs[j])
    }

    /// se of Delta q(x, v_j) from the sandwich.
    pub fn se_delta_q_at(&self, x: &[f64], j: usize) -> f64 {
        let ds = delta_design(x);
        (linalg::quad(&ds, &self.sandwich[j].cov).max(0.0) / self.n() as f64).sqrt()
    }

    /// Covariates of subsample row r.
    pub fn x_row(&self, r: usize) -> Vec<f64> {
        (0..self.d_x).map(|c| self.design[(r, 1 + c)]).collect()
    }

    /// phi_i(v_j) = theta^-1 (1(T_i <= S_i'a) - v) S_i.
    pub fn phi(&self, i: usize, j: usize) -> DVector<f64> {
        let v = self.grid.points()[j];
        let u = if self.below(i, &self.coeffs[j]) { 1.0 } else { 0.0 } - v;
        &self.sandwich[j].theta_inv * self.design.row(i).transpose() * u
    }
}

/// Delta q(x, v) = a_2(v) + x'a_3(v) at a grid point.
pub fn delta_q(f: &QuantileFit, x: &[f64], v: f64) -> Result<f64> {
    if x.len() != f.d_x {
        return Err(Error::InvalidArgument(format!("x has length {}, expected {}", x.len(), f.d_x)));
    }
    Ok(f.delta_q_at(x, f.index(v)?))
}

/// Per-observation influence terms and standard errors of Delta q.
#[derive(Debug, Clone)]
pub struct QrInfluence {
    /// phi[j] is n x p with row i = phi_i(v_j)'.
    pub phi: Vec<DMatrix<f64>>,
    /// se(Delta q(X_i, v_j)), indexed [j][i].
    pub se_delta_q: Vec<Vec<f64>>,
}

pub fn qr_influence(f: &QuantileFit) -> QrInfluence {
    let n = f.n();
    let l = f.grid.len();
    let xs: Vec<Vec<f64>> = (0..n).map(|i| f.x_row(i)).collect();
    let phi = par::map_indexed(l, |j| {
        let mut m = DMatrix::zeros(n, f.p());
        for i in 0..n {
            m.set_row(i, &f.phi(i, j).transpose());
        }
        m
    });
    let se_delta_q = par::map_indexed(l, |j| xs.iter().map(|x| f.se_delta_q_at(x, j)).collect());
    QrInfluence { phi, se_delta_q }
}
