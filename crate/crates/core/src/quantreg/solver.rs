//! Frisch–Newton interior point solver for linear quantile regression.
//!
//! The solver works on the bounded dual LP
//!
//! ```text
//!   min  -y'd   s.t.  X'd = (1 - v) X'1,   0 <= d <= 1
//! ```
//!
//! with Mehrotra predictor-corrector steps. The regression coefficients are
//! the negated equality multipliers. After convergence the solution is
//! snapped to the exact vertex interpolating the `p` observations with the
//! smallest absolute residuals whenever that does not increase the loss.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative duality-gap tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Snap the interior solution to an exact basic solution.
    pub polish: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-8, max_iter: 200, polish: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub coef: DVector<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub gap: f64,
}

/// The check function rho_v(u) = u (v - 1(u < 0)).
#[inline]
pub fn rho(u: f64, v: f64) -> f64 {
    if u < 0.0 {
        u * (v - 1.0)
    } else {
        u * v
    }
}

/// Total check loss of `coef` on (design, response).
pub fn check_loss(design: &DMatrix<f64>, response: &[f64], coef: &DVector<f64>, v: f64) -> f64 {
    let fitted = design * coef;
    response.iter().zip(fitted.iter()).map(|(y, f)| rho(y - f, v)).sum()
}

fn column_names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("column {j}")).collect()
}

/// Minimize the check loss at quantile level `v`, validating the design
/// first.
pub fn fit_check_loss(design: &DMatrix<f64>, response: &[f64], v: f64) -> Result<DVector<f64>> {
    validate(design, response, v, None)?;
    Ok(solve(design, response, v, &SolverOptions::default())?.coef)
}

/// Check sample size, quantile range, and column rank. `names` labels the
/// columns in the singular-design error.
pub fn validate(
    design: &DMatrix<f64>,
    response: &[f64],
    v: f64,
    names: Option<&[String]>,
) -> Result<()> {
    let (n, p) = design.shape();
    if response.len() != n {
        return Err(Error::InvalidArgument("response length differs from design rows".into()));
    }
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level {v} outside (0, 1)")));
    }
    if n <= p {
        return Err(Error::SampleSize { have: n, need: p + 1 });
    }
    let dep = linalg::dependent_columns(design, linalg::PINV_RTOL);
    if !dep.is_empty() {
        let all = names.map(|s| s.to_vec()).unwrap_or_else(|| column_names(p));
        return Err(Error::SingularDesign { columns: dep.iter().map(|&j| all[j].clone()).collect() });
    }
    Ok(())
}

/// Largest step in (0, 1] keeping `x + a dx` strictly positive, damped.
fn step_length(x: &[f64], dx: &[f64], x2: &[f64], dx2: &[f64]) -> f64 {
    const BETA: f64 = 0.99995;
    let mut a = f64::INFINITY;
    for (xi, di) in x.iter().zip(dx).chain(x2.iter().zip(dx2)) {
        if *di < 0.0 {
            a = a.min(-xi / di);
        }
    }
    (BETA * a).min(1.0)
}

/// Run the interior point method without validating the design.
pub fn solve(
    design: &DMatrix<f64>,
    response: &[f64],
    v: f64,
    opts: &SolverOptions,
) -> Result<Solution> {
    solve_core(design, response, v, opts, design.nrows())
}

/// Solve using `start` (typically the solution at a neighbouring quantile
/// level) to guess which observations lie strictly above or below the fit.
/// Only the `band` observations ranked nearest the target quantile enter the
/// LP; the rest are aggregated into one row per side. The reduced solution
/// is accepted only if every aggregated observation keeps its sign, which
/// makes it optimal for the full problem. Otherwise the offending rows are
/// moved into the band and the LP is re-solved, falling back to the full
/// problem after a few rounds.
pub fn solve_banded(
    design: &DMatrix<f64>,
    response: &[f64],
    v: f64,
    opts: &SolverOptions,
    start: &DVector<f64>,
    band: usize,
) -> Result<Solution> {
    let (n, p) = design.shape();
    if band + 2 * p + 2 >= n {
        return solve(design, response, v, opts);
    }
    let fitted = design * start;
    let resid: Vec<f64> = (0..n).map(|i| response[i] - fitted[i]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| resid[a].total_cmp(&resid[b]).then(a.cmp(&b)));
    let center = (n as f64 * v).round() as usize;
    let lo = center.saturating_sub(band / 2).min(n - band);
    // -1 below the band, 0 inside, +1 above
    let mut side = vec![0i8; n];
    for (rank, &i) in order.iter().enumerate() {
        side[i] = if rank < lo {
            -1
        } else if rank >= lo + band {
            1
        } else {
            0
        };
    }
    let (ymin, ymax) = response.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    let spread = 1.0 + (ymax - ymin);

    for _round in 0..4 {
        let mid: Vec<usize> = (0..n).filter(|&i| side[i] == 0).collect();
        if mid.len() * 2 > n {
            break;
        }
        let mut rows: Vec<Vec<f64>> = mid.iter().map(|&i| design.row(i).iter().copied().collect()).collect();
        let mut ys: Vec<f64> = mid.iter().map(|&i| response[i]).collect();
        for sgn in [-1i8, 1] {
            let members: Vec<usize> = (0..n).filter(|&i| side[i] == sgn).collect();
            if members.is_empty() {
                continue;
            }
            let mut g = vec![0.0; p];
            for &i in &members {
                for (c, gc) in g.iter_mut().enumerate() {
                    *gc += design[(i, c)];
                }
            }
            let fit_g: f64 = g.iter().zip(start.iter()).map(|(a, b)| a * b).sum();
            let k = 10.0 * spread * members.len() as f64;
            rows.push(g);
            ys.push(fit_g + sgn as f64 * k);
        }
        let m = rows.len();
        let reduced = DMatrix::from_fn(m, p, |r, c| rows[r][c]);
        let sol = solve_core(&reduced, &ys, v, opts, mid.len())?;
        // aggregated rows must stay strictly on their side
        let glob_ok = (mid.len()..m).all(|r| {
            let rr = ys[r] - reduced.row(r).dot(&sol.coef.transpose());
            (rr > 0.0) == (ys[r] > reduced.row(r).dot(&start.transpose()))
        });
        if !glob_ok {
            break;
        }
        let fit_all = design * &sol.coef;
        let mut moved = 0;
        for i in 0..n {
            if side[i] == 0 {
                continue;
            }
            let r = response[i] - fit_all[i];
            let tol = 1e-9 * (1.0 + response[i].abs());
            if (side[i] < 0 && r > tol) || (side[i] > 0 && r < -tol) {
                side[i] = 0;
                moved += 1;
            }
        }
        if moved == 0 {
            let loss = check_loss(design, response, &sol.coef, v);
            return Ok(Solution { coef: sol.coef, loss, iterations: sol.iterations, gap: sol.gap });
        }
    }
    solve(design, response, v, opts)
}

/// Interior point core. Only the first `n_real` rows count toward the
/// objective scale used in the stopping rule.
fn solve_core(
    design: &DMatrix<f64>,
    response: &[f64],
    v: f64,
    opts: &SolverOptions,
    n_real: usize,
) -> Result<Solution> {
    let (n, p) = design.shape();
    let xt = design.transpose();
    let y = DVector::from_column_slice(response);
    // Row-major copy for the per-observation loops.
    let xr: Vec<f64> = xt.as_slice().to_vec();

    // Primal start: d = 1 - v is feasible for the equality constraints.
    let mut x = vec![1.0 - v; n];
    let mut s = vec![v; n];

    // Dual start: least squares for the multipliers.
    let xtx = &xt * design;
    let chol = xtx.clone().cholesky().ok_or_else(|| Error::SingularDesign {
        columns: column_names(p),
    })?;
    let mut lam = -chol.solve(&(&xt * &y));
    let r0: Vec<f64> = (0..n).map(|i| -y[i] - design.row(i).dot(&lam.transpose())).collect();
    let mean_abs = r0.iter().map(|r| r.abs()).sum::<f64>() / n as f64;
    let scale = 1.0 + y.amax();
    let delta = 0.1 * mean_abs + 1e-6 * scale;
    let mut z: Vec<f64> = r0.iter().map(|&r| r.max(0.0) + delta).collect();
    let mut w: Vec<f64> = r0.iter().map(|&r| (-r).max(0.0) + delta).collect();

    let mut q = vec![0.0; n];
    let mut ix = vec![0.0; n];
    let mut is = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut dx = vec![0.0; n];
    let mut ds = vec![0.0; n];
    let mut dz = vec![0.0; n];
    let mut dw = vec![0.0; n];
    let (mut dxa, mut dza, mut dsa, mut dwa) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);

    let objective = |x: &[f64]| -> f64 { -x[..n_real].iter().zip(response).map(|(a, b)| a * b).sum::<f64>() };
    let gap_of = |x: &[f64], z: &[f64], s: &[f64], w: &[f64]| -> f64 {
        x.iter().zip(z).map(|(a, b)| a * b).sum::<f64>()
            + s.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
    };

    let mut gap = gap_of(&x, &z, &s, &w);
    let mut it = 0;
    while gap > opts.tol * objective(&x).abs().max(1.0) {
        if it >= opts.max_iter {
            return Err(Error::Convergence { iterations: it, gap });
        }
        it += 1;

        for i in 0..n {
            ix[i] = 1.0 / x[i];
            is[i] = 1.0 / s[i];
            q[i] = 1.0 / (z[i] * ix[i] + w[i] * is[i]);
            r[i] = z[i] - w[i];
        }
        // Normal matrix X' Q X.
        let mut acc = vec![0.0; p * p];
        for (i, row) in xr.chunks_exact(p).enumerate() {
            let qi = q[i];
            for a in 0..p {
                let qa = qi * row[a];
                let dst = &mut acc[a * p..a * p + a + 1];
                for (m, &rb) in dst.iter_mut().zip(row) {
                    *m += qa * rb;
                }
            }
        }
        let m = DMatrix::<f64>::from_fn(p, p, |a, b| if b <= a { acc[a * p + b] } else { acc[b * p + a] });
        let chol = match m.cholesky() {
            Some(c) => c,
            None => return Err(Error::Convergence { iterations: it, gap }),
        };
        let solve_dir = |rhs: &[f64], dx: &mut [f64]| -> DVector<f64> {
            // dlam = M^{-1} X' (q * rhs); dx = q * (X dlam - rhs)
            let mut t = vec![0.0; p];
            for ((row, &qi), &ri) in xr.chunks_exact(p).zip(q.iter()).zip(rhs) {
                let c = qi * ri;
                for (ta, &ra) in t.iter_mut().zip(row) {
                    *ta += ra * c;
                }
            }
            let dlam = chol.solve(&DVector::from_vec(t));
            let dl: Vec<f64> = dlam.iter().copied().collect();
            for (((row, &qi), &ri), di) in xr.chunks_exact(p).zip(q.iter()).zip(rhs).zip(dx.iter_mut()) {
                let xd: f64 = row.iter().zip(&dl).map(|(a, b)| a * b).sum();
                *di = qi * (xd - ri);
            }
            dlam
        };

        // Affine scaling direction.
        let mut dlam = solve_dir(&r, &mut dx);
        for i in 0..n {
            ds[i] = -dx[i];
            dz[i] = -z[i] - z[i] * ix[i] * dx[i];
            dw[i] = -w[i] + w[i] * is[i] * dx[i];
        }
        let mut ap = step_length(&x, &dx, &s, &ds);
        let mut ad = step_length(&z, &dz, &w, &dw);

        if ap.min(ad) < 1.0 {
            // Mehrotra corrector with adaptive centering.
            let mu_cur = gap;
            let g: f64 = (0..n)
                .map(|i| {
                    (x[i] + ap * dx[i]) * (z[i] + ad * dz[i])
                        + (s[i] + ap * ds[i]) * (w[i] + ad * dw[i])
                })
                .sum();
            let mu = mu_cur * (g / mu_cur).powi(3) / (2.0 * n as f64);
            dxa.copy_from_slice(&dx);
            dza.copy_from_slice(&dz);
            dsa.copy_from_slice(&ds);
            dwa.copy_from_slice(&dw);
            for i in 0..n {
                let xi = mu * (ix[i] - is[i]) - dxa[i] * dza[i] * ix[i] + dsa[i] * dwa[i] * is[i];
                rhs[i] = r[i] - xi;
            }
            dlam = solve_dir(&rhs, &mut dx);
            for i in 0..n {
                ds[i] = -dx[i];
                dz[i] = ((mu - dxa[i] * dza[i]) - z[i] * dx[i]) * ix[i] - z[i];
                dw[i] = ((mu - dsa[i] * dwa[i]) + w[i] * dx[i]) * is[i] - w[i];
            }
            ap = step_length(&x, &dx, &s, &ds);
            ad = step_length(&z, &dz, &w, &dw);
        }

        for i in 0..n {
            x[i] += ap * dx[i];
            s[i] += ap * ds[i];
            z[i] += ad * dz[i];
            w[i] += ad * dw[i];
        }
        lam += dlam * ad;
        gap = gap_of(&x, &z, &s, &w);
        if !gap.is_finite() {
            return Err(Error::Convergence { iterations: it, gap });
        }
    }

    let coef = -lam;
    let loss = check_loss(design, response, &coef, v);
    let mut sol = Solution { coef, loss, iterations: it, gap };
    if opts.polish {
        if let Some((c, l)) = polish(design, response, v, &sol.coef) {
            if l <= sol.loss + 1e-12 * (1.0 + sol.loss.abs()) {
                sol.coef = c;
                sol.loss = l;
            }
        }
    }
    Ok(sol)
}

/// Best exact interpolation through `p` of `p + 2` observations with small
/// absolute residuals.
fn polish(
    design: &DMatrix<f64>,
    response: &[f64],
    v: f64,
    coef: &DVector<f64>,
) -> Option<(DVector<f64>, f64)> {
    let (n, p) = design.shape();
    let fitted = design * coef;
    let resid: Vec<f64> = (0..n).map(|i| (response[i] - fitted[i]).abs()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| resid[a].total_cmp(&resid[b]).then(a.cmp(&b)));
    // Walk rows by residual size, keeping every row that raises the rank
    // and at most two that do not, so the pool always spans the design.
    let mut pool = Vec::with_capacity(p + 2);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut extras = 0;
    for &i in &order {
        if basis.len() == p && extras == 2 {
            break;
        }
        let row: Vec<f64> = design.row(i).iter().copied().collect();
        let norm = row.iter().map(|a| a * a).sum::<f64>().sqrt();
        let mut r = row;
        for b in &basis {
            let d: f64 = r.iter().zip(b).map(|(a, c)| a * c).sum();
            r.iter_mut().zip(b).for_each(|(a, c)| *a -= d * c);
        }
        let rn = r.iter().map(|a| a * a).sum::<f64>().sqrt();
        if basis.len() < p && rn > 1e-9 * norm.max(f64::MIN_POSITIVE) {
            basis.push(r.into_iter().map(|a| a / rn).collect());
            pool.push(i);
        } else if extras < 2 {
            extras += 1;
            pool.push(i);
        }
    }
    let k = pool.len();
    if basis.len() < p {
        return None;
    }
    let mut best: Option<(DVector<f64>, f64, Vec<usize>)> = None;
    // enumerate p-subsets of the pool by their excluded positions
    let excluded: Vec<(usize, usize)> = match k - p {
        0 => vec![(usize::MAX, usize::MAX)],
        1 => (0..k).map(|a| (a, usize::MAX)).collect(),
        _ => (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))).collect(),
    };
    for (ea, eb) in excluded {
        let rows: Vec<usize> = (0..k).filter(|&t| t != ea && t != eb).map(|t| pool[t]).collect();
        let a = DMatrix::from_fn(p, p, |r, c| design[(rows[r], c)]);
        let b = DVector::from_fn(p, |r, _| response[rows[r]]);
        let Some(c) = a.lu().solve(&b) else { continue };
        if c.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let l = check_loss(design, response, &c, v);
        let mut key = rows;
        key.sort_unstable();
        // Losses equal up to rounding are ties; resolving them by row index
        // keeps the choice unchanged under affine maps of the data.
        let better = match &best {
            None => true,
            Some((_, bl, bk)) => {
                let tol = 1e-12 * (1.0 + bl.abs());
                l < bl - tol || (l <= bl + tol && key < *bk)
            }
        };
        if better {
            best = Some((c, l, key));
        }
    }
    best.map(|(c, l, _)| (c, l))
}
