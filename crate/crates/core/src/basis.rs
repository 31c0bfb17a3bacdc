//! Known basis systems on the daily grid: penalized cubic B-splines for the
//! regression coefficient, orthogonalized low-rank thin-plate splines for the
//! wastewater loading curves and a Demmler–Reinsch basis for the spatial
//! random-effect loading curves.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_eigen_sorted;

/// Relative threshold below which a penalty eigenvalue is treated as zero.
pub const PENALTY_ZERO_TOL: f64 = 1e-10;

/// A regular daily grid. Observation days are `first_day .. first_day + len`;
/// `extension` extra days precede them on the X side so that lagged
/// evaluations stay in-grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub first_day: i64,
    pub len: usize,
    pub extension: usize,
}

impl Grid {
    pub fn new(len: usize, extension: usize) -> Self {
        Self { first_day: 0, len, extension }
    }

    pub fn days(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.len as i64).map(move |t| self.first_day + t)
    }

    pub fn extended_len(&self) -> usize {
        self.len + self.extension
    }

    /// The grid covering the extension and the observation days, with no
    /// further extension of its own.
    pub fn extended(&self) -> Grid {
        Grid {
            first_day: self.first_day - self.extension as i64,
            len: self.extended_len(),
            extension: 0,
        }
    }

    /// Row of the extended grid holding observation day index `t` shifted
    /// back by `lag` days.
    pub fn extended_index(&self, t: usize, lag: usize) -> Result<usize> {
        (self.extension + t).checked_sub(lag).ok_or(Error::Bounds {
            index: t,
            len: self.extended_len(),
        })
    }

    fn points(&self) -> Vec<f64> {
        self.days().map(|d| d as f64).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    BsplinePenalized,
    LrtpsOrthogonalized,
    DemmlerReinsch,
}

/// A basis evaluated on a grid together with its roughness penalty.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BasisSystem {
    pub kind: BasisKind,
    pub eval: DMatrix<f64>,
    pub penalty: DMatrix<f64>,
}

impl BasisSystem {
    pub fn rank(&self) -> usize {
        self.eval.ncols()
    }

    pub fn grid_len(&self) -> usize {
        self.eval.nrows()
    }

    /// Rows of `eval` at the requested grid indices (duplicates allowed).
    pub fn evaluate_subset(&self, indices: &[usize]) -> Result<DMatrix<f64>> {
        evaluate_subset(self, indices)
    }
}

pub fn evaluate_subset(basis: &BasisSystem, indices: &[usize]) -> Result<DMatrix<f64>> {
    let len = basis.eval.nrows();
    if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
        return Err(Error::Bounds { index: bad, len });
    }
    Ok(basis.eval.select_rows(indices))
}

/// Clamped knot vector for a degree-`degree` spline with the given interior
/// knots on `[lo, hi]`.
fn clamped_knots(lo: f64, hi: f64, interior: &[f64], degree: usize) -> Vec<f64> {
    let mut knots = vec![lo; degree + 1];
    knots.extend_from_slice(interior);
    knots.extend(std::iter::repeat_n(hi, degree + 1));
    knots
}

/// B-spline design matrix by the Cox–de Boor recursion. The right end of the
/// domain is assigned to the last non-degenerate span.
pub(crate) fn bspline_design(points: &[f64], knots: &[f64], degree: usize) -> DMatrix<f64> {
    let nbasis = knots.len() - degree - 1;
    let lo = knots[degree];
    let hi = knots[nbasis];
    let mut out = DMatrix::zeros(points.len(), nbasis);
    for (r, &x) in points.iter().enumerate() {
        let x = x.clamp(lo, hi);
        // span index s with knots[s] <= x < knots[s+1]
        let mut span = degree;
        while span + 1 < nbasis && knots[span + 1] <= x {
            span += 1;
        }
        let mut n = vec![0.0; degree + 1];
        n[0] = 1.0;
        let mut left = vec![0.0; degree + 1];
        let mut right = vec![0.0; degree + 1];
        for j in 1..=degree {
            left[j] = x - knots[span + 1 - j];
            right[j] = knots[span + j] - x;
            let mut saved = 0.0;
            for k in 0..j {
                let denom = right[k + 1] + left[j - k];
                let temp = if denom == 0.0 { 0.0 } else { n[k] / denom };
                n[k] = saved + right[k + 1] * temp;
                saved = left[j - k] * temp;
            }
            n[j] = saved;
        }
        for (j, &v) in n.iter().enumerate() {
            out[(r, span - degree + j)] = v;
        }
    }
    out
}

/// Second-order difference operator, `(p-2) x p`.
pub(crate) fn second_difference(p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p.saturating_sub(2), p, |r, c| match c as isize - r as isize {
        0 | 2 => 1.0,
        1 => -2.0,
        _ => 0.0,
    })
}

/// Cubic B-splines with clamped boundary knots and equally spaced interior
/// knots; penalty `D2' D2` on the coefficients.
pub fn build_bspline(grid: &Grid, num_basis: usize) -> Result<BasisSystem> {
    if num_basis < 4 {
        return Err(Error::Dimension(format!(
            "cubic B-spline basis needs at least 4 functions, got {num_basis}"
        )));
    }
    if grid.len < num_basis || grid.len < 2 {
        return Err(Error::Dimension(format!(
            "grid of length {} is too short for {num_basis} B-splines",
            grid.len
        )));
    }
    let pts = grid.points();
    let (lo, hi) = (pts[0], pts[pts.len() - 1]);
    let n_interior = num_basis - 4;
    let interior: Vec<f64> = (1..=n_interior)
        .map(|j| lo + (hi - lo) * j as f64 / (n_interior + 1) as f64)
        .collect();
    let knots = clamped_knots(lo, hi, &interior, 3);
    let eval = bspline_design(&pts, &knots, 3);
    let d2 = second_difference(num_basis);
    Ok(BasisSystem {
        kind: BasisKind::BsplinePenalized,
        eval,
        penalty: d2.transpose() * d2,
    })
}

/// Raw pieces of the thin-plate construction before orthogonalization.
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) struct LrtpsRaw {
    /// `[1, u, Z]` evaluated on the grid.
    pub raw_eval: DMatrix<f64>,
    /// `diag(0, 0, 1, ..., 1)`.
    pub raw_penalty: DMatrix<f64>,
    /// Maps final coefficients to raw coefficients: `raw_eval * transform = eval`.
    pub transform: DMatrix<f64>,
    pub eval: DMatrix<f64>,
    pub penalty_diag: DVector<f64>,
}

pub(crate) fn lrtps_parts(grid: &Grid, num_basis: usize) -> Result<LrtpsRaw> {
    if num_basis < 3 {
        return Err(Error::Dimension(format!(
            "LR-TPS basis needs at least 3 functions, got {num_basis}"
        )));
    }
    if num_basis > grid.len {
        return Err(Error::Dimension(format!(
            "{num_basis} LR-TPS functions exceed grid length {}",
            grid.len
        )));
    }
    let pts = grid.points();
    let (lo, hi) = (pts[0], pts[pts.len() - 1]);
    let span = (hi - lo).max(1.0);
    let u: Vec<f64> = pts.iter().map(|&t| (t - lo) / span).collect();
    let n_knots = num_basis - 2;
    // interior quantiles of the (regular) grid
    let knots: Vec<f64> = (1..=n_knots)
        .map(|j| quantile_sorted(&u, j as f64 / (n_knots + 1) as f64))
        .collect();

    let zk = DMatrix::from_fn(u.len(), n_knots, |r, c| (u[r] - knots[c]).abs().powi(3));
    let omega = DMatrix::from_fn(n_knots, n_knots, |r, c| (knots[r] - knots[c]).abs().powi(3));
    // Z = Z_K Omega^{-1/2} with the square root taken through the SVD.
    let svd = omega.svd(true, true);
    let (uo, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let inv_sqrt = DVector::from_iterator(
        n_knots,
        svd.singular_values.iter().map(|&s| 1.0 / s.max(1e-300).sqrt()),
    );
    let z = &zk * &uo * DMatrix::from_diagonal(&inv_sqrt) * &vt;

    let mut raw_eval = DMatrix::zeros(u.len(), num_basis);
    for r in 0..u.len() {
        raw_eval[(r, 0)] = 1.0;
        raw_eval[(r, 1)] = u[r];
    }
    raw_eval.view_mut((0, 2), (u.len(), n_knots)).copy_from(&z);
    let mut raw_penalty = DMatrix::zeros(num_basis, num_basis);
    for j in 2..num_basis {
        raw_penalty[(j, j)] = 1.0;
    }

    // Orthonormalize: raw_eval = Q R, coefficients a = R c.
    let qr = raw_eval.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Dimension("LR-TPS design is rank-deficient".into()))?;
    let pen_a = r_inv.transpose() * &raw_penalty * &r_inv;
    let (vals, vecs) = sym_eigen_sorted(&pen_a);
    let max = vals.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    let penalty_diag = vals.map(|v| if v <= PENALTY_ZERO_TOL * max { 0.0 } else { v });
    let eval = &q * &vecs;
    let transform = &r_inv * &vecs;
    Ok(LrtpsRaw { raw_eval, raw_penalty, transform, eval, penalty_diag })
}

/// Low-rank thin-plate splines `[1, t, |t - k_j|^3]` with knots at grid
/// quantiles, transformed so that the evaluation matrix has orthonormal
/// columns and the penalty is diagonal (ascending, nonnegative).
pub fn build_lrtps(grid: &Grid, num_basis: usize) -> Result<BasisSystem> {
    let parts = lrtps_parts(grid, num_basis)?;
    Ok(BasisSystem {
        kind: BasisKind::LrtpsOrthogonalized,
        eval: parts.eval,
        penalty: DMatrix::from_diagonal(&parts.penalty_diag),
    })
}

/// Pieces of the Demmler–Reinsch construction kept for testing.
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) struct DemmlerReinschParts {
    pub spline_eval: DMatrix<f64>,
    pub spline_penalty: DMatrix<f64>,
    /// Roughness of grid functions: `f' K f = min { c' Omega c : B c = f }`.
    pub function_penalty: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

pub(crate) fn demmler_reinsch_parts(grid: &Grid) -> Result<DemmlerReinschParts> {
    if grid.len < 4 {
        return Err(Error::Dimension(format!(
            "Demmler-Reinsch basis needs a grid of at least 4 days, got {}",
            grid.len
        )));
    }
    let pts = grid.points();
    let (lo, hi) = (pts[0], pts[pts.len() - 1]);
    let interior = &pts[1..pts.len() - 1];
    let knots = clamped_knots(lo, hi, interior, 3);
    let b = bspline_design(&pts, &knots, 3);
    let nb = b.ncols();
    let d2 = second_difference(nb);
    let omega = d2.transpose() * d2;

    // B is wide (len x len+2); split coefficient space into row space and
    // the nullspace of B.
    let btb = b.transpose() * &b;
    let (vals, vecs) = sym_eigen_sorted(&btb);
    let max = vals[nb - 1];
    let null_dim = vals.iter().filter(|&&v| v <= 1e-9 * max).count();
    let nspace = vecs.columns(0, null_dim).into_owned();
    let range = vecs.columns(null_dim, nb - null_dim).into_owned();
    let inv_vals = DVector::from_iterator(nb - null_dim, vals.iter().skip(null_dim).map(|v| 1.0 / v));
    let b_pinv = &range * DMatrix::from_diagonal(&inv_vals) * range.transpose() * b.transpose();

    let reduced = if null_dim > 0 {
        let on = &omega * &nspace;
        let ntn = nspace.transpose() * &on;
        let ntn_inv = ntn
            .try_inverse()
            .ok_or_else(|| Error::Dimension("degenerate spline nullspace".into()))?;
        &omega - &on * ntn_inv * on.transpose()
    } else {
        omega.clone()
    };
    let k = crate::linalg::symmetrize(&(b_pinv.transpose() * reduced * &b_pinv));
    let (evals, evecs) = sym_eigen_sorted(&k);
    let emax = evals.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    let evals = evals.map(|v| if v <= PENALTY_ZERO_TOL * emax { 0.0 } else { v });
    let zero_dim = evals.iter().take_while(|&&v| v == 0.0).count();
    let evecs = constant_first(evecs, zero_dim);
    Ok(DemmlerReinschParts {
        spline_eval: b,
        spline_penalty: omega,
        function_penalty: k,
        eigenvalues: evals,
        eigenvectors: evecs,
    })
}

/// Rotates the leading `zero_dim` eigenvectors (a degenerate eigenspace) so
/// that the first is the normalized constant function whenever the constant
/// lies in that eigenspace.
fn constant_first(mut vecs: DMatrix<f64>, zero_dim: usize) -> DMatrix<f64> {
    if zero_dim == 0 {
        return vecs;
    }
    let n = vecs.nrows();
    let one = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let block = vecs.columns(0, zero_dim).into_owned();
    let coef = block.transpose() * &one;
    let norm = coef.norm();
    if (norm - 1.0).abs() > 1e-6 {
        return vecs;
    }
    // orthonormal basis of R^zero_dim starting with coef
    let mut dirs: Vec<DVector<f64>> = vec![coef / norm];
    for j in 0..zero_dim {
        let mut e = DVector::zeros(zero_dim);
        e[j] = 1.0;
        for d in &dirs {
            let p = d.dot(&e);
            e -= d * p;
        }
        let en = e.norm();
        if en > 1e-6 && dirs.len() < zero_dim {
            dirs.push(e / en);
        }
    }
    for (j, d) in dirs.iter().enumerate() {
        vecs.set_column(j, &(&block * d));
    }
    vecs
}

/// Demmler–Reinsch basis: simultaneous diagonalization of a cubic B-spline
/// basis with a knot at every grid point and its second-difference penalty,
/// keeping the `num_basis` smoothest directions.
pub fn build_demmler_reinsch(grid: &Grid, num_basis: usize) -> Result<BasisSystem> {
    if num_basis == 0 || num_basis > grid.len {
        return Err(Error::Dimension(format!(
            "cannot retain {num_basis} Demmler-Reinsch directions on a grid of length {}",
            grid.len
        )));
    }
    let parts = demmler_reinsch_parts(grid)?;
    if num_basis > parts.eigenvalues.len() {
        return Err(Error::Dimension(format!(
            "only {} Demmler-Reinsch directions available",
            parts.eigenvalues.len()
        )));
    }
    let mut eval = parts.eigenvectors.columns(0, num_basis).into_owned();
    // sign convention: first nonzero entry of each column positive
    for mut col in eval.column_iter_mut() {
        if let Some(&v) = col.iter().find(|v| v.abs() > 1e-12) {
            if v < 0.0 {
                col.neg_mut();
            }
        }
    }
    let diag = parts.eigenvalues.rows(0, num_basis).into_owned();
    Ok(BasisSystem {
        kind: BasisKind::DemmlerReinsch,
        eval,
        penalty: DMatrix::from_diagonal(&diag),
    })
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
