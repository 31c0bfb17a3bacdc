//! Dense linear-algebra helpers shared by the basis constructors and the
//! Gibbs steps. Every Gaussian draw goes through the canonical (precision,
//! linear term) form and a Cholesky factor of the precision.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Diagonal inflation used for the single Cholesky retry.
pub const CHOLESKY_RETRY_INFLATION: f64 = 1e-10;

/// Symmetric eigen-decomposition with eigenvalues sorted ascending and the
/// eigenvector columns permuted to match.
pub fn sym_eigen_sorted(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Orthogonal projector onto the numerical nullspace of a PSD penalty, and the
/// penalty rank. Eigenvalues below `rel_tol * max` count as zero.
pub fn nullspace_projector(penalty: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, usize) {
    let n = penalty.nrows();
    let (values, vectors) = sym_eigen_sorted(penalty);
    let max = values.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    let cutoff = rel_tol * max.max(f64::MIN_POSITIVE);
    let mut proj = DMatrix::zeros(n, n);
    let mut null_dim = 0;
    for (j, &v) in values.iter().enumerate() {
        if v <= cutoff {
            let col = vectors.column(j);
            proj += &col * col.transpose();
            null_dim += 1;
        }
    }
    (proj, n - null_dim)
}

/// Cholesky factorization; on failure retries once with the diagonal inflated
/// by `CHOLESKY_RETRY_INFLATION` times the mean absolute diagonal.
pub fn cholesky_with_retry(q: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what} precision has non-finite entries")));
    }
    if let Some(c) = Cholesky::new(q.clone()) {
        return Ok(c);
    }
    let n = q.nrows();
    let scale = (q.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n.max(1) as f64).max(1.0);
    let mut inflated = q.clone();
    for i in 0..n {
        inflated[(i, i)] += CHOLESKY_RETRY_INFLATION * scale;
    }
    Cholesky::new(inflated).ok_or_else(|| {
        Error::NotPositiveDefinite(format!(
            "{what} precision ({n}x{n}, min diagonal {:.3e})",
            q.diagonal().min()
        ))
    })
}

pub fn standard_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// A Gaussian in canonical form: density proportional to
/// `exp(-x'Qx/2 + l'x)`, i.e. `N(Q^{-1} l, Q^{-1})`.
#[derive(Clone, Debug)]
pub struct CanonicalGaussian {
    pub precision: DMatrix<f64>,
    pub linear: DVector<f64>,
}

impl CanonicalGaussian {
    pub fn new(precision: DMatrix<f64>, linear: DVector<f64>) -> Self {
        Self { precision, linear }
    }

    /// Unnormalized log density.
    pub fn log_kernel(&self, x: &DVector<f64>) -> f64 {
        -0.5 * x.dot(&(&self.precision * x)) + self.linear.dot(x)
    }

    pub fn mean(&self, what: &str) -> Result<DVector<f64>> {
        let chol = cholesky_with_retry(&self.precision, what)?;
        Ok(chol.solve(&self.linear))
    }

    /// One draw `Q^{-1} l + L^{-T} z` with `Q = L L'`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, what: &str) -> Result<DVector<f64>> {
        let chol = cholesky_with_retry(&self.precision, what)?;
        Ok(sample_with_factor(&chol, &self.linear, rng))
    }

    /// One draw conditional on `C x = 0` (rows of `constraint` are the
    /// constraint vectors), by conditioning an unconstrained draw by kriging:
    /// `x = z - Q^{-1} C' (C Q^{-1} C')^{-1} C z`.
    pub fn sample_constrained<R: Rng + ?Sized>(
        &self,
        constraint: &DMatrix<f64>,
        rng: &mut R,
        what: &str,
    ) -> Result<DVector<f64>> {
        let chol = cholesky_with_retry(&self.precision, what)?;
        let z = sample_with_factor(&chol, &self.linear, rng);
        if constraint.nrows() == 0 {
            return Ok(z);
        }
        krige_onto_constraint(&chol, constraint, z, what)
    }
}

fn sample_with_factor<R: Rng + ?Sized>(
    chol: &Cholesky<f64, Dyn>,
    linear: &DVector<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let mean = chol.solve(linear);
    let z = standard_normal_vec(linear.len(), rng);
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .expect("Cholesky factor has a positive diagonal");
    mean + noise
}

/// Projects `z` onto `{x : C x = 0}` along the metric of `Q^{-1}`.
pub fn krige_onto_constraint(
    chol: &Cholesky<f64, Dyn>,
    constraint: &DMatrix<f64>,
    z: DVector<f64>,
    what: &str,
) -> Result<DVector<f64>> {
    // Q^{-1} C'
    let qinv_ct = chol.solve(&constraint.transpose());
    let gram = constraint * &qinv_ct;
    let gram_chol = Cholesky::new(symmetrize(&gram)).ok_or_else(|| {
        Error::NotPositiveDefinite(format!("{what} constraint matrix is rank-deficient"))
    })?;
    let cz = constraint * &z;
    let correction = &qinv_ct * gram_chol.solve(&cz);
    Ok(z - correction)
}
