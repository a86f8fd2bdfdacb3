//! Dense linear-algebra helpers shared by the projection, objective and
//! gluing code. Everything here works on `nalgebra::DMatrix<f64>` and stays
//! `no_std` (nalgebra's own `exp` needs std, so the matrix exponential lives
//! here).

use nalgebra::{DMatrix, SymmetricEigen};

pub type Mat = DMatrix<f64>;

/// Frobenius norm: square root of the sum of squared entries.
pub fn frobenius_norm(m: &Mat) -> f64 {
    libm::sqrt(m.iter().map(|x| x * x).sum::<f64>())
}

pub fn frobenius_sq(m: &Mat) -> f64 {
    m.iter().map(|x| x * x).sum()
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| libm::fabs(x - y))
        .fold(0.0, f64::max)
}

fn one_norm(m: &Mat) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|x| libm::fabs(*x)).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Rows `rows` and columns `cols` of `m`, in the given order.
pub fn submatrix(m: &Mat, rows: &[usize], cols: &[usize]) -> Mat {
    Mat::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

/// Adds `block` into `target` at the given row/column positions.
pub fn scatter_add(target: &mut Mat, rows: &[usize], cols: &[usize], block: &Mat) {
    for (r, &i) in rows.iter().enumerate() {
        for (c, &j) in cols.iter().enumerate() {
            target[(i, j)] += block[(r, c)];
        }
    }
}

/// Matrix exponential by scaling and squaring with a Taylor core.
///
/// The argument is scaled by `2^-s` until its 1-norm is at most 1/2, the
/// series is summed until the next term is below machine precision relative
/// to the partial sum, and the result is squared `s` times.
pub fn expm(m: &Mat) -> Mat {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "expm needs a square matrix");
    let norm = one_norm(m);
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let a = m * scale;
    let mut result = Mat::identity(n, n);
    let mut term = Mat::identity(n, n);
    for k in 1..=60 {
        term = (&term * &a) / (k as f64);
        result += &term;
        if one_norm(&term) <= f64::EPSILON * one_norm(&result) {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Spectral radius estimate by power iteration.
///
/// Uses the two-step growth `sqrt(|A^2 x| / |x|)` so that dominant pairs
/// `±λ` or complex-conjugate pairs do not make the estimate oscillate.
/// Stops after `max_iter` steps or once successive estimates agree to `tol`.
pub fn spectral_radius(m: &Mat, max_iter: usize, tol: f64) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    // Deterministic start vector with no special alignment to coordinate axes.
    let mut x = nalgebra::DVector::from_fn(n, |i, _| 1.0 + 0.618_033_988_749_895 * ((i * 7 + 3) % 11) as f64);
    let nx = x.norm();
    x /= nx;
    let mut prev_growth = 0.0;
    let mut prev_estimate = f64::INFINITY;
    for it in 0..max_iter {
        let y = m * &x;
        let growth = y.norm();
        if growth == 0.0 || !growth.is_finite() {
            return if growth == 0.0 { 0.0 } else { f64::INFINITY };
        }
        x = y / growth;
        if it > 0 {
            let estimate = libm::sqrt(growth * prev_growth);
            if libm::fabs(estimate - prev_estimate) < tol {
                return estimate;
            }
            prev_estimate = estimate;
        }
        prev_growth = growth;
    }
    prev_estimate
}

/// Cholesky factor of the symmetric part of `m` with eigenvalues floored at
/// `eps`. When the smallest eigenvalue already clears the floor the matrix is
/// factored as is.
pub fn psd_cholesky(m: &Mat, eps: f64) -> Mat {
    let n = m.nrows();
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min_eig >= eps {
        if let Some(chol) = sym.clone().cholesky() {
            return chol.l();
        }
    }
    let clamped = eig.eigenvalues.map(|v| if v < eps { eps } else { v });
    let q = &eig.eigenvectors;
    let rebuilt = q * Mat::from_diagonal(&clamped) * q.transpose();
    let rebuilt = (&rebuilt + rebuilt.transpose()) * 0.5;
    match rebuilt.clone().cholesky() {
        Some(chol) => chol.l(),
        None => (rebuilt + Mat::identity(n, n) * eps)
            .cholesky()
            .map(|c| c.l())
            .unwrap_or_else(|| Mat::identity(n, n) * libm::sqrt(eps)),
    }
}
