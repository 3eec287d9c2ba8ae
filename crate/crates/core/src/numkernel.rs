//! Dense complex-matrix primitives shared by the rest of the crate.
//!
//! Matrices are column-major [`faer::Mat`] values, so [`vec`] is a plain
//! column-by-column copy. Least-squares solves go through a thin SVD and
//! never form normal equations.

use faer::{c64, Col, Mat, MatRef};

use crate::error::{Error, Result};

pub type CMatrix = Mat<c64>;
pub type CVector = Col<c64>;

/// Default relative singular-value threshold used to decide numerical rank.
pub const RANK_REL_TOL: f64 = 1e-10;

pub const ZERO: c64 = c64 { re: 0.0, im: 0.0 };
pub const ONE: c64 = c64 { re: 1.0, im: 0.0 };

/// `e^{j theta}`.
#[inline]
pub fn cis(theta: f64) -> c64 {
    c64::new(theta.cos(), theta.sin())
}

/// Column-stacking vectorization.
pub fn vec(a: MatRef<'_, c64>) -> CVector {
    let rows = a.nrows();
    Col::from_fn(rows * a.ncols(), |i| a[(i % rows, i / rows)])
}

/// Inverse of [`vec`].
pub fn unvec(v: &CVector, rows: usize, cols: usize) -> Result<CMatrix> {
    if rows * cols != v.nrows() {
        return Err(Error::invalid(format!(
            "cannot reshape vector of length {} into {rows}x{cols}",
            v.nrows()
        )));
    }
    Ok(Mat::from_fn(rows, cols, |i, j| v[j * rows + i]))
}

/// Standard Kronecker product `A ⊗ B`.
pub fn kron(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> CMatrix {
    let (rb, cb) = (b.nrows(), b.ncols());
    Mat::from_fn(a.nrows() * rb, a.ncols() * cb, |i, j| {
        a[(i / rb, j / cb)] * b[(i % rb, j % cb)]
    })
}

/// Block-diagonal matrix with the given blocks in order.
pub fn blkdiag(blocks: &[CMatrix]) -> Result<CMatrix> {
    if blocks.is_empty() {
        return Err(Error::invalid("blkdiag needs at least one block"));
    }
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        for j in 0..b.ncols() {
            for i in 0..b.nrows() {
                out[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
        r0 += b.nrows();
        c0 += b.ncols();
    }
    Ok(out)
}

/// Square diagonal matrix from real entries.
pub fn real_diag(d: &[f64]) -> CMatrix {
    Mat::from_fn(d.len(), d.len(), |i, j| {
        if i == j {
            c64::new(d[i], 0.0)
        } else {
            ZERO
        }
    })
}

pub fn trace(a: MatRef<'_, c64>) -> c64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}

/// Squared Frobenius norm.
pub fn frob_sq(a: MatRef<'_, c64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            acc += a[(i, j)].norm_sqr();
        }
    }
    acc
}

pub fn col_norm_sq(v: &CVector) -> f64 {
    (0..v.nrows()).map(|i| v[i].norm_sqr()).sum()
}

/// Relative Frobenius distance `‖a − b‖ / ‖b‖` (absolute when `b = 0`).
pub fn rel_err(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> f64 {
    let mut num = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            num += (a[(i, j)] - b[(i, j)]).norm_sqr();
        }
    }
    let den = frob_sq(b);
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Singular values in non-increasing order.
pub fn singular_values(a: MatRef<'_, c64>) -> Result<Vec<f64>> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(Vec::new());
    }
    let mut s = a
        .singular_values()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
    s.sort_by(|x, y| y.total_cmp(x));
    Ok(s)
}

fn rank_from_sv(sv: &[f64], rel_tol: f64) -> usize {
    match sv.first() {
        Some(&smax) if smax > 0.0 => sv.iter().filter(|&&s| s > rel_tol * smax).count(),
        _ => 0,
    }
}

/// Number of singular values above `rel_tol × σ_max`.
pub fn numerical_rank(a: MatRef<'_, c64>, rel_tol: f64) -> Result<usize> {
    if !(rel_tol > 0.0) {
        return Err(Error::invalid(format!("rank tolerance must be positive, got {rel_tol}")));
    }
    Ok(rank_from_sv(&singular_values(a)?, rel_tol))
}

/// Minimum-norm least-squares solution of `A X = B` for every column of `B`,
/// together with the numerical rank of `A` at [`RANK_REL_TOL`].
pub fn lstsq_minnorm_multi(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> Result<(CMatrix, usize)> {
    if a.nrows() != b.nrows() {
        return Err(Error::invalid(format!(
            "lstsq: operator has {} rows but right-hand side has {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let n = a.ncols();
    if a.nrows() == 0 || n == 0 {
        return Ok((Mat::zeros(n, b.ncols()), 0));
    }
    let svd = a
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
    let s = svd.S().column_vector();
    let sv: Vec<f64> = (0..s.nrows()).map(|i| s[i].re).collect();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let cutoff = RANK_REL_TOL * smax;

    // x = V Σ⁺ Uᴴ b, restricted to the retained singular triplets.
    let mut coeffs = svd.U().adjoint() * b;
    let mut rank = 0;
    for (i, &si) in sv.iter().enumerate() {
        let keep = smax > 0.0 && si > cutoff;
        if keep {
            rank += 1;
        }
        let inv = if keep { 1.0 / si } else { 0.0 };
        for j in 0..coeffs.ncols() {
            coeffs[(i, j)] *= inv;
        }
    }
    Ok((svd.V() * &coeffs, rank))
}

/// Minimum-norm least-squares solution of `A x = y` and the numerical rank of `A`.
pub fn lstsq_minnorm(a: MatRef<'_, c64>, y: &CVector) -> Result<(CVector, usize)> {
    let (x, rank) = lstsq_minnorm_multi(a, y.as_mat())?;
    Ok((x.col(0).to_owned(), rank))
}
