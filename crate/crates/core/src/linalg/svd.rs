use super::matrix::{dot, matmul_tn, Matrix};
use crate::error::{Error, Result};

const JACOBI_TOL: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 100;
/// Singular values at or below this fraction of the largest one get their
/// left singular vectors from basis completion instead of `E v / sigma`.
const TINY_SIGMA: f64 = 1e-12;
const ORTHONORMAL_TOL: f64 = 1e-6;

/// Thin singular value decomposition `E = U diag(sigma) V^T`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    /// `rows x k`, orthonormal columns.
    pub u: Matrix,
    /// Length `k = min(rows, cols)`, non-increasing, non-negative.
    pub sigma: Vec<f64>,
    /// `cols x k`, orthonormal columns.
    pub v: Matrix,
}

impl SvdResult {
    /// `U diag(sigma) V^T`.
    pub fn reconstruct(&self) -> Matrix {
        let (rows, k) = self.u.shape();
        let cols = self.v.rows();
        Matrix::from_fn(rows, cols, |r, c| {
            let mut acc = 0.0;
            for j in 0..k {
                acc += self.u.get(r, j) * self.sigma[j] * self.v.get(c, j);
            }
            acc
        })
    }

    /// Number of singular values above `rel_tol * sigma_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let max = self.sigma.first().copied().unwrap_or(0.0);
        if max == 0.0 {
            return 0;
        }
        self.sigma.iter().filter(|&&s| s > rel_tol * max).count()
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns the (unsorted) eigenvalues and the matrix whose columns are the
/// matching eigenvectors. Stops once the off-diagonal Frobenius norm falls
/// below `1e-14` times the Frobenius norm of the input.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows();
    if n != a.cols() {
        return Err(Error::shape("symmetric_eigen", "matrix is not square"));
    }
    let mut a = a.clone();
    let mut v = Matrix::identity(n);
    let scale = super::frobenius_norm(&a);
    let threshold = JACOBI_TOL * scale;

    let off_norm = |a: &Matrix| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                s += 2.0 * a.get(p, q) * a.get(p, q);
            }
        }
        s.sqrt()
    };

    let mut converged = scale == 0.0;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if converged || off_norm(&a) <= threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let tau = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // A <- A J
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                // A <- J^T A
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    if !converged && off_norm(&a) > threshold {
        return Err(Error::NotConverged {
            sweeps: JACOBI_MAX_SWEEPS,
            residual: off_norm(&a),
        });
    }
    let eigenvalues = (0..n).map(|i| a.get(i, i)).collect();
    Ok((eigenvalues, v))
}

/// Thin SVD through the Gram matrix `E^T E` and Jacobi eigen-decomposition.
///
/// Intended for tall matrices with at most a few dozen columns. Wide inputs
/// are handled by decomposing the transpose.
pub fn svd(e: &Matrix) -> Result<SvdResult> {
    if e.rows() == 0 || e.cols() == 0 {
        return Err(Error::shape("svd", "matrix has no rows or no columns"));
    }
    if !e.all_finite() {
        return Err(Error::Numerical(
            "svd input contains non-finite entries".into(),
        ));
    }
    // Power-of-two rescaling is exact and keeps the Gram matrix from
    // overflowing or underflowing for very large or very small entries.
    let max_abs = e.max_abs();
    let scale = if max_abs > 0.0 {
        2f64.powi((max_abs.log2().floor() as i32).clamp(-1000, 1000))
    } else {
        1.0
    };
    let scaled;
    let e = if scale == 1.0 {
        e
    } else {
        scaled = e.scaled(1.0 / scale);
        &scaled
    };
    let mut out = if e.rows() < e.cols() {
        let t = svd_tall(&e.transpose())?;
        SvdResult {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        }
    } else {
        svd_tall(e)?
    };
    for s in &mut out.sigma {
        *s *= scale;
    }
    Ok(out)
}

fn svd_tall(e: &Matrix) -> Result<SvdResult> {
    let (rows, k) = e.shape();
    let mut gram = Matrix::zeros(k, k);
    for p in 0..k {
        for q in p..k {
            let mut acc = 0.0;
            for r in 0..rows {
                acc += e.get(r, p) * e.get(r, q);
            }
            gram.set(p, q, acc);
            gram.set(q, p, acc);
        }
    }
    let (_, eigvecs) = symmetric_eigen(&gram)?;

    // sigma_j = |E v_j|, which equals sqrt(lambda_j) but keeps full relative
    // accuracy for singular values near zero.
    let projected = crate::linalg::matmul(e, &eigvecs)?;
    let norms: Vec<f64> = (0..k)
        .map(|j| {
            (0..rows)
                .map(|r| projected.get(r, j).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));

    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let sigma_max = sigma[0];
    let mut v = Matrix::zeros(k, k);
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..k {
            v.set(r, dst, eigvecs.get(r, src));
        }
    }

    let mut u_cols: Vec<Option<Vec<f64>>> = vec![None; k];
    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        if sigma_max == 0.0 || s <= TINY_SIGMA * sigma_max {
            continue;
        }
        let mut col: Vec<f64> = (0..rows).map(|r| projected.get(r, src) / s).collect();
        if orthonormalize_against(&mut col, &accepted) > 1e-3 {
            accepted.push(col.clone());
            u_cols[dst] = Some(col);
        }
    }
    // Complete the basis with canonical vectors, in index order.
    let mut candidate = 0;
    for slot in u_cols.iter_mut().filter(|c| c.is_none()) {
        loop {
            if candidate >= rows {
                return Err(Error::Numerical(
                    "could not complete orthonormal basis for U".into(),
                ));
            }
            let mut col = vec![0.0; rows];
            col[candidate] = 1.0;
            candidate += 1;
            if orthonormalize_against(&mut col, &accepted) > 1e-6 {
                accepted.push(col.clone());
                *slot = Some(col);
                break;
            }
        }
    }
    let mut u = Matrix::zeros(rows, k);
    for (j, col) in u_cols.into_iter().enumerate() {
        let col = col.expect("every column filled");
        for r in 0..rows {
            u.set(r, j, col[r]);
        }
    }
    Ok(SvdResult { u, sigma, v })
}

/// Two passes of modified Gram-Schmidt followed by normalization. Returns the
/// norm before normalization; the vector is left untouched if that norm is 0.
fn orthonormalize_against(col: &mut [f64], basis: &[Vec<f64>]) -> f64 {
    for _ in 0..2 {
        for b in basis {
            let proj = dot(col, b);
            for (c, bi) in col.iter_mut().zip(b) {
                *c -= proj * bi;
            }
        }
    }
    let norm = dot(col, col).sqrt();
    if norm > 0.0 {
        col.iter_mut().for_each(|c| *c /= norm);
    }
    norm
}

/// Largest entry of `|Q^T Q - I|`.
pub fn orthonormality_error(q: &Matrix) -> f64 {
    let gram = matmul_tn(q, q).expect("square gram");
    let mut worst = 0.0_f64;
    for i in 0..gram.rows() {
        for j in 0..gram.cols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram.get(i, j) - target).abs());
        }
    }
    worst
}

/// Cosines of the principal angles between the column spaces of two
/// matrices with orthonormal columns: the singular values of `u1^T u2`.
pub fn principal_angle_cosines(u1: &Matrix, u2: &Matrix) -> Result<Vec<f64>> {
    if u1.rows() != u2.rows() || u1.cols() != u2.cols() {
        return Err(Error::shape(
            "principal_angle_cosines",
            format!("{}x{} vs {}x{}", u1.rows(), u1.cols(), u2.rows(), u2.cols()),
        ));
    }
    for (name, u) in [("u1", u1), ("u2", u2)] {
        let err = orthonormality_error(u);
        if err > ORTHONORMAL_TOL {
            return Err(Error::Contract(format!(
                "{name} columns are not orthonormal (max |U^T U - I| = {err:e})"
            )));
        }
    }
    let cross = matmul_tn(u1, u2)?;
    let cosines = svd(&cross)?.sigma;
    if let Some(bad) = cosines.iter().find(|&&c| c > 1.0 + 1e-9) {
        return Err(Error::Contract(format!("principal cosine {bad} exceeds 1")));
    }
    Ok(cosines.into_iter().map(|c| c.clamp(0.0, 1.0)).collect())
}
