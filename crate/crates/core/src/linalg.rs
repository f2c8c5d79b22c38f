//! Small dense helpers on top of `faer`. Matrices are column-major, so
//! tall-skinny products are written column by column.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `Uᵀ v` for an n×K matrix.
pub fn t_mul_vec(u: &Mat<f64>, v: &[f64]) -> Vec<f64> {
    (0..u.ncols()).map(|j| dot(u.col_as_slice(j), v)).collect()
}

/// `U w` for an n×K matrix.
pub fn mul_vec(u: &Mat<f64>, w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; u.nrows()];
    for (j, &wj) in w.iter().enumerate() {
        if wj == 0.0 {
            continue;
        }
        for (o, &x) in out.iter_mut().zip(u.col_as_slice(j)) {
            *o += wj * x;
        }
    }
    out
}

pub fn col_vec(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

pub fn symmetrize(m: &Mat<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

/// Symmetric eigendecomposition with eigenvalues in ascending order.
pub fn sym_eigen(m: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::MethodFailure(format!("symmetric eigensolver: {e:?}")))?;
    let s = evd.S().column_vector();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    let vals = order.iter().map(|&i| s[i]).collect();
    let u = evd.U();
    let vecs = Mat::from_fn(n, n, |i, j| u[(i, order[j])]);
    Ok((vals, vecs))
}

pub fn sym_eigenvalues(m: &Mat<f64>) -> Result<Vec<f64>> {
    let mut v = m
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::MethodFailure(format!("symmetric eigensolver: {e:?}")))?;
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Solves `A X = B` with partial pivoting; fails on non-finite output.
pub fn lu_solve(a: &Mat<f64>, b: &Mat<f64>) -> Result<Mat<f64>> {
    let x = a.partial_piv_lu().solve(b);
    if x.col_iter().all(|c| c.iter().all(|v| v.is_finite())) {
        Ok(x)
    } else {
        Err(Error::MethodFailure("linear solve produced non-finite values".into()))
    }
}

pub fn frobenius(m: &Mat<f64>) -> f64 {
    m.norm_l2()
}

/// `V diag(w) Vᵀ` applied to a vector, for an orthonormal V.
pub fn spectral_apply(vecs: &Mat<f64>, w: &[f64], x: &[f64]) -> Vec<f64> {
    let mut c = t_mul_vec(vecs, x);
    for (ci, wi) in c.iter_mut().zip(w) {
        *ci *= wi;
    }
    mul_vec(vecs, &c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_and_reconstructs() {
        let m = Mat::from_fn(4, 4, |i, j| 1.0 / (1.0 + i as f64 + j as f64));
        let (vals, vecs) = sym_eigen(&m).unwrap();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let rec = &vecs * Mat::from_fn(4, 4, |i, j| if i == j { vals[i] } else { 0.0 }) * vecs.transpose();
        assert!(frobenius(&(rec - &m)) < 1e-12);
    }

    #[test]
    fn products_agree_with_faer() {
        let u = Mat::from_fn(5, 3, |i, j| (i * 3 + j) as f64 * 0.1 - 0.4);
        let v = [1.0, -2.0, 0.5, 0.0, 3.0];
        let w = [0.3, -1.0, 2.0];
        let a = t_mul_vec(&u, &v);
        let b = u.transpose() * col_vec(&v);
        for j in 0..3 {
            assert!((a[j] - b[(j, 0)]).abs() < 1e-14);
        }
        let c = mul_vec(&u, &w);
        let d = &u * col_vec(&w);
        for i in 0..5 {
            assert!((c[i] - d[(i, 0)]).abs() < 1e-14);
        }
    }

    #[test]
    fn lu_solves() {
        let a = Mat::from_fn(3, 3, |i, j| if i == j { 4.0 } else { 1.0 });
        let b = col_vec(&[1.0, 2.0, 3.0]);
        let x = lu_solve(&a, &b).unwrap();
        let r = &a * &x - &b;
        assert!(frobenius(&r) < 1e-14);
    }
}
