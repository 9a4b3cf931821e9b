//! Dense symmetric and generalized eigensolvers.
//!
//! Householder tridiagonalization followed by implicit-shift QL, plus a
//! Cholesky reduction for the generalized problem A v = lambda B v. Used as
//! the small-problem path of `solve_spectrum` and as the Rayleigh-Ritz
//! kernel inside the blocked sparse solver.

use super::SpectraError;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Eigen decomposition of a symmetric matrix: ascending eigenvalues and the
/// matching eigenvectors as columns.
pub fn eig_sym(a: &Mat) -> Result<(Vec<f64>, Mat), SpectraError> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    if n == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    let mut z = a.clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(&mut z, &mut d, &mut e);
    tql2(&mut z, &mut d, &mut e)?;
    // Sort ascending, permuting eigenvector columns.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]));
    let values: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (new_c, &old_c) in order.iter().enumerate() {
        for r in 0..n {
            *vectors.at_mut(r, new_c) = z.at(r, old_c);
        }
    }
    Ok((values, vectors))
}

/// Householder reduction to tridiagonal form with accumulated transform.
fn tred2(a: &mut Mat, d: &mut [f64], e: &mut [f64]) {
    let n = a.rows;
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let mut scale = 0.0;
            for k in 0..=l {
                scale += a.at(i, k).abs();
            }
            if scale == 0.0 {
                e[i] = a.at(i, l);
            } else {
                for k in 0..=l {
                    *a.at_mut(i, k) /= scale;
                    h += a.at(i, k) * a.at(i, k);
                }
                let f = a.at(i, l);
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                *a.at_mut(i, l) = f - g;
                let mut f_acc = 0.0;
                for j in 0..=l {
                    *a.at_mut(j, i) = a.at(i, j) / h;
                    let mut g_acc = 0.0;
                    for k in 0..=j {
                        g_acc += a.at(j, k) * a.at(i, k);
                    }
                    for k in j + 1..=l {
                        g_acc += a.at(k, j) * a.at(i, k);
                    }
                    e[j] = g_acc / h;
                    f_acc += e[j] * a.at(i, j);
                }
                let hh = f_acc / (h + h);
                for j in 0..=l {
                    let f = a.at(i, j);
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        *a.at_mut(j, k) -= f * e[k] + g * a.at(i, k);
                    }
                }
            }
        } else {
            e[i] = a.at(i, l);
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for i in 0..n {
        if d[i] != 0.0 {
            for j in 0..i {
                let mut g = 0.0;
                for k in 0..i {
                    g += a.at(i, k) * a.at(k, j);
                }
                for k in 0..i {
                    *a.at_mut(k, j) -= g * a.at(k, i);
                }
            }
        }
        d[i] = a.at(i, i);
        *a.at_mut(i, i) = 1.0;
        for j in 0..i {
            *a.at_mut(j, i) = 0.0;
            *a.at_mut(i, j) = 0.0;
        }
    }
}

/// Implicit-shift QL iteration on a tridiagonal matrix, eigenvectors
/// accumulated into `z` columns.
fn tql2(z: &mut Mat, d: &mut [f64], e: &mut [f64]) -> Result<(), SpectraError> {
    let n = z.rows;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 64 {
                return Err(SpectraError::NoConvergence {
                    iterations: iter,
                    worst_residual: e[l].abs(),
                    tol: f64::EPSILON,
                });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            let sign_r = if g >= 0.0 { r.abs() } else { -r.abs() };
            g = d[m] - d[l] + e[l] / (g + sign_r);
            let (mut s, mut c) = (1.0, 1.0);
            let mut p = 0.0;
            let mut underflow = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    f = z.at(k, i + 1);
                    *z.at_mut(k, i + 1) = s * z.at(k, i) + c * f;
                    *z.at_mut(k, i) = c * z.at(k, i) - s * f;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// In-place Cholesky factor L (lower) of a symmetric positive-definite
/// matrix.
pub fn cholesky(a: &Mat) -> Result<Mat, SpectraError> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.at(i, j);
            for k in 0..j {
                sum -= l.at(i, k) * l.at(j, k);
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(SpectraError::NotPositiveDefinite);
                }
                *l.at_mut(i, j) = sum.sqrt();
            } else {
                *l.at_mut(i, j) = sum / l.at(j, j);
            }
        }
    }
    Ok(l)
}

/// Solve L x = b in place (forward substitution) for each column of `b`.
fn forward_solve(l: &Mat, b: &mut Mat) {
    let n = l.rows;
    for c in 0..b.cols {
        for i in 0..n {
            let mut sum = b.at(i, c);
            for k in 0..i {
                sum -= l.at(i, k) * b.at(k, c);
            }
            *b.at_mut(i, c) = sum / l.at(i, i);
        }
    }
}

/// Solve L^T x = b in place (backward substitution) for each column of `b`.
fn backward_solve_t(l: &Mat, b: &mut Mat) {
    let n = l.rows;
    for c in 0..b.cols {
        for i in (0..n).rev() {
            let mut sum = b.at(i, c);
            for k in i + 1..n {
                sum -= l.at(k, i) * b.at(k, c);
            }
            *b.at_mut(i, c) = sum / l.at(i, i);
        }
    }
}

/// Generalized symmetric eigenproblem A v = lambda B v with B positive
/// definite. Returns ascending eigenvalues and B-orthonormal eigenvectors
/// as columns.
pub fn eig_sym_generalized(a: &Mat, b: &Mat) -> Result<(Vec<f64>, Mat), SpectraError> {
    assert_eq!(a.rows, a.cols);
    assert_eq!(b.rows, b.cols);
    assert_eq!(a.rows, b.rows);
    let n = a.rows;
    let l = cholesky(b)?;
    // C = L^-1 A L^-T, built in two triangular-solve sweeps.
    let mut w = a.clone();
    forward_solve(&l, &mut w); // W = L^-1 A
    // C^T = L^-1 W^T; transpose, solve, and symmetrize.
    let mut wt = Mat::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            *wt.at_mut(r, c) = w.at(c, r);
        }
    }
    forward_solve(&l, &mut wt); // C^T (equals C up to rounding)
    let mut c_mat = Mat::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            *c_mat.at_mut(r, c) = 0.5 * (wt.at(r, c) + wt.at(c, r));
        }
    }
    let (values, y) = eig_sym(&c_mat)?;
    let mut v = y;
    backward_solve_t(&l, &mut v);
    Ok((values, v))
}
