//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};

/// Smallest and largest eigenvalue of a symmetric matrix.
pub(crate) fn sym_extreme_eigenvalues(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(m.clone());
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Largest and smallest singular value.
pub(crate) fn singular_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let sv = m.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    (max, min)
}

pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_extremes(m).0
}

/// 2-norm condition number; infinite for exactly singular input.
pub(crate) fn condition_number(m: &DMatrix<f64>) -> f64 {
    let (max, min) = singular_extremes(m);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Eigen-decomposition of a real matrix whose spectrum is (numerically) real.
pub(crate) struct RealEigen {
    pub values: DVector<f64>,
    /// Eigenvectors as columns, each scaled to unit 2-norm.
    pub vectors: DMatrix<f64>,
    /// Largest imaginary part seen in the Schur form before it was discarded.
    pub max_imag: f64,
}

/// Decomposes `m = V diag(values) V^-1` through a real Schur form.
///
/// Complex conjugate pairs whose imaginary part is at most `imag_tol` are
/// treated as a double real eigenvalue and the 2x2 block is rotated to upper
/// triangular form. Returns `Err(max_imag)` when a larger imaginary part shows up.
pub(crate) fn real_eigen(m: &DMatrix<f64>, imag_tol: f64) -> Result<RealEigen, f64> {
    let dim = m.nrows();
    let (mut z, mut t) = Schur::new(m.clone()).unpack();
    let mut max_imag = 0.0f64;

    let mut k = 0;
    while k + 1 < dim {
        if t[(k + 1, k)] == 0.0 {
            k += 1;
            continue;
        }
        let (a, b, c, d) = (t[(k, k)], t[(k, k + 1)], t[(k + 1, k)], t[(k + 1, k + 1)]);
        let half_diff = 0.5 * (a - d);
        let discr = b * c + half_diff * half_diff;
        if discr >= 0.0 {
            // Schur left a real pair coupled; split it the same way.
            let root = discr.sqrt();
            let lambda = 0.5 * (a + d) + root;
            triangularize_block(&mut t, &mut z, k, [b, lambda - a], [lambda - d, c]);
        } else {
            let imag = (-discr).sqrt();
            max_imag = max_imag.max(imag);
            if imag > imag_tol {
                // keep scanning so the reported value is the worst one
                k += 2;
                continue;
            }
            triangularize_block(&mut t, &mut z, k, [b, -half_diff], [half_diff, c]);
        }
        k += 2;
    }
    if max_imag > imag_tol {
        return Err(max_imag);
    }

    let values = DVector::from_iterator(dim, (0..dim).map(|i| t[(i, i)]));
    let x = triangular_eigenvectors(&t);
    let mut vectors = z * x;
    for mut col in vectors.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    Ok(RealEigen {
        values,
        vectors,
        max_imag,
    })
}

/// Rotates the 2x2 diagonal block at `k` so that its first column becomes an
/// (approximate) eigenvector, then drops the sub-diagonal entry.
fn triangularize_block(
    t: &mut DMatrix<f64>,
    z: &mut DMatrix<f64>,
    k: usize,
    cand1: [f64; 2],
    cand2: [f64; 2],
) {
    let n1 = cand1[0].hypot(cand1[1]);
    let n2 = cand2[0].hypot(cand2[1]);
    let (v, norm) = if n1 >= n2 { (cand1, n1) } else { (cand2, n2) };
    if norm == 0.0 {
        t[(k + 1, k)] = 0.0;
        return;
    }
    let (cs, sn) = (v[0] / norm, v[1] / norm);
    let dim = t.nrows();
    // T <- R^T T R with R = [[cs, -sn], [sn, cs]] acting on (k, k+1)
    for j in 0..dim {
        let (p, q) = (t[(k, j)], t[(k + 1, j)]);
        t[(k, j)] = cs * p + sn * q;
        t[(k + 1, j)] = -sn * p + cs * q;
    }
    for i in 0..dim {
        let (p, q) = (t[(i, k)], t[(i, k + 1)]);
        t[(i, k)] = cs * p + sn * q;
        t[(i, k + 1)] = -sn * p + cs * q;
    }
    for i in 0..dim {
        let (p, q) = (z[(i, k)], z[(i, k + 1)]);
        z[(i, k)] = cs * p + sn * q;
        z[(i, k + 1)] = -sn * p + cs * q;
    }
    t[(k + 1, k)] = 0.0;
}

/// Eigenvectors of an upper-triangular matrix by back substitution.
/// Column `k` of the result is the eigenvector for `t[(k, k)]`.
fn triangular_eigenvectors(t: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = t.nrows();
    let scale = t
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let mut x = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        let lambda = t[(k, k)];
        let smin = (f64::EPSILON * lambda.abs()).max(f64::EPSILON * scale * 1e-3);
        x[(k, k)] = 1.0;
        for i in (0..k).rev() {
            let mut s = 0.0;
            for j in (i + 1)..=k {
                s += t[(i, j)] * x[(j, k)];
            }
            let mut denom = t[(i, i)] - lambda;
            if denom.abs() < smin {
                denom = if denom < 0.0 { -smin } else { smin };
            }
            x[(i, k)] = -s / denom;
            if x[(i, k)].abs() > 1e150 {
                let mut col = x.column_mut(k);
                col /= 1e150;
            }
        }
    }
    x
}
