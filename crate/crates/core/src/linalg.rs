//! Small dense linear-algebra helpers used across modules.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

/// L2 norm of a vector view.
pub fn l2_norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Normalizes a vector to unit length. A zero vector maps to the first
/// standard basis vector so the result is always well defined.
pub fn normalize_or_first_basis(v: ArrayView1<f64>) -> Array1<f64> {
    let n = l2_norm(v);
    if n == 0.0 {
        let mut e = Array1::zeros(v.len());
        e[0] = 1.0;
        e
    } else {
        v.mapv(|x| x / n)
    }
}

/// Normalizes every row of a matrix in place, with the same zero-row guard
/// as [`normalize_or_first_basis`].
pub fn normalize_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n == 0.0 {
            row.fill(0.0);
            row[0] = 1.0;
        } else {
            row.mapv_inplace(|x| x / n);
        }
    }
}

/// Squared Euclidean distance between two vectors.
pub fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Per-column mean of a matrix.
pub fn column_means(m: ArrayView2<f64>) -> Array1<f64> {
    m.mean_axis(Axis(0)).expect("non-empty matrix")
}

/// Per-column standard deviation (population) of a matrix.
pub fn column_stds(m: ArrayView2<f64>) -> Array1<f64> {
    let means = column_means(m);
    let n = m.nrows() as f64;
    let mut out = Array1::zeros(m.ncols());
    for row in m.rows() {
        for (j, x) in row.iter().enumerate() {
            let d = x - means[j];
            out[j] += d * d;
        }
    }
    out.mapv(|s: f64| (s / n).sqrt())
}

/// Cholesky factorization of a symmetric positive-definite matrix.
/// Returns the lower-triangular factor `L` with `A = L Lᵀ`, or `None`
/// when the matrix is not positive definite.
pub fn cholesky(a: ArrayView2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "cholesky requires a square matrix");
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Solves `A x = b` given the Cholesky factor `L` of `A`.
pub fn cholesky_solve(l: &Array2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    // forward: L y = b
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[[i, k]] * y[k];
        }
        y[i] = sum / l[[i, i]];
    }
    // backward: Lᵀ x = y
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in (i + 1)..n {
            sum -= l[[k, i]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    x
}
