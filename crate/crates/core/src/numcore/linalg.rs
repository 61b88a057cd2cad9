//! Small dense factorizations: cyclic Jacobi eigendecomposition for
//! symmetric matrices and partially pivoted LU for log-determinants.

use ndarray::{Array1, Array2};

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
/// Column `k` of the returned matrix is the unit eigenvector for value `k`.
pub fn symmetric_eigen(matrix: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = matrix.nrows();
    assert_eq!(n, matrix.ncols(), "symmetric_eigen needs a square matrix");
    let mut a = matrix.clone();
    let mut v = Array2::<f64>::eye(n);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[[p, q]] * a[[p, q]];
            }
        }
        let scale: f64 = a.iter().map(|x| x * x).sum::<f64>();
        if off <= 1e-30 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].total_cmp(&a[[i, i]]));
    let values = Array1::from_iter(order.iter().map(|&i| a[[i, i]]));
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        // Fix the sign so the largest-magnitude entry is positive.
        let col = v.column(src);
        let pivot = col
            .iter()
            .copied()
            .max_by(|x, y| x.abs().total_cmp(&y.abs()))
            .unwrap_or(1.0);
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        vectors.column_mut(dst).assign(&col.mapv(|x| sign * x));
    }
    (values, vectors)
}

/// `ln|det A|` via LU with partial pivoting. `None` when a pivot is exactly
/// zero or the result is not finite.
pub fn log_abs_det(matrix: &Array2<f64>) -> Option<f64> {
    let n = matrix.nrows();
    assert_eq!(n, matrix.ncols(), "log_abs_det needs a square matrix");
    let mut a = matrix.clone();
    let mut total = 0.0;
    for col in 0..n {
        let pivot_row = (col..n).max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))?;
        let pivot = a[[pivot_row, col]];
        if pivot == 0.0 || !pivot.is_finite() {
            return None;
        }
        if pivot_row != col {
            for k in 0..n {
                a.swap([col, k], [pivot_row, k]);
            }
        }
        total += pivot.abs().ln();
        for row in (col + 1)..n {
            let factor = a[[row, col]] / pivot;
            if factor != 0.0 {
                for k in col..n {
                    a[[row, k]] -= factor * a[[col, k]];
                }
            }
        }
    }
    total.is_finite().then_some(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn eigen_of_diagonal_sorted() {
        let m = array![[1.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 2.0]];
        let (vals, vecs) = symmetric_eigen(&m);
        assert_eq!(vals.to_vec(), vec![3.0, 2.0, 1.0]);
        assert_eq!(vecs.column(0).to_vec(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn eigen_reconstructs_matrix() {
        let m = array![
            [4.0, 1.0, 0.5, 0.2],
            [1.0, 3.0, 0.3, 0.1],
            [0.5, 0.3, 2.0, 0.7],
            [0.2, 0.1, 0.7, 1.0]
        ];
        let (vals, vecs) = symmetric_eigen(&m);
        let recon = vecs.dot(&Array2::from_diag(&vals)).dot(&vecs.t());
        for (a, b) in recon.iter().zip(m.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let gram = vecs.t().dot(&vecs);
        for ((i, j), g) in gram.indexed_iter() {
            let target = if i == j { 1.0 } else { 0.0 };
            assert!((g - target).abs() < 1e-12);
        }
    }

    #[test]
    fn log_det_matches_closed_form() {
        let m = array![[0.0, 2.0], [3.0, 1.0]];
        assert!((log_abs_det(&m).unwrap() - 6f64.ln()).abs() < 1e-15);
        let singular = array![[1.0, 2.0], [2.0, 4.0]];
        assert!(log_abs_det(&singular).is_none());
    }
}
