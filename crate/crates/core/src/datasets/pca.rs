//! Covariance eigendecomposition: PCA projections for analysis tables and
//! the whitening map applied before the flows.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::numcore::symmetric_eigen;

/// Eigenvalues below this fraction of the largest are treated as exact
/// degeneracies (e.g. the sum-to-one constraint of L1-normalized bands).
const RANK_TOLERANCE: f64 = 1e-10;

fn mean_and_covariance(data: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = data.nrows();
    let mean = data.mean_axis(Axis(0)).expect("non-empty data");
    let centered = &data - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    (mean, cov)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// `k × d`, orthonormal rows.
    pub components: Array2<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

/// Top-`k` principal components of the sample covariance.
pub fn pca_fit(data: ArrayView2<f64>, k: usize) -> Result<PcaModel> {
    let (n, d) = data.dim();
    if k == 0 || k > d || n <= k {
        return Err(Error::Usage(format!("PCA with k = {k} needs n > k and k ≤ d (n = {n}, d = {d})")));
    }
    let (mean, cov) = mean_and_covariance(data);
    let (values, vectors) = symmetric_eigen(&cov);
    let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
    if total <= 0.0 {
        return Err(Error::DegeneratePca("all rows are identical".into()));
    }
    let components = vectors.slice(ndarray::s![.., ..k]).t().to_owned();
    let explained_variance_ratio = values.iter().take(k).map(|v| v.max(0.0) / total).collect();
    Ok(PcaModel {
        mean,
        components,
        explained_variance_ratio,
    })
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.nrows()
    }

    /// `(x − mean) · componentsᵀ`, one row per input row.
    pub fn project(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        if data.ncols() != self.mean.len() {
            return Err(Error::shape("PCA input", self.mean.len(), data.ncols()));
        }
        Ok((&data - &self.mean).dot(&self.components.t()))
    }
}

/// Affine map `x ↦ diag(1/√λ) · V · (x − μ)` onto the non-degenerate
/// principal subspace of the training data, with unit variance per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Whitening {
    mean: Vec<f64>,
    /// `rank × dim`, orthonormal rows.
    directions: Array2<f64>,
    variances: Vec<f64>,
    /// `rank × dim`, directions scaled by `1/√λ`.
    matrix: Array2<f64>,
    log_abs_det: f64,
}

impl Whitening {
    pub fn fit(data: ArrayView2<f64>) -> Result<Self> {
        let (n, d) = data.dim();
        if n < 2 {
            return Err(Error::Usage(format!("whitening needs at least 2 rows, got {n}")));
        }
        let (mean, cov) = mean_and_covariance(data);
        let (values, vectors) = symmetric_eigen(&cov);
        let largest = values[0];
        if !(largest > 0.0) {
            return Err(Error::DegeneratePca("training data has zero variance".into()));
        }
        let rank = values.iter().take_while(|&&v| v > RANK_TOLERANCE * largest).count();
        let directions = vectors.slice(ndarray::s![.., ..rank]).t().to_owned();
        let variances = values.iter().take(rank).copied().collect();
        debug_assert_eq!(directions.ncols(), d);
        Self::from_parts(mean.to_vec(), directions, variances)
    }

    pub fn from_parts(mean: Vec<f64>, directions: Array2<f64>, variances: Vec<f64>) -> Result<Self> {
        if directions.ncols() != mean.len() {
            return Err(Error::shape("whitening directions", mean.len(), directions.ncols()));
        }
        if directions.nrows() != variances.len() || variances.is_empty() {
            return Err(Error::shape("whitening variances", directions.nrows(), variances.len()));
        }
        if variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::DegeneratePca("whitening variances must be positive".into()));
        }
        let mut matrix = directions.clone();
        for (mut row, v) in matrix.rows_mut().into_iter().zip(&variances) {
            row /= v.sqrt();
        }
        let log_abs_det = -0.5 * variances.iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            mean,
            directions,
            variances,
            matrix,
            log_abs_det,
        })
    }

    /// No-op map on `dim` coordinates.
    pub fn identity(dim: usize) -> Self {
        Self::from_parts(vec![0.0; dim], Array2::eye(dim), vec![1.0; dim]).expect("valid identity")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn rank(&self) -> usize {
        self.variances.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn directions(&self) -> &Array2<f64> {
        &self.directions
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Log-Jacobian of the map restricted to the principal subspace.
    pub fn log_abs_det(&self) -> f64 {
        self.log_abs_det
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::shape("whitening input", self.dim(), x.len()));
        }
        Ok(self
            .matrix
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .zip(x.iter().zip(&self.mean))
                    .map(|(w, (xi, mi))| w * (xi - mi))
                    .sum()
            })
            .collect())
    }

    pub fn transform_batch(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        if data.ncols() != self.dim() {
            return Err(Error::shape("whitening input", self.dim(), data.ncols()));
        }
        let mean = ndarray::ArrayView1::from(&self.mean[..]);
        let mut out = Array2::zeros((data.nrows(), self.rank()));
        for (mut o, x) in out.rows_mut().into_iter().zip(data.rows()) {
            let centered = &x - &mean;
            for (k, w) in self.matrix.rows().into_iter().enumerate() {
                o[k] = w.iter().zip(centered.iter()).map(|(a, b)| a * b).sum();
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    #[test]
    fn line_data_has_one_component() {
        let data = Array2::from_shape_fn((50, 2), |(i, j)| if j == 0 { i as f64 } else { 2.0 * i as f64 });
        let pca = pca_fit(data.view(), 2).unwrap();
        let dir = pca.components.row(0);
        let expected = [1.0 / 5f64.sqrt(), 2.0 / 5f64.sqrt()];
        assert!((dir[0].abs() - expected[0]).abs() < 1e-10);
        assert!((dir[1].abs() - expected[1]).abs() < 1e-10);
        assert!(pca.explained_variance_ratio[1] < 1e-12);
    }

    #[test]
    fn isotropic_data_splits_variance_evenly() {
        let mut rng = Rng::new(3);
        let data = Array2::from_shape_simple_fn((20_000, 4), || rng.normal());
        let pca = pca_fit(data.view(), 4).unwrap();
        for r in &pca.explained_variance_ratio {
            assert!((r - 0.25).abs() < 0.02, "{r}");
        }
        let gram = pca.components.dot(&pca.components.t());
        for ((i, j), g) in gram.indexed_iter() {
            assert!((g - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
        }
    }

    #[test]
    fn mean_projects_to_origin() {
        let mut rng = Rng::new(8);
        let data = Array2::from_shape_simple_fn((100, 5), || rng.uniform());
        let pca = pca_fit(data.view(), 2).unwrap();
        let mean = pca.mean.clone().insert_axis(Axis(0));
        let p = pca.project(mean.view()).unwrap();
        assert!(p.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn constant_rows_are_degenerate() {
        let data = Array2::from_elem((10, 3), 0.5);
        assert!(matches!(pca_fit(data.view(), 2), Err(Error::DegeneratePca(_))));
        assert!(matches!(Whitening::fit(data.view()), Err(Error::DegeneratePca(_))));
    }

    #[test]
    fn k_must_be_below_n() {
        let data = Array2::from_shape_fn((2, 3), |(i, j)| (i + j) as f64);
        assert!(matches!(pca_fit(data.view(), 2), Err(Error::Usage(_))));
    }

    #[test]
    fn whitening_drops_simplex_direction() {
        let mut rng = Rng::new(12);
        let data = Array2::from_shape_simple_fn((2000, 4), || rng.uniform() + 0.1);
        let sums = data.sum_axis(Axis(1));
        let simplex = &data / &sums.insert_axis(Axis(1));
        let w = Whitening::fit(simplex.view()).unwrap();
        assert_eq!(w.dim(), 4);
        assert_eq!(w.rank(), 3);
        let white = w.transform_batch(simplex.view()).unwrap();
        let cov = white.t().dot(&white) / (white.nrows() as f64 - 1.0);
        for ((i, j), c) in cov.indexed_iter() {
            assert!((c - if i == j { 1.0 } else { 0.0 }).abs() < 1e-9);
        }
        let single = w.transform(simplex.row(7).as_slice().unwrap()).unwrap();
        for (a, b) in single.iter().zip(white.row(7)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn whitening_log_det_matches_variances() {
        let w = Whitening::from_parts(vec![0.0, 0.0], Array2::eye(2), vec![4.0, 0.25]).unwrap();
        assert!(w.log_abs_det().abs() < 1e-15);
        let w = Whitening::from_parts(vec![1.0], Array2::eye(1), vec![4.0]).unwrap();
        assert!((w.log_abs_det() + 2f64.ln()).abs() < 1e-15);
        assert_eq!(w.transform(&[3.0]).unwrap(), vec![1.0]);
    }
}
