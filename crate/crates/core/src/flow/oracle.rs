use ndarray::Array2;

use super::FlowModel;
use crate::error::{Error, Result};
use crate::numcore::log_abs_det;

/// `ln|det J|` of `model.forward` at `x`, from a central-difference Jacobian
/// and a pivoted LU factorization. Independent of the analytic log-scale sum,
/// so it is used to check it.
pub fn numerical_logdet_oracle(model: &FlowModel, x: &[f64], h: f64) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::Usage(format!("oracle step {h} outside [1e-7, 1e-3]")));
    }
    let n = model.input_dim();
    if x.len() != n {
        return Err(Error::shape("oracle input", n, x.len()));
    }
    let mut jacobian = Array2::zeros((n, n));
    let mut probe = x.to_vec();
    for j in 0..n {
        probe[j] = x[j] + h;
        let (up, _) = model.forward(&probe)?;
        probe[j] = x[j] - h;
        let (down, _) = model.forward(&probe)?;
        probe[j] = x[j];
        for i in 0..n {
            jacobian[[i, j]] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    log_abs_det(&jacobian)
        .ok_or_else(|| Error::OracleFailure("numerical Jacobian is singular".into()))
}
