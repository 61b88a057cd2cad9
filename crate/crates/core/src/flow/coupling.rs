//! Single-sided affine coupling.
//!
//! The input is split at `h = ⌈n/2⌉` into `(x1, x2)`. A subnet maps `x1` to
//! `(s, t)` with `m = ⌊n/2⌋` entries each and the block outputs
//! `(x1, x2 ⊙ exp(ŝ) + t)` where `ŝ = α·tanh(s/α)`. The Jacobian is
//! triangular with log-determinant `Σ ŝ`.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::numcore::{Mlp, MlpCache, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBlock {
    dim: usize,
    subnet: Mlp,
    clamp_alpha: f64,
}

/// Intermediate values of a batched forward pass, consumed by backprop.
#[derive(Debug, Clone)]
pub(crate) struct BlockTrace {
    x2: Array2<f64>,
    log_scale: Array2<f64>,
    subnet: MlpCache,
}

pub(crate) fn soft_clamp(s: f64, alpha: f64) -> f64 {
    alpha * (s / alpha).tanh()
}

impl CouplingBlock {
    pub fn new(dim: usize, subnet: Mlp, clamp_alpha: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        if !(clamp_alpha > 0.0 && clamp_alpha.is_finite()) {
            return Err(Error::InvalidArchitecture(format!(
                "clamp_alpha must be positive, got {clamp_alpha}"
            )));
        }
        let split = dim.div_ceil(2);
        let m = dim / 2;
        if subnet.in_dim() != split {
            return Err(Error::shape("coupling subnet input", split, subnet.in_dim()));
        }
        if subnet.out_dim() != 2 * m {
            return Err(Error::shape("coupling subnet output", 2 * m, subnet.out_dim()));
        }
        Ok(Self {
            dim,
            subnet,
            clamp_alpha,
        })
    }

    pub fn random(dim: usize, hidden_width: usize, clamp_alpha: f64, rng: &mut Rng) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        let subnet = Mlp::random([dim.div_ceil(2), hidden_width, hidden_width, 2 * (dim / 2)], rng)?;
        Self::new(dim, subnet, clamp_alpha)
    }

    /// All-zero subnet, so `s = t = 0` and the block is the identity.
    pub fn identity(dim: usize, hidden_width: usize, clamp_alpha: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        let subnet = Mlp::zeros([dim.div_ceil(2), hidden_width, hidden_width, 2 * (dim / 2)])?;
        Self::new(dim, subnet, clamp_alpha)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split(&self) -> usize {
        self.dim.div_ceil(2)
    }

    pub fn clamp_alpha(&self) -> f64 {
        self.clamp_alpha
    }

    pub fn subnet(&self) -> &Mlp {
        &self.subnet
    }

    pub fn subnet_mut(&mut self) -> &mut Mlp {
        &mut self.subnet
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let view = self.row_view(x)?;
        let (y, logdet, _) = self.forward_batch(view)?;
        Ok((y.into_raw_vec_and_offset().0, logdet[0]))
    }

    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        let view = self.row_view(y)?;
        Ok(self.inverse_batch(view)?.into_raw_vec_and_offset().0)
    }

    fn row_view<'a>(&self, x: &'a [f64]) -> Result<ArrayView2<'a, f64>> {
        if x.len() != self.dim {
            return Err(Error::shape("coupling block input", self.dim, x.len()));
        }
        Ok(ArrayView2::from_shape((1, x.len()), x).expect("length checked"))
    }

    pub(crate) fn forward_batch(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>, BlockTrace)> {
        if x.ncols() != self.dim {
            return Err(Error::shape("coupling block input", self.dim, x.ncols()));
        }
        let split = self.split();
        let m = self.dim - split;
        let x1 = x.slice(s![.., ..split]);
        let x2 = x.slice(s![.., split..]).to_owned();
        let (out, cache) = self.subnet.forward_batch(x1)?;
        let alpha = self.clamp_alpha;
        let log_scale = out.slice(s![.., ..m]).mapv(|v| soft_clamp(v, alpha));
        let shift = out.slice(s![.., m..]);

        let mut y = x.to_owned();
        {
            let mut y2 = y.slice_mut(s![.., split..]);
            ndarray::Zip::from(&mut y2)
                .and(&log_scale)
                .and(&shift)
                .for_each(|y, &ls, &t| *y = *y * ls.exp() + t);
        }
        let logdet = log_scale.sum_axis(Axis(1));
        let trace = BlockTrace {
            x2,
            log_scale,
            subnet: cache,
        };
        Ok((y, logdet, trace))
    }

    /// Backprop through the block. `grad_y` is the loss gradient w.r.t. the
    /// block output and `logdet_weight` the gradient w.r.t. each row's
    /// log-determinant. Subnet parameter gradients are added to `grads`.
    pub(crate) fn backward_batch(
        &self,
        trace: &BlockTrace,
        grad_y: ArrayView2<f64>,
        logdet_weight: f64,
        grads: &mut [f64],
    ) -> Result<Array2<f64>> {
        let split = self.split();
        let alpha = self.clamp_alpha;
        let gy1 = grad_y.slice(s![.., ..split]);
        let gy2 = grad_y.slice(s![.., split..]);

        let scale = trace.log_scale.mapv(f64::exp);
        let gx2 = &gy2 * &scale;
        let mut g_raw = &gx2 * &trace.x2;
        ndarray::Zip::from(&mut g_raw)
            .and(&trace.log_scale)
            .for_each(|g, &ls| {
                let r = ls / alpha;
                *g = (*g + logdet_weight) * (1.0 - r * r);
            });
        let g_out = concatenate![Axis(1), g_raw, gy2];
        let gx1_sub = self.subnet.backward_batch(&trace.subnet, g_out.view(), grads)?;
        let gx1 = &gy1 + &gx1_sub;
        Ok(concatenate![Axis(1), gx1, gx2])
    }

    pub(crate) fn inverse_batch(&self, y: ArrayView2<f64>) -> Result<Array2<f64>> {
        if y.ncols() != self.dim {
            return Err(Error::shape("coupling block input", self.dim, y.ncols()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("coupling inverse received a non-finite input".into()));
        }
        let split = self.split();
        let m = self.dim - split;
        let y1 = y.slice(s![.., ..split]);
        let (out, _) = self.subnet.forward_batch(y1)?;
        let alpha = self.clamp_alpha;
        let mut x = y.to_owned();
        {
            let mut x2 = x.slice_mut(s![.., split..]);
            ndarray::Zip::from(&mut x2)
                .and(out.slice(s![.., ..m]))
                .and(out.slice(s![.., m..]))
                .for_each(|x, &raw, &t| *x = (*x - t) * (-soft_clamp(raw, alpha)).exp());
        }
        Ok(x)
    }
}
