//! Three-layer fully connected network with hand-derived backpropagation.
//!
//! Parameters are flattened layer by layer as `W1 (row-major), b1, W2, b2,
//! W3, b3`; [`Mlp::write_params`], [`Mlp::read_params`] and the gradient
//! buffers of [`Mlp::backward_batch`] all use that order.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

use super::rng::Rng;
use crate::error::{Error, Result};

/// Number of weight layers in every [`Mlp`].
pub const MLP_DEPTH: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// `W3·relu(W2·relu(W1·x + b1) + b2) + b3`
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Input and per-layer pre-activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    input: Array2<f64>,
    pre_activations: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }

    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre_activations
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Subgradient of ReLU; the value at exactly 0 is 0.
#[inline]
pub fn relu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `fan_out × fan_in` matrix of i.i.d. `N(0, 1/fan_in)` draws.
pub fn gaussian_init(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Result<Array2<f64>> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::InvalidArchitecture(format!(
            "layer with fan_in {fan_in} and fan_out {fan_out}"
        )));
    }
    let std = (1.0 / fan_in as f64).sqrt();
    Ok(Array2::from_shape_simple_fn((fan_out, fan_in), || {
        std * rng.normal()
    }))
}

impl Mlp {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.len() != MLP_DEPTH {
            return Err(Error::InvalidArchitecture(format!(
                "expected {MLP_DEPTH} weight layers, got {}",
                layers.len()
            )));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.in_dim() == 0 || layer.out_dim() == 0 {
                return Err(Error::InvalidArchitecture(format!("layer {k} has a zero dimension")));
            }
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::shape(format!("bias of layer {k}"), layer.out_dim(), layer.bias.len()));
            }
            if k > 0 && layers[k - 1].out_dim() != layer.in_dim() {
                return Err(Error::shape(
                    format!("input of layer {k}"),
                    layers[k - 1].out_dim(),
                    layer.in_dim(),
                ));
            }
        }
        Ok(Self { layers })
    }

    /// Gaussian weights (see [`gaussian_init`]) and zero biases.
    /// `dims = [input, hidden1, hidden2, output]`.
    pub fn random(dims: [usize; 4], rng: &mut Rng) -> Result<Self> {
        let mut layers = Vec::with_capacity(MLP_DEPTH);
        for k in 0..MLP_DEPTH {
            layers.push(Dense {
                weight: gaussian_init(rng, dims[k], dims[k + 1])?,
                bias: Array1::zeros(dims[k + 1]),
            });
        }
        Self::new(layers)
    }

    pub fn zeros(dims: [usize; 4]) -> Result<Self> {
        let layers = (0..MLP_DEPTH)
            .map(|k| Dense {
                weight: Array2::zeros((dims[k + 1], dims[k])),
                bias: Array1::zeros(dims[k + 1]),
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[MLP_DEPTH - 1].out_dim()
    }

    pub fn hidden_width(&self) -> usize {
        self.layers[0].out_dim()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    pub fn write_params(&self, out: &mut [f64]) -> Result<()> {
        if out.len() != self.n_params() {
            return Err(Error::shape("parameter buffer", self.n_params(), out.len()));
        }
        let mut offset = 0;
        for layer in &self.layers {
            for &w in layer.weight.iter() {
                out[offset] = w;
                offset += 1;
            }
            for &b in layer.bias.iter() {
                out[offset] = b;
                offset += 1;
            }
        }
        Ok(())
    }

    pub fn read_params(&mut self, src: &[f64]) -> Result<()> {
        if src.len() != self.n_params() {
            return Err(Error::shape("parameter buffer", self.n_params(), src.len()));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            for w in layer.weight.iter_mut() {
                *w = src[offset];
                offset += 1;
            }
            for b in layer.bias.iter_mut() {
                *b = src[offset];
                offset += 1;
            }
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        let view = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|_| Error::shape("layer 0 input", self.in_dim(), input.len()))?;
        let (out, cache) = self.forward_batch(view)?;
        Ok((out.into_raw_vec_and_offset().0, cache))
    }

    /// Row-wise forward pass over a `batch × in_dim` matrix.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        if input.ncols() != self.in_dim() {
            return Err(Error::shape("layer 0 input", self.in_dim(), input.ncols()));
        }
        let batch = input.nrows();
        let mut pre_activations = Vec::with_capacity(MLP_DEPTH);
        let mut hidden = input.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut pre = Array2::zeros((batch, layer.out_dim()));
            pre.assign(&layer.bias.broadcast((batch, layer.out_dim())).unwrap());
            general_mat_mul(1.0, &hidden, &layer.weight.t(), 1.0, &mut pre);
            hidden = if k + 1 < MLP_DEPTH {
                pre.mapv(relu)
            } else {
                pre.clone()
            };
            pre_activations.push(pre);
        }
        let cache = MlpCache {
            input: input.to_owned(),
            pre_activations,
        };
        Ok((hidden, cache))
    }

    /// Returns `(parameter gradients, input gradient)` for one sample.
    pub fn backward(&self, cache: &MlpCache, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let view = ArrayView2::from_shape((1, upstream.len()), upstream)
            .map_err(|_| Error::shape("upstream gradient", self.out_dim(), upstream.len()))?;
        let mut grads = vec![0.0; self.n_params()];
        let input_grad = self.backward_batch(cache, view, &mut grads)?;
        Ok((grads, input_grad.into_raw_vec_and_offset().0))
    }

    /// Backpropagates `upstream` (`batch × out_dim`, the gradient of a scalar
    /// loss w.r.t. the outputs). Parameter gradients, summed over the batch,
    /// are *added* to `grads`; the `batch × in_dim` input gradient is returned.
    pub fn backward_batch(
        &self,
        cache: &MlpCache,
        upstream: ArrayView2<f64>,
        grads: &mut [f64],
    ) -> Result<Array2<f64>> {
        self.check_cache(cache)?;
        if upstream.ncols() != self.out_dim() {
            return Err(Error::shape("upstream gradient", self.out_dim(), upstream.ncols()));
        }
        if upstream.nrows() != cache.batch_size() {
            return Err(Error::shape("upstream batch", cache.batch_size(), upstream.nrows()));
        }
        if grads.len() != self.n_params() {
            return Err(Error::shape("gradient buffer", self.n_params(), grads.len()));
        }

        let mut slots: Vec<(&mut [f64], &mut [f64])> = Vec::with_capacity(MLP_DEPTH);
        let mut rest = grads;
        for layer in &self.layers {
            let (w, tail) = rest.split_at_mut(layer.weight.len());
            let (b, tail) = tail.split_at_mut(layer.bias.len());
            slots.push((w, b));
            rest = tail;
        }

        let mut grad = upstream.to_owned();
        for k in (0..MLP_DEPTH).rev() {
            let layer = &self.layers[k];
            let activation = if k == 0 {
                cache.input.clone()
            } else {
                cache.pre_activations[k - 1].mapv(relu)
            };
            let (w_slot, b_slot) = &mut slots[k];
            let mut dw = ArrayViewMut2::from_shape(layer.weight.raw_dim(), &mut **w_slot)
                .expect("slot sized from layer");
            general_mat_mul(1.0, &grad.t(), &activation, 1.0, &mut dw);
            let mut db = ArrayViewMut1::from(&mut **b_slot);
            db += &grad.sum_axis(Axis(0));

            let mut below = grad.dot(&layer.weight);
            if k > 0 {
                below.zip_mut_with(&cache.pre_activations[k - 1], |g, &a| {
                    *g *= relu_derivative(a)
                });
            }
            grad = below;
        }
        Ok(grad)
    }

    fn check_cache(&self, cache: &MlpCache) -> Result<()> {
        if cache.input.ncols() != self.in_dim() {
            return Err(Error::shape("cache input", self.in_dim(), cache.input.ncols()));
        }
        if cache.pre_activations.len() != MLP_DEPTH {
            return Err(Error::shape("cache depth", MLP_DEPTH, cache.pre_activations.len()));
        }
        for (k, (pre, layer)) in cache.pre_activations.iter().zip(&self.layers).enumerate() {
            if pre.ncols() != layer.out_dim() || pre.nrows() != cache.batch_size() {
                return Err(Error::shape(
                    format!("cached pre-activation of layer {k}"),
                    layer.out_dim(),
                    pre.ncols(),
                ));
            }
        }
        Ok(())
    }
}
