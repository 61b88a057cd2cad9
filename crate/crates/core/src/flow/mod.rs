//! Invertible network of affine coupling blocks, each followed by a fixed
//! permutation, with an exact change-of-variables log-likelihood under a
//! standard normal latent.

mod coupling;
mod oracle;
mod permutation;

use ndarray::{Array1, Array2, ArrayView2, Axis};

pub use coupling::CouplingBlock;
pub use oracle::numerical_logdet_oracle;
pub use permutation::Permutation;

use crate::error::{Error, Result};
use crate::numcore::Rng;

/// `ln(2π)`
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub n_blocks: usize,
    pub hidden_width: usize,
    pub clamp_alpha: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            n_blocks: 10,
            hidden_width: 64,
            clamp_alpha: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    input_dim: usize,
    config: FlowConfig,
    blocks: Vec<CouplingBlock>,
    permutations: Vec<Permutation>,
    seed: u64,
    loss_curve: Vec<f64>,
}

impl FlowModel {
    /// Randomly initialized model; subnet weights and permutations are drawn
    /// from `seed`.
    pub fn new(input_dim: usize, config: FlowConfig, seed: u64) -> Result<Self> {
        if config.n_blocks == 0 {
            return Err(Error::InvalidArchitecture("a flow needs at least one block".into()));
        }
        let mut rng = Rng::new(seed);
        let mut blocks = Vec::with_capacity(config.n_blocks);
        let mut permutations = Vec::with_capacity(config.n_blocks);
        for _ in 0..config.n_blocks {
            blocks.push(CouplingBlock::random(
                input_dim,
                config.hidden_width,
                config.clamp_alpha,
                &mut rng,
            )?);
            permutations.push(Permutation::shuffled(input_dim, &mut rng));
        }
        let mut model = Self::from_parts(blocks, permutations)?;
        model.seed = seed;
        Ok(model)
    }

    /// Identity couplings and identity permutations.
    pub fn identity(input_dim: usize, config: FlowConfig) -> Result<Self> {
        let blocks = (0..config.n_blocks)
            .map(|_| CouplingBlock::identity(input_dim, config.hidden_width, config.clamp_alpha))
            .collect::<Result<Vec<_>>>()?;
        let permutations = (0..config.n_blocks).map(|_| Permutation::identity(input_dim)).collect();
        Self::from_parts(blocks, permutations)
    }

    pub fn from_parts(blocks: Vec<CouplingBlock>, permutations: Vec<Permutation>) -> Result<Self> {
        let Some(first) = blocks.first() else {
            return Err(Error::InvalidArchitecture("a flow needs at least one block".into()));
        };
        if blocks.len() != permutations.len() {
            return Err(Error::shape("permutation count", blocks.len(), permutations.len()));
        }
        let input_dim = first.dim();
        let hidden_width = first.subnet().hidden_width();
        let clamp_alpha = first.clamp_alpha();
        for (k, (block, perm)) in blocks.iter().zip(&permutations).enumerate() {
            if block.dim() != input_dim {
                return Err(Error::shape(format!("block {k} dimension"), input_dim, block.dim()));
            }
            if perm.len() != input_dim {
                return Err(Error::shape(format!("permutation {k} length"), input_dim, perm.len()));
            }
        }
        Ok(Self {
            input_dim,
            config: FlowConfig {
                n_blocks: blocks.len(),
                hidden_width,
                clamp_alpha,
            },
            blocks,
            permutations,
            seed: 0,
            loss_curve: Vec::new(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn config(&self) -> FlowConfig {
        self.config
    }

    pub fn blocks(&self) -> &[CouplingBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [CouplingBlock] {
        &mut self.blocks
    }

    pub fn permutations(&self) -> &[Permutation] {
        &self.permutations
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    /// Mean training NLL per epoch.
    pub fn loss_curve(&self) -> &[f64] {
        &self.loss_curve
    }

    pub fn set_loss_curve(&mut self, curve: Vec<f64>) {
        self.loss_curve = curve;
    }

    pub fn n_params(&self) -> usize {
        self.blocks.iter().map(|b| b.subnet().n_params()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_params()];
        self.write_params(&mut out).expect("buffer sized from model");
        out
    }

    pub fn write_params(&self, out: &mut [f64]) -> Result<()> {
        if out.len() != self.n_params() {
            return Err(Error::shape("flow parameter buffer", self.n_params(), out.len()));
        }
        let mut offset = 0;
        for block in &self.blocks {
            let n = block.subnet().n_params();
            block.subnet().write_params(&mut out[offset..offset + n])?;
            offset += n;
        }
        Ok(())
    }

    pub fn read_params(&mut self, src: &[f64]) -> Result<()> {
        if src.len() != self.n_params() {
            return Err(Error::shape("flow parameter buffer", self.n_params(), src.len()));
        }
        let mut offset = 0;
        for block in &mut self.blocks {
            let n = block.subnet().n_params();
            block.subnet_mut().read_params(&src[offset..offset + n])?;
            offset += n;
        }
        Ok(())
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.input_dim {
            return Err(Error::shape("flow input", self.input_dim, got));
        }
        Ok(())
    }

    /// `x ↦ (z, log|det J|)`
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_dim(x.len())?;
        let mut current = x.to_vec();
        let mut total = 0.0;
        for (block, perm) in self.blocks.iter().zip(&self.permutations) {
            let (y, logdet) = block.forward(&current)?;
            total += logdet;
            current = perm.apply(&y);
        }
        Ok((current, total))
    }

    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z.len())?;
        let mut current = z.to_vec();
        for (block, perm) in self.blocks.iter().zip(&self.permutations).rev() {
            current = block.inverse(&perm.apply_inverse(&current))?;
        }
        Ok(current)
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        self.check_dim(x.ncols())?;
        let mut current = x.to_owned();
        let mut total = Array1::zeros(x.nrows());
        for (block, perm) in self.blocks.iter().zip(&self.permutations) {
            let (y, logdet, _) = block.forward_batch(current.view())?;
            total += &logdet;
            current = perm.apply_batch(y.view());
        }
        Ok((current, total))
    }

    pub fn inverse_batch(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_dim(z.ncols())?;
        let mut current = z.to_owned();
        for (block, perm) in self.blocks.iter().zip(&self.permutations).rev() {
            current = block.inverse_batch(perm.apply_inverse_batch(current.view()).view())?;
        }
        Ok(current)
    }

    /// `log p(x) = −½‖z‖² − (n/2)·ln(2π) + log|det J|`
    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("log_likelihood received a non-finite input".into()));
        }
        let mut current = x.to_vec();
        let mut total = 0.0;
        for (k, (block, perm)) in self.blocks.iter().zip(&self.permutations).enumerate() {
            let (y, logdet) = block.forward(&current)?;
            total += logdet;
            if !total.is_finite() || y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Likelihood { block: k });
            }
            current = perm.apply(&y);
        }
        Ok(gaussian_log_density(&current) + total)
    }

    /// Row-wise log-likelihoods. Rows that overflow come back non-finite;
    /// use [`FlowModel::log_likelihood`] on them for a block-tagged error.
    pub fn log_likelihood_batch(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        let (z, logdet) = self.forward_batch(x)?;
        let z = z.as_standard_layout();
        Ok(z.axis_iter(Axis(0))
            .zip(logdet.iter())
            .map(|(row, ld)| gaussian_log_density(row.as_slice().expect("standard layout")) + ld)
            .collect())
    }

    /// Mean negative log-likelihood over the rows of `batch` and its gradient
    /// w.r.t. the flattened parameters (see [`FlowModel::params`]).
    pub fn nll_loss_and_grad(&self, batch: ArrayView2<f64>) -> Result<(f64, Vec<f64>)> {
        if batch.nrows() == 0 {
            return Err(Error::Usage("nll_loss_and_grad needs a non-empty batch".into()));
        }
        self.check_dim(batch.ncols())?;
        let rows = batch.nrows() as f64;

        let mut traces = Vec::with_capacity(self.blocks.len());
        let mut current = batch.to_owned();
        let mut logdet = Array1::<f64>::zeros(batch.nrows());
        for (block, perm) in self.blocks.iter().zip(&self.permutations) {
            let (y, ld, trace) = block.forward_batch(current.view())?;
            logdet += &ld;
            traces.push(trace);
            current = perm.apply_batch(y.view());
        }
        let sq: f64 = current.iter().map(|v| v * v).sum();
        let loss = 0.5 * sq / rows + 0.5 * self.input_dim as f64 * LN_2PI - logdet.sum() / rows;

        let mut grads = vec![0.0; self.n_params()];
        let offsets = self.param_offsets();
        let mut grad = current / rows;
        for k in (0..self.blocks.len()).rev() {
            let upstream = self.permutations[k].apply_inverse_batch(grad.view());
            let slot = &mut grads[offsets[k]..offsets[k + 1]];
            grad = self.blocks[k].backward_batch(&traces[k], upstream.view(), -1.0 / rows, slot)?;
        }
        Ok((loss, grads))
    }

    fn param_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.blocks.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for block in &self.blocks {
            acc += block.subnet().n_params();
            offsets.push(acc);
        }
        offsets
    }

    /// Draws `count` latent standard-normal rows and maps them back to data space.
    pub fn sample(&self, rng: &mut Rng, count: usize) -> Result<Array2<f64>> {
        if count == 0 {
            return Err(Error::Usage("sample count must be at least 1".into()));
        }
        let z = Array2::from_shape_simple_fn((count, self.input_dim), || rng.normal());
        self.inverse_batch(z.view())
    }
}

fn gaussian_log_density(z: &[f64]) -> f64 {
    let sq: f64 = z.iter().map(|v| v * v).sum();
    -0.5 * sq - 0.5 * z.len() as f64 * LN_2PI
}
