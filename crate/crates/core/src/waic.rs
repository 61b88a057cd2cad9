//! Ensembles of flows as posterior samples over the network parameters, and
//! the WAIC score `Var_Θ[log p(x|Θ)] − E_Θ[log p(x|Θ)]` (Watanabe's sign:
//! larger means further from the training distribution).

use ndarray::{s, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::datasets::Whitening;
use crate::error::{Error, Result};
use crate::flow::{FlowConfig, FlowModel};
use crate::numcore::{mix_seed, AdamConfig, AdamState, Rng};

/// Default number of ensemble members.
pub const DEFAULT_MEMBERS: usize = 5;

/// Rows per chunk when scoring. Fixed so that serial and parallel scoring
/// evaluate identical batches.
const SCORE_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub flow: FlowConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Learning-rate multiplier applied after each third of the epochs.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            flow: FlowConfig::default(),
            batch_size: 256,
            epochs: 30,
            adam: AdamConfig::default(),
            lr_decay: 0.5,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Usage("batch_size and epochs must be positive".into()));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::Usage("learning rate must be positive".into()));
        }
        Ok(())
    }

    fn learning_rate_at(&self, epoch: usize) -> f64 {
        let phase = (3 * epoch / self.epochs).min(2) as i32;
        self.adam.learning_rate * self.lr_decay.powi(phase)
    }
}

/// Maximum-likelihood training of one flow on the rows of `data`.
///
/// `seed` fixes both the initialization and the per-epoch shuffle order.
pub fn train_member(config: &TrainConfig, data: ArrayView2<f64>, seed: u64) -> Result<FlowModel> {
    config.validate()?;
    if data.nrows() == 0 {
        return Err(Error::Usage("training data is empty".into()));
    }
    let mut model = FlowModel::new(data.ncols(), config.flow, seed)?;
    let mut shuffle_rng = Rng::new(seed).fork(1);
    let mut params = model.params();
    let mut adam = AdamState::new(params.len(), config.adam);
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        adam.hyper.learning_rate = config.learning_rate_at(epoch);
        shuffle_rng.shuffle(&mut order);
        let mut weighted = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = data.select(Axis(0), chunk);
            let (loss, grads) = model.nll_loss_and_grad(batch.view())?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: format!("non-finite loss {loss}"),
                });
            }
            adam.step(&mut params, &grads).map_err(|e| Error::Training {
                epoch,
                reason: e.to_string(),
            })?;
            model.read_params(&params)?;
            weighted += loss * chunk.len() as f64;
        }
        curve.push(weighted / data.nrows() as f64);
    }
    model.set_loss_curve(curve);
    Ok(model)
}

/// Flows trained on the same whitened data, differing only in their seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<FlowModel>,
    whitening: Whitening,
    train_config: TrainConfig,
}

impl Ensemble {
    pub fn new(members: Vec<FlowModel>, whitening: Whitening, train_config: TrainConfig) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::Usage(format!(
                "an ensemble needs at least 2 members, got {}",
                members.len()
            )));
        }
        for (i, member) in members.iter().enumerate() {
            if member.input_dim() != whitening.rank() {
                return Err(Error::member(
                    i,
                    Error::shape("member input", whitening.rank(), member.input_dim()),
                ));
            }
        }
        Ok(Self {
            members,
            whitening,
            train_config,
        })
    }

    pub fn members(&self) -> &[FlowModel] {
        &self.members
    }

    pub fn member_seeds(&self) -> Vec<u64> {
        self.members.iter().map(FlowModel::seed).collect()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn whitening(&self) -> &Whitening {
        &self.whitening
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.train_config
    }

    /// Dimension of the measurements the ensemble scores.
    pub fn input_dim(&self) -> usize {
        self.whitening.dim()
    }

    /// The first `m` members as an ensemble of their own.
    pub fn prefix(&self, m: usize) -> Result<Ensemble> {
        if m > self.members.len() {
            return Err(Error::Usage(format!(
                "prefix of {m} members requested from an ensemble of {}",
                self.members.len()
            )));
        }
        Ensemble::new(self.members[..m].to_vec(), self.whitening.clone(), self.train_config)
    }

    /// Same members in a different order.
    pub fn reordered(&self, order: &[usize]) -> Result<Ensemble> {
        let members = order
            .iter()
            .map(|&i| {
                self.members
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Usage(format!("member index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ensemble::new(members, self.whitening.clone(), self.train_config)
    }

    /// `log p(x | Θ_i)` of a raw measurement under member `i`, including the
    /// Jacobian of the whitening map.
    pub fn member_log_likelihood(&self, member: usize, x: &[f64]) -> Result<f64> {
        let model = self
            .members
            .get(member)
            .ok_or_else(|| Error::Usage(format!("member index {member} out of range")))?;
        let w = self.whitening.transform(x)?;
        Ok(model.log_likelihood(&w)? + self.whitening.log_abs_det())
    }

    /// `rows × members` matrix of log-likelihoods; entries may be non-finite.
    fn log_likelihood_matrix(&self, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let w = self.whitening.transform_batch(xs)?;
        let mut out = Array2::zeros((xs.nrows(), self.members.len()));
        for (i, model) in self.members.iter().enumerate() {
            let lp = model.log_likelihood_batch(w.view())?;
            for (r, v) in lp.into_iter().enumerate() {
                out[[r, i]] = v + self.whitening.log_abs_det();
            }
        }
        Ok(out)
    }
}

/// Trains `n_members` flows on `train_data` after fitting a shared whitening
/// map to it. Member `i` uses seed `mix_seed(base_seed, i)`.
pub fn train_ensemble(
    config: &TrainConfig,
    train_data: ArrayView2<f64>,
    base_seed: u64,
    n_members: usize,
    parallel: bool,
) -> Result<Ensemble> {
    if n_members < 2 {
        return Err(Error::Usage(format!(
            "an ensemble needs at least 2 members, got {n_members}"
        )));
    }
    if train_data.nrows() == 0 {
        return Err(Error::Usage("training data is empty".into()));
    }
    let whitening = Whitening::fit(train_data)?;
    let white = whitening.transform_batch(train_data)?;
    let seeds: Vec<u64> = (0..n_members as u64).map(|i| mix_seed(base_seed, i)).collect();
    let train = |(i, &seed): (usize, &u64)| {
        train_member(config, white.view(), seed).map_err(|e| Error::member(i, e))
    };
    let members = if parallel {
        seeds.par_iter().enumerate().map(train).collect::<Result<Vec<_>>>()?
    } else {
        seeds.iter().enumerate().map(train).collect::<Result<Vec<_>>>()?
    };
    Ensemble::new(members, whitening, *config)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaicScore {
    pub waic: f64,
    pub mean_logp: f64,
    /// Unbiased sample variance over members.
    pub var_logp: f64,
    pub per_member_logp: Vec<f64>,
}

impl WaicScore {
    pub fn from_log_likelihoods(per_member_logp: Vec<f64>) -> Result<Self> {
        let m = per_member_logp.len();
        if m < 2 {
            return Err(Error::Usage(format!("WAIC needs at least 2 members, got {m}")));
        }
        if let Some(i) = per_member_logp.iter().position(|v| !v.is_finite()) {
            return Err(Error::member(
                i,
                Error::Domain(format!("non-finite log-likelihood {}", per_member_logp[i])),
            ));
        }
        let mean_logp = per_member_logp.iter().sum::<f64>() / m as f64;
        let var_logp = per_member_logp
            .iter()
            .map(|v| (v - mean_logp) * (v - mean_logp))
            .sum::<f64>()
            / (m - 1) as f64;
        Ok(Self {
            waic: var_logp - mean_logp,
            mean_logp,
            var_logp,
            per_member_logp,
        })
    }
}

pub fn waic_score(ensemble: &Ensemble, x: &[f64]) -> Result<WaicScore> {
    if x.len() != ensemble.input_dim() {
        return Err(Error::shape("measurement", ensemble.input_dim(), x.len()));
    }
    let lp = ensemble.log_likelihood_matrix(ArrayView2::from_shape((1, x.len()), x).expect("length checked"))?;
    score_row(ensemble, lp.row(0).to_vec(), x)
}

fn score_row(ensemble: &Ensemble, lp: Vec<f64>, x: &[f64]) -> Result<WaicScore> {
    if let Some(i) = lp.iter().position(|v| !v.is_finite()) {
        // Re-run the failing member on the single-row path for a block-tagged error.
        let err = match ensemble.member_log_likelihood(i, x) {
            Err(e) => e,
            Ok(v) => Error::Domain(format!("non-finite log-likelihood {v}")),
        };
        return Err(Error::member(i, err));
    }
    WaicScore::from_log_likelihoods(lp)
}

/// Row-wise [`waic_score`], order preserving. Parallel and serial runs give
/// bitwise identical results.
pub fn waic_batch(ensemble: &Ensemble, xs: ArrayView2<f64>, parallel: bool) -> Result<Vec<WaicScore>> {
    if xs.ncols() != ensemble.input_dim() {
        return Err(Error::shape("measurement", ensemble.input_dim(), xs.ncols()));
    }
    let starts: Vec<usize> = (0..xs.nrows()).step_by(SCORE_CHUNK).collect();
    let score_chunk = |&start: &usize| -> Result<Vec<WaicScore>> {
        let end = (start + SCORE_CHUNK).min(xs.nrows());
        let chunk = xs.slice(s![start..end, ..]);
        let lp = ensemble.log_likelihood_matrix(chunk)?;
        lp.axis_iter(Axis(0))
            .enumerate()
            .map(|(r, row)| {
                let x = chunk.row(r).to_vec();
                score_row(ensemble, row.to_vec(), &x).map_err(|e| Error::row(start + r, e))
            })
            .collect()
    };
    let chunks: Vec<Vec<WaicScore>> = if parallel {
        starts.par_iter().map(score_chunk).collect::<Result<_>>()?
    } else {
        starts.iter().map(score_chunk).collect::<Result<_>>()?
    };
    Ok(chunks.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_variance_score() {
        let s = WaicScore::from_log_likelihoods(vec![-2.0; 5]).unwrap();
        assert_eq!(s.var_logp, 0.0);
        assert_eq!(s.mean_logp, -2.0);
        assert_eq!(s.waic, 2.0);
    }

    #[test]
    fn unbiased_variance_score() {
        let s = WaicScore::from_log_likelihoods(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.var_logp, 1.0);
        assert_eq!(s.mean_logp, 2.0);
        assert_eq!(s.waic, -1.0);
    }

    #[test]
    fn single_member_rejected() {
        assert!(matches!(WaicScore::from_log_likelihoods(vec![1.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn non_finite_names_member() {
        let err = WaicScore::from_log_likelihoods(vec![1.0, f64::NEG_INFINITY, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Member { member: 1, .. }));
    }

    #[test]
    fn learning_rate_halves_each_third() {
        let config = TrainConfig::default();
        assert_eq!(config.learning_rate_at(0), 1e-3);
        assert_eq!(config.learning_rate_at(9), 1e-3);
        assert_eq!(config.learning_rate_at(10), 5e-4);
        assert_eq!(config.learning_rate_at(29), 2.5e-4);
    }

    #[test]
    fn train_ensemble_rejects_single_member() {
        let data = Array2::from_shape_fn((20, 2), |(i, j)| (i * 2 + j) as f64);
        let err = train_ensemble(&TrainConfig::default(), data.view(), 0, 1, false).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }
}
