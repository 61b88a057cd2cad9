//! Band-measurement datasets, deterministic splits, persistence, and the
//! small statistics (PCA, whitening, KDE mode) used by the experiments.

mod checkpoint;
mod io;
mod kde;
mod pca;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};

pub use checkpoint::{config_hash, hex_digest, load_checkpoint, load_ensemble, save_checkpoint, save_ensemble};
pub use io::{load_dataset, save_dataset};
pub use kde::{kde_mode, silverman_bandwidth};
pub use pca::{pca_fit, PcaModel, Whitening};

use crate::error::{Error, Result};
use crate::numcore::Rng;
use crate::simulator::OXYGENATION_L1;

/// Leading `# format=N` version of dataset, checkpoint and manifest files.
pub const FORMAT_VERSION: u32 = 1;

/// Default train fraction, 500k of 550k spectra.
pub const DEFAULT_TRAIN_RATIO: f64 = 500.0 / 550.0;

/// Upper end of the layer-1 oxygenation range kept in the restricted
/// training set; rows above it form the outside cluster of the superset.
pub const SUPPORT_OXYGENATION_MAX: f64 = 0.85;

/// Fraction of the training rows assigned to the restricted training set.
pub const RESTRICTED_TRAIN_FRACTION: f64 = 0.49;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitTag {
    Train,
    Test,
    TrS,
    Sup,
    SupR,
    None,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
            SplitTag::TrS => "tr_s",
            SplitTag::Sup => "sup",
            SplitTag::SupR => "sup_r",
            SplitTag::None => "none",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "train" => SplitTag::Train,
            "test" => SplitTag::Test,
            "tr_s" => SplitTag::TrS,
            "sup" => SplitTag::Sup,
            "sup_r" => SplitTag::SupR,
            "none" => SplitTag::None,
            other => return Err(format!("unknown split tag '{other}'")),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetMeta {
    pub camera: String,
    pub illuminant: String,
    pub seed: u64,
    pub config_hash: String,
}

/// Measurements (`n × d`), optional tissue labels (`n × 8`) and per-row tags.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    measurements: Array2<f64>,
    labels: Option<Array2<f64>>,
    tags: Vec<SplitTag>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(
        measurements: Array2<f64>,
        labels: Option<Array2<f64>>,
        tags: Vec<SplitTag>,
        meta: DatasetMeta,
    ) -> Result<Self> {
        let n = measurements.nrows();
        if measurements.ncols() == 0 {
            return Err(Error::Format("dataset has no measurement columns".into()));
        }
        if tags.len() != n {
            return Err(Error::shape("dataset tags", n, tags.len()));
        }
        if let Some(l) = &labels {
            if l.nrows() != n {
                return Err(Error::shape("dataset labels", n, l.nrows()));
            }
        }
        Ok(Self {
            measurements,
            labels,
            tags,
            meta,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.measurements.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.measurements.ncols()
    }

    pub fn measurements(&self) -> ArrayView2<'_, f64> {
        self.measurements.view()
    }

    pub fn labels(&self) -> Option<ArrayView2<'_, f64>> {
        self.labels.as_ref().map(|l| l.view())
    }

    pub fn tags(&self) -> &[SplitTag] {
        &self.tags
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            measurements: self.measurements.select(Axis(0), indices),
            labels: self.labels.as_ref().map(|l| l.select(Axis(0), indices)),
            tags: indices.iter().map(|&i| self.tags[i]).collect(),
            meta: self.meta.clone(),
        }
    }

    pub fn with_tag(mut self, tag: SplitTag) -> Dataset {
        self.tags.iter_mut().for_each(|t| *t = tag);
        self
    }

    pub fn rows_tagged(&self, tag: SplitTag) -> Dataset {
        let idx: Vec<usize> = (0..self.n_rows()).filter(|&i| self.tags[i] == tag).collect();
        self.select(&idx)
    }

    /// Concatenates datasets with equal dimensions; labels survive only if
    /// every part has them.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Usage("nothing to concatenate".into()))?;
        for p in parts {
            if p.dim() != first.dim() {
                return Err(Error::shape("concatenated dataset", first.dim(), p.dim()));
            }
        }
        let views: Vec<_> = parts.iter().map(|p| p.measurements.view()).collect();
        let measurements = ndarray::concatenate(Axis(0), &views).expect("dims checked");
        let labels = if parts.iter().all(|p| p.labels.is_some()) {
            let views: Vec<_> = parts.iter().map(|p| p.labels.as_ref().unwrap().view()).collect();
            Some(ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Format(e.to_string()))?)
        } else {
            None
        };
        let tags = parts.iter().flat_map(|p| p.tags.iter().copied()).collect();
        Dataset::new(measurements, labels, tags, first.meta.clone())
    }
}

/// Seeded shuffle split into `(train, test)`; `ratio` is the train fraction.
/// Each side keeps the original row order.
pub fn split_train_test(dataset: &Dataset, ratio: f64, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Usage(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    let n = dataset.n_rows();
    let n_train = (ratio * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Usage(format!(
            "split of {n} rows at ratio {ratio} leaves one side empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let (train_idx, test_idx) = order.split_at(n_train);
    let mut train_idx = train_idx.to_vec();
    let mut test_idx = test_idx.to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((
        dataset.select(&train_idx).with_tag(SplitTag::Train),
        dataset.select(&test_idx).with_tag(SplitTag::Test),
    ))
}

/// Restricted training set, superset and restricted superset.
#[derive(Debug, Clone)]
pub struct SupersetSplit {
    pub tr_s: Dataset,
    pub sup: Dataset,
    pub sup_r: Dataset,
    /// Per `sup` row: true when it lies in the outside cluster.
    pub sup_outside: Vec<bool>,
}

/// Splits a labeled training set by layer-1 oxygenation `s1`: `tr_s` is a
/// seeded random 49% of all rows, drawn only from rows with
/// `s1 ≤ 0.85`; `sup` holds every other row (so all rows with `s1 > 0.85`),
/// and `sup_r` is `sup` restricted to `s1 ≤ 0.85`.
pub fn superset_split(train: &Dataset, rng: &mut Rng) -> Result<SupersetSplit> {
    let labels = train
        .labels()
        .ok_or_else(|| Error::Usage("superset split needs tissue-parameter labels".into()))?;
    if labels.ncols() <= OXYGENATION_L1 {
        return Err(Error::shape("label columns", OXYGENATION_L1 + 1, labels.ncols()));
    }
    let n = train.n_rows();
    let s1 = labels.column(OXYGENATION_L1);
    let mut eligible: Vec<usize> = (0..n).filter(|&i| s1[i] <= SUPPORT_OXYGENATION_MAX).collect();
    let target = (RESTRICTED_TRAIN_FRACTION * n as f64).round() as usize;
    let take = target.min(eligible.len());
    if take == 0 || take == n {
        return Err(Error::Usage(format!(
            "superset split of {n} rows leaves one side empty"
        )));
    }
    rng.shuffle(&mut eligible);
    let mut in_tr_s = vec![false; n];
    for &i in &eligible[..take] {
        in_tr_s[i] = true;
    }
    let tr_idx: Vec<usize> = (0..n).filter(|&i| in_tr_s[i]).collect();
    let sup_idx: Vec<usize> = (0..n).filter(|&i| !in_tr_s[i]).collect();
    let sup_r_idx: Vec<usize> = sup_idx
        .iter()
        .copied()
        .filter(|&i| s1[i] <= SUPPORT_OXYGENATION_MAX)
        .collect();
    let sup_outside = sup_idx.iter().map(|&i| s1[i] > SUPPORT_OXYGENATION_MAX).collect();
    Ok(SupersetSplit {
        tr_s: train.select(&tr_idx).with_tag(SplitTag::TrS),
        sup: train.select(&sup_idx).with_tag(SplitTag::Sup),
        sup_r: train.select(&sup_r_idx).with_tag(SplitTag::SupR),
        sup_outside,
    })
}
