use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::Config;
use crate::datasets::{load_dataset, load_ensemble, save_dataset, save_ensemble, split_train_test, Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::numcore::Rng;
use crate::simulator::{make_camera, simulate_dataset};
use crate::waic::{train_ensemble, waic_batch, Ensemble, WaicScore};

pub const DATASET_FILE: &str = "dataset.csv";
pub const CAMERA_FILE: &str = "camera.csv";
pub const LOSS_FILE: &str = "loss_curves.csv";
pub const SCORES_FILE: &str = "scores.csv";

/// RNG stream of the train/test split, separate from the per-row streams.
const SPLIT_STREAM: u64 = 0x5eed_0001;

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateOutput {
    pub dataset: PathBuf,
    pub camera_table: PathBuf,
    pub train_rows: usize,
    pub test_rows: usize,
}

/// Simulates `config.rows` labeled spectra, tags a seeded train/test split
/// and writes the dataset plus the camera table.
pub fn cmd_simulate(config: &Config, out: &Path, parallel: bool) -> Result<SimulateOutput> {
    let raw = simulate_dataset(&config.simulation(config.rows, config.seed), parallel)?;
    let mut rng = Rng::new(config.seed).fork(SPLIT_STREAM);
    let (train, test) = split_train_test(&raw, config.train_ratio, &mut rng)?;
    let all = Dataset::concat(&[&train, &test])?;
    ensure_dir(out)?;
    let dataset = out.join(DATASET_FILE);
    save_dataset(&all, &dataset)?;
    let camera_table = out.join(CAMERA_FILE);
    write_file(&camera_table, &make_camera(config.camera, config.illuminant).to_table())?;
    Ok(SimulateOutput {
        dataset,
        camera_table,
        train_rows: train.n_rows(),
        test_rows: test.n_rows(),
    })
}

/// Rows tagged `train` if there are any, otherwise every row.
pub fn training_rows(dataset: &Dataset) -> Dataset {
    if dataset.tags().contains(&SplitTag::Train) {
        dataset.rows_tagged(SplitTag::Train)
    } else {
        dataset.clone()
    }
}

pub fn loss_table(ensemble: &Ensemble) -> String {
    let mut out = String::from("member,epoch,mean_nll\n");
    for (i, m) in ensemble.members().iter().enumerate() {
        for (epoch, loss) in m.loss_curve().iter().enumerate() {
            let _ = writeln!(out, "{i},{epoch},{loss:.16e}");
        }
    }
    out
}

/// Trains `config.members` flows on the training rows of `dataset` and
/// writes the manifest, member checkpoints and loss curves into `out`.
pub fn cmd_train(config: &Config, dataset: &Path, out: &Path, parallel: bool) -> Result<PathBuf> {
    let data = training_rows(&load_dataset(dataset)?);
    if data.is_empty() {
        return Err(Error::Usage(format!("{} has no training rows", dataset.display())));
    }
    let ensemble = train_ensemble(
        &config.train_config()?,
        data.measurements(),
        config.seed,
        config.members,
        parallel,
    )?;
    let manifest = save_ensemble(&ensemble, out)?;
    write_file(&out.join(LOSS_FILE), &loss_table(&ensemble))?;
    Ok(manifest)
}

pub fn score_table(scores: &[WaicScore]) -> String {
    let m = scores.first().map_or(0, |s| s.per_member_logp.len());
    let mut out = String::from("row");
    for i in 0..m {
        let _ = write!(out, ",logp_{i}");
    }
    out.push_str(",mean_logp,var_logp,waic\n");
    for (r, s) in scores.iter().enumerate() {
        let _ = write!(out, "{r}");
        for lp in &s.per_member_logp {
            let _ = write!(out, ",{lp:.16e}");
        }
        let _ = writeln!(out, ",{:.16e},{:.16e},{:.16e}", s.mean_logp, s.var_logp, s.waic);
    }
    out
}

/// Scores every row of `dataset` and writes the score table into `out`.
pub fn cmd_score(manifest: &Path, dataset: &Path, out: &Path, parallel: bool) -> Result<Vec<WaicScore>> {
    let ensemble = load_ensemble(manifest)?;
    let data = load_dataset(dataset)?;
    if data.is_empty() {
        return Err(Error::Usage(format!("{} has no rows to score", dataset.display())));
    }
    if data.dim() != ensemble.input_dim() {
        return Err(Error::Usage(format!(
            "dataset has {} bands but the ensemble was trained on {}",
            data.dim(),
            ensemble.input_dim()
        )));
    }
    let scores = waic_batch(&ensemble, data.measurements(), parallel)?;
    write_file(&out.join(SCORES_FILE), &score_table(&scores))?;
    Ok(scores)
}
