use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};

use super::commands::{loss_table, write_file};
use super::config::Config;
use super::stats::{
    auroc, detect_changepoint, extreme_indices, mean, median, rolling_mean, signed_log, WaicSummary, CHANGEPOINT_WINDOW,
};
use crate::datasets::{pca_fit, split_train_test, superset_split, Dataset, SupersetSplit};
use crate::error::{Error, Result};
use crate::numcore::{mix_seed, Rng};
use crate::simulator::{
    add_noise, apply_camera, make_camera, reflectance_spectrum, sample_tissue_params, simulate_dataset, CameraKind,
    Illuminant, SimulationConfig, OXYGENATION_L1,
};
use crate::waic::{train_ensemble, waic_batch, Ensemble};

const SPLIT_STREAM: u64 = 0x5eed_0001;
const SUPERSET_STREAM: u64 = 0x5eed_0002;
const TRAIN_STREAM: u64 = 0x5eed_0003;
const FIELD_STREAM: u64 = 0x5eed_0004;
const FRAME_NOISE_STREAM: u64 = 0x5eed_0005;
const EVAL_STREAM: u64 = 0x5eed_0006;
const OUTLIER_STREAM: u64 = 0x5eed_0007;

/// Share of superset rows flagged as best / worst in the PCA table.
pub const EXTREME_FRACTION: f64 = 0.02;

fn f(v: f64) -> String {
    format!("{v:.10e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub summaries: Vec<WaicSummary>,
    /// WAIC separating outside-cluster superset rows (positive) from the
    /// restricted superset (negative).
    pub auroc: f64,
    /// `median WAIC(sup_r) − median WAIC(tr_s)`.
    pub median_gap: f64,
    /// Fraction of the worst-WAIC 2% of the superset lying in the outside cluster.
    pub worst_outside_fraction: f64,
    pub best_outside_fraction: f64,
    pub files: Vec<PathBuf>,
}

impl ExperimentReport {
    pub fn summary(&self, split: &str) -> Option<&WaicSummary> {
        self.summaries.iter().find(|s| s.split == split)
    }
}

/// Everything produced by the in-silico superset experiment.
#[derive(Debug, Clone)]
pub struct InsilicoRun {
    pub ensemble: Ensemble,
    pub split: SupersetSplit,
    pub tr_s_waic: Vec<f64>,
    pub sup_waic: Vec<f64>,
    pub report: ExperimentReport,
}

fn waic_values(ensemble: &Ensemble, data: &Dataset, parallel: bool) -> Result<Vec<f64>> {
    Ok(waic_batch(ensemble, data.measurements(), parallel)?
        .into_iter()
        .map(|s| s.waic)
        .collect())
}

/// Simulate, split into restricted training set and superset, train on the
/// restricted set, score both and write the analysis tables into `out`.
pub fn run_insilico(config: &Config, out: &Path, parallel: bool) -> Result<InsilicoRun> {
    let raw = simulate_dataset(&config.simulation(config.rows, config.seed), parallel)?;
    let (train, _test) = split_train_test(&raw, config.train_ratio, &mut Rng::new(config.seed).fork(SPLIT_STREAM))?;
    let split = superset_split(&train, &mut Rng::new(config.seed).fork(SUPERSET_STREAM))?;
    let ensemble = train_ensemble(
        &config.train_config()?,
        split.tr_s.measurements(),
        mix_seed(config.seed, TRAIN_STREAM),
        config.members,
        parallel,
    )?;
    let tr_s_waic = waic_values(&ensemble, &split.tr_s, parallel)?;
    let sup_waic = waic_values(&ensemble, &split.sup, parallel)?;

    let sup_r_waic: Vec<f64> = sup_waic
        .iter()
        .zip(&split.sup_outside)
        .filter(|(_, o)| !**o)
        .map(|(w, _)| *w)
        .collect();
    let outside_waic: Vec<f64> = sup_waic
        .iter()
        .zip(&split.sup_outside)
        .filter(|(_, o)| **o)
        .map(|(w, _)| *w)
        .collect();
    let summaries = vec![
        WaicSummary::new("tr_s", &tr_s_waic)?,
        WaicSummary::new("sup", &sup_waic)?,
        WaicSummary::new("sup_r", &sup_r_waic)?,
        WaicSummary::new("sup_outside", &outside_waic)?,
    ];
    let auroc = auroc(&outside_waic, &sup_r_waic)?;
    let median_gap = median(&sup_r_waic) - median(&tr_s_waic);
    let worst = extreme_indices(&sup_waic, EXTREME_FRACTION, true);
    let best = extreme_indices(&sup_waic, EXTREME_FRACTION, false);
    let outside_share =
        |idx: &[usize]| idx.iter().filter(|&&i| split.sup_outside[i]).count() as f64 / idx.len() as f64;
    let worst_outside_fraction = outside_share(&worst);
    let best_outside_fraction = outside_share(&best);

    let mut files = Vec::new();
    let mut emit = |name: &str, contents: String| -> Result<()> {
        let path = out.join(name);
        write_file(&path, &contents)?;
        files.push(path);
        Ok(())
    };

    let mut scores = String::from("split,index,outside,s1,waic\n");
    let s1 = |d: &Dataset, i: usize| d.labels().map_or(f64::NAN, |l| l[[i, OXYGENATION_L1]]);
    for (i, w) in tr_s_waic.iter().enumerate() {
        let _ = writeln!(scores, "tr_s,{i},0,{},{}", f(s1(&split.tr_s, i)), f(*w));
    }
    for (i, w) in sup_waic.iter().enumerate() {
        let o = u8::from(split.sup_outside[i]);
        let _ = writeln!(scores, "sup,{i},{o},{},{}", f(s1(&split.sup, i)), f(*w));
    }
    emit("insilico_scores.csv", scores)?;

    let mut summary = format!("{}\n", WaicSummary::CSV_HEADER);
    for s in &summaries {
        let _ = writeln!(summary, "{}", s.csv_row());
    }
    emit("insilico_summary.csv", summary)?;

    let pca = pca_fit(train.measurements(), 2)?;
    let mut flags = vec!["none"; sup_waic.len()];
    for &i in &worst {
        flags[i] = "worst2";
    }
    for &i in &best {
        flags[i] = "best2";
    }
    let mut table = String::from("split,index,pc1,pc2,outside,flag\n");
    let tr_proj = pca.project(split.tr_s.measurements())?;
    for (i, p) in tr_proj.axis_iter(Axis(0)).enumerate() {
        let _ = writeln!(table, "tr_s,{i},{},{},0,none", f(p[0]), f(p[1]));
    }
    let sup_proj = pca.project(split.sup.measurements())?;
    for (i, p) in sup_proj.axis_iter(Axis(0)).enumerate() {
        let o = u8::from(split.sup_outside[i]);
        let _ = writeln!(table, "sup,{i},{},{},{o},{}", f(p[0]), f(p[1]), flags[i]);
    }
    emit("insilico_pca.csv", table)?;
    emit("insilico_loss_curves.csv", loss_table(&ensemble))?;

    let mut report = String::from("in-silico superset experiment\n");
    let _ = writeln!(report, "rows_tr_s = {}", split.tr_s.n_rows());
    let _ = writeln!(report, "rows_sup = {}", split.sup.n_rows());
    let _ = writeln!(report, "rows_sup_r = {}", split.sup_r.n_rows());
    let _ = writeln!(report, "members = {}", ensemble.len());
    for s in &summaries {
        let map = s.map.map_or("NA".into(), f);
        let _ = writeln!(report, "{}: median = {} map = {map}", s.split, f(s.median));
    }
    let _ = writeln!(report, "median_gap_sup_r_minus_tr_s = {}", f(median_gap));
    let _ = writeln!(report, "auroc_outside_vs_sup_r = {}", f(auroc));
    let _ = writeln!(report, "worst2_outside_fraction = {}", f(worst_outside_fraction));
    let _ = writeln!(report, "best2_outside_fraction = {}", f(best_outside_fraction));
    emit("report.txt", report)?;

    Ok(InsilicoRun {
        ensemble,
        split,
        tr_s_waic,
        sup_waic,
        report: ExperimentReport {
            summaries,
            auroc,
            median_gap,
            worst_outside_fraction,
            best_outside_fraction,
            files,
        },
    })
}

pub fn run_insilico_experiment(config: &Config, out: &Path, parallel: bool) -> Result<ExperimentReport> {
    Ok(run_insilico(config, out, parallel)?.report)
}

/// Points at `mean + scale · rms_radius · u` for `count` uniformly random
/// unit directions `u`, where `rms_radius` is the root-mean-square distance
/// of the rows of `data` from their mean.
pub fn far_outliers(data: &Dataset, scale: f64, count: usize, seed: u64) -> Array2<f64> {
    let x = data.measurements();
    let centre = x.mean_axis(Axis(0)).expect("non-empty data");
    let rms = ((&x - &centre).mapv(|v| v * v).sum() / x.nrows() as f64).sqrt();
    let mut rng = Rng::new(seed).fork(OUTLIER_STREAM);
    let mut out = Array2::zeros((count, x.ncols()));
    for mut row in out.rows_mut() {
        let dir: Vec<f64> = (0..x.ncols()).map(|_| rng.normal()).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (j, o) in row.iter_mut().enumerate() {
            *o = centre[j] + scale * rms * dir[j] / norm;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneChangeSeries {
    /// Mean WAIC over the region of interest, one value per frame.
    pub roi_mean_waic: Vec<f64>,
    pub detected: Option<usize>,
    pub true_switch: usize,
    /// Mean over the frames before the switch (xenon, mismatched).
    pub mismatched_mean: f64,
    /// Mean over the frames from ten after the switch onwards (led, matched).
    pub matched_mean: f64,
    pub files: Vec<PathBuf>,
}

/// Ensemble trained on 16-band LED simulations watches a fixed tissue field
/// whose illumination switches from xenon to LED at `switch_frame`.
pub fn run_scene_change_experiment(config: &Config, out: &Path, parallel: bool) -> Result<SceneChangeSeries> {
    let (frames, switch, size, roi) = (config.frames, config.switch_frame, config.frame_size, config.roi_size);
    if frames < 4 || switch == 0 || switch >= frames {
        return Err(Error::Usage(format!("need 0 < switch_frame < frames and frames ≥ 4 (got {switch}, {frames})")));
    }
    if roi == 0 || roi > size {
        return Err(Error::Usage(format!("roi_size must lie in 1..={size}, got {roi}")));
    }
    let train = simulate_dataset(
        &SimulationConfig {
            noise_sigma: config.scene_noise_sigma,
            ..SimulationConfig::new(config.scene_train_rows, CameraKind::Ximea16, Illuminant::Led, mix_seed(config.seed, TRAIN_STREAM))
        },
        parallel,
    )?;
    let ensemble = train_ensemble(
        &config.train_config()?,
        train.measurements(),
        mix_seed(config.seed, TRAIN_STREAM),
        config.members,
        parallel,
    )?;

    let xenon = make_camera(CameraKind::Ximea16, Illuminant::Xenon);
    let led = make_camera(CameraKind::Ximea16, Illuminant::Led);
    let field_seed = mix_seed(config.seed, FIELD_STREAM);
    let offset = (size - roi) / 2;
    let roi_pixels: Vec<usize> = (0..size * size)
        .filter(|p| {
            let (r, c) = (p / size, p % size);
            (offset..offset + roi).contains(&r) && (offset..offset + roi).contains(&c)
        })
        .collect();
    let mut clean = Vec::with_capacity(size * size);
    for p in 0..size * size {
        let params = sample_tissue_params(&mut Rng::new(mix_seed(field_seed, p as u64)));
        let spectrum = reflectance_spectrum(&params);
        clean.push((apply_camera(&spectrum, &xenon)?, apply_camera(&spectrum, &led)?));
    }

    let bands = led.n_bands();
    let mut stack = Array2::zeros((frames * roi_pixels.len(), bands));
    let noise_seed = mix_seed(config.seed, FRAME_NOISE_STREAM);
    for frame in 0..frames {
        let frame_seed = mix_seed(noise_seed, frame as u64);
        // Every pixel of the frame is rendered; only the ROI is scored.
        for p in 0..size * size {
            let (x, l) = &clean[p];
            let m = if frame < switch { x } else { l };
            let noisy = add_noise(m, config.scene_noise_sigma, &mut Rng::new(mix_seed(frame_seed, p as u64)));
            if let Ok(k) = roi_pixels.binary_search(&p) {
                let row = frame * roi_pixels.len() + k;
                stack.row_mut(row).assign(&ndarray::ArrayView1::from(&noisy.bands[..]));
            }
        }
    }
    let scores = waic_batch(&ensemble, stack.view(), parallel)?;
    let roi_mean_waic: Vec<f64> = scores
        .chunks(roi_pixels.len())
        .map(|c| c.iter().map(|s| s.waic).sum::<f64>() / c.len() as f64)
        .collect();
    let detected = detect_changepoint(&roi_mean_waic);
    let mismatched_mean = mean(&roi_mean_waic[..switch]);
    let matched_from = (switch + 10).min(frames - 1);
    let matched_mean = mean(&roi_mean_waic[matched_from..]);

    let mut files = Vec::new();
    let compressed: Vec<f64> = roi_mean_waic.iter().map(|&w| signed_log(w)).collect();
    let rolled = rolling_mean(&compressed, CHANGEPOINT_WINDOW);
    let mut series = String::from("frame,illuminant,roi_mean_waic,rolling_signed_log\n");
    for (i, w) in roi_mean_waic.iter().enumerate() {
        let light = if i < switch { "xenon" } else { "led" };
        let _ = writeln!(series, "{i},{light},{},{}", f(*w), f(rolled[i]));
    }
    let path = out.join("scene_series.csv");
    write_file(&path, &series)?;
    files.push(path);
    let path = out.join("scene_loss_curves.csv");
    write_file(&path, &loss_table(&ensemble))?;
    files.push(path);
    let mut report = String::from("scene-change experiment\n");
    let _ = writeln!(report, "frames = {frames}");
    let _ = writeln!(report, "frame_size = {size}");
    let _ = writeln!(report, "roi_size = {roi}");
    let _ = writeln!(report, "true_switch = {switch}");
    let _ = writeln!(report, "detected_switch = {}", detected.map_or("none".into(), |d| d.to_string()));
    let _ = writeln!(report, "mean_waic_mismatched = {}", f(mismatched_mean));
    let _ = writeln!(report, "mean_waic_matched = {}", f(matched_mean));
    let path = out.join("scene_report.txt");
    write_file(&path, &report)?;
    files.push(path);

    Ok(SceneChangeSeries {
        roi_mean_waic,
        detected,
        true_switch: switch,
        mismatched_mean,
        matched_mean,
        files,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub members: usize,
    pub mean_waic_in: f64,
    pub mean_waic_out: f64,
}

/// Trains `sweep_members` flows once and scores in-distribution test data
/// and extra-absorber data with every prefix of 2 or more members.
pub fn run_ensemble_sweep(config: &Config, out: &Path, parallel: bool) -> Result<Vec<SweepRow>> {
    if config.sweep_members < 2 {
        return Err(Error::Usage(format!("sweep needs at least 2 members, got {}", config.sweep_members)));
    }
    let train = simulate_dataset(&config.simulation(config.sweep_train_rows, mix_seed(config.seed, TRAIN_STREAM)), parallel)?;
    let eval_seed = mix_seed(config.seed, EVAL_STREAM);
    let in_dist = simulate_dataset(&config.simulation(config.sweep_eval_rows, eval_seed), parallel)?;
    let out_dist = simulate_dataset(
        &SimulationConfig {
            extra_absorber: Some(config.extra_absorber()),
            ..config.simulation(config.sweep_eval_rows, eval_seed)
        },
        parallel,
    )?;
    let ensemble = train_ensemble(
        &config.train_config()?,
        train.measurements(),
        mix_seed(config.seed, TRAIN_STREAM),
        config.sweep_members,
        parallel,
    )?;
    let mut rows = Vec::new();
    for m in 2..=config.sweep_members {
        let prefix = ensemble.prefix(m)?;
        rows.push(SweepRow {
            members: m,
            mean_waic_in: mean(&waic_values(&prefix, &in_dist, parallel)?),
            mean_waic_out: mean(&waic_values(&prefix, &out_dist, parallel)?),
        });
    }
    let mut table = String::from("members,mean_waic_in,mean_waic_out\n");
    for r in &rows {
        let _ = writeln!(table, "{},{},{}", r.members, f(r.mean_waic_in), f(r.mean_waic_out));
    }
    write_file(&out.join("sweep.csv"), &table)?;
    write_file(&out.join("sweep_loss_curves.csv"), &loss_table(&ensemble))?;
    Ok(rows)
}
