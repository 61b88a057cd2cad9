//! End-to-end acceptance criteria. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array2;
use waic_flow::flow::{numerical_logdet_oracle, FlowConfig, FlowModel};
use waic_flow::harness::{far_outliers, run_ensemble_sweep, run_insilico, run_scene_change_experiment, Config, InsilicoRun};
use waic_flow::numcore::Rng;
use waic_flow::waic::{train_member, waic_batch, TrainConfig};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

/// Model with every parameter nudged away from its initial value.
fn random_model(dim: usize, n_blocks: usize, seed: u64) -> FlowModel {
    let config = FlowConfig {
        n_blocks,
        ..FlowConfig::default()
    };
    let mut model = FlowModel::new(dim, config, seed).unwrap();
    let mut rng = Rng::new(seed ^ 0xabcd);
    let params: Vec<f64> = model.params().iter().map(|p| p + 0.05 * rng.normal()).collect();
    model.read_params(&params).unwrap();
    model
}

fn invertibility() -> Outcome {
    let mut worst = 0.0f64;
    for dim in [8, 16] {
        let model = FlowModel::new(dim, FlowConfig::default(), 100 + dim as u64).unwrap();
        let mut rng = Rng::new(dim as u64);
        let x = Array2::from_shape_simple_fn((1000, dim), || rng.normal());
        let (z, _) = model.forward_batch(x.view()).unwrap();
        let back = model.inverse_batch(z.view()).unwrap();
        worst = worst.max((&back - &x).iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    outcome(worst < 1e-6, format!("max roundtrip error {worst:.3e} (limit 1e-6)"))
}

fn jacobian_exactness() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let model = FlowModel::new(8, FlowConfig::default(), 200 + seed).unwrap();
        let mut rng = Rng::new(seed);
        let x: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let (_, analytic) = model.forward(&x).unwrap();
        let numeric = numerical_logdet_oracle(&model, &x, 1e-5).unwrap();
        let rel = (analytic - numeric).abs() / numeric.abs().max(1e-8);
        worst = worst.max(rel);
    }
    outcome(worst < 1e-4, format!("max relative log-det error {worst:.3e} over 20 models (limit 1e-4)"))
}

fn mean_nll(model: &FlowModel, batch: &Array2<f64>) -> f64 {
    let lp = model.log_likelihood_batch(batch.view()).unwrap();
    -lp.iter().sum::<f64>() / lp.len() as f64
}

fn gradient_exactness() -> Outcome {
    let model = random_model(4, 10, 300);
    let mut rng = Rng::new(3);
    let batch = Array2::from_shape_simple_fn((5, 4), || rng.normal());
    let (_, grad) = model.nll_loss_and_grad(batch.view()).unwrap();
    let mut params = model.params();
    let mut probe = model.clone();
    let h = 1e-5;
    let mut numeric = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + h;
        probe.read_params(&params).unwrap();
        let up = mean_nll(&probe, &batch);
        params[i] = orig - h;
        probe.read_params(&params).unwrap();
        let down = mean_nll(&probe, &batch);
        params[i] = orig;
        numeric[i] = (up - down) / (2.0 * h);
    }
    let diff: f64 = grad.iter().zip(&numeric).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let norm = grad.iter().map(|a| a * a).sum::<f64>().sqrt();
    let rel = diff / norm;
    outcome(
        rel < 1e-3,
        format!("relative gradient error {rel:.3e} over {} parameters (limit 1e-3)", grad.len()),
    )
}

fn density_recovery() -> Outcome {
    let mut rng = Rng::new(11);
    let n = 50_000;
    let c = 0.75f64.sqrt();
    let mut x = Array2::zeros((n, 2));
    for mut row in x.rows_mut() {
        let (a, b) = (rng.normal(), rng.normal());
        row[0] = a;
        row[1] = 0.5 * a + c * b;
    }
    let model = train_member(&TrainConfig::default(), x.view(), 5).unwrap();
    let lp = model.log_likelihood_batch(x.view()).unwrap();
    let nll = -lp.iter().sum::<f64>() / n as f64;
    let e = std::f64::consts::E;
    let optimum = 0.5 * ((2.0 * std::f64::consts::PI * e).powi(2) * 0.75).ln();
    let gap = nll - optimum;
    outcome(
        gap.abs() <= 0.05,
        format!("mean NLL {nll:.4} vs optimum {optimum:.4}, gap {gap:.4} (limit 0.05)"),
    )
}

fn scene_change(out: &Path) -> Outcome {
    let s = run_scene_change_experiment(&Config::default(), out, false).unwrap();
    let detected_ok = s.detected.is_some_and(|d| d.abs_diff(s.true_switch) <= 2);
    let gap = s.mismatched_mean - s.matched_mean;
    outcome(
        detected_ok && gap >= 1.0 && s.roi_mean_waic.len() == 200,
        format!(
            "detected {:?} (true {}), mismatched − matched mean WAIC {gap:.3} (limit ≥ 1)",
            s.detected, s.true_switch
        ),
    )
}

fn ensemble_stability(out: &Path) -> Outcome {
    let rows = run_ensemble_sweep(&Config::default(), out, false).unwrap();
    let at = |m: usize| rows.iter().find(|r| r.members == m).unwrap().mean_waic_in;
    let (m10, m20) = (at(10), at(20));
    let rel = (m10 - m20).abs() / m20.abs();
    outcome(
        rel <= 0.10 && rows.len() == 19,
        format!("mean in-distribution WAIC m=10 {m10:.4}, m=20 {m20:.4}, relative change {rel:.4} (limit 0.10)"),
    )
}

fn sign_convention(run: &InsilicoRun) -> Outcome {
    let mut sorted = run.tr_s_waic.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let rays = far_outliers(&run.split.tr_s, 5.0, 50, 8);
    let scores = waic_batch(&run.ensemble, rays.view(), false).unwrap();
    let above = scores.iter().filter(|s| s.waic > median).count();
    outcome(
        above as f64 >= 0.95 * 50.0,
        format!("{above}/50 far outliers above the training median WAIC (limit 48)"),
    )
}

fn run_cli(args: &[&str], out: &Path) -> bool {
    let status = Command::new(env!("CARGO_BIN_EXE_waic-flow"))
        .args(args)
        .arg("--serial")
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs");
    status.status.success()
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        out.insert(
            path.file_name().unwrap().to_string_lossy().into_owned(),
            fs::read(&path).unwrap(),
        );
    }
    out
}

fn reproducibility(root: &Path) -> Outcome {
    let small = [
        "--set", "rows=1500", "--set", "epochs=2", "--set", "scene_train_rows=800", "--set", "frames=24",
        "--set", "switch_frame=10", "--set", "frame_size=8", "--set", "roi_size=4", "--set", "sweep_members=3",
        "--set", "sweep_train_rows=600", "--set", "sweep_eval_rows=100", "--members", "2",
    ];
    let mut mismatches = Vec::new();
    for run in ["a", "b"] {
        let base = root.join(run);
        let data = base.join("simulate");
        let model = base.join("train");
        let dataset = data.join("dataset.csv");
        let manifest = model.join("manifest.txt");
        let steps: Vec<(&str, Vec<String>)> = vec![
            ("simulate", vec!["simulate".into()]),
            ("train", vec!["train".into(), "--dataset".into(), dataset.display().to_string()]),
            (
                "score",
                vec![
                    "score".into(),
                    "--manifest".into(),
                    manifest.display().to_string(),
                    "--dataset".into(),
                    dataset.display().to_string(),
                ],
            ),
            ("exp-insilico", vec!["exp-insilico".into()]),
            ("exp-scenechange", vec!["exp-scenechange".into()]),
            ("exp-sweep", vec!["exp-sweep".into()]),
        ];
        for (name, args) in steps {
            let mut all: Vec<&str> = args.iter().map(String::as_str).collect();
            all.extend_from_slice(&small);
            if !run_cli(&all, &base.join(name)) {
                mismatches.push(format!("{name} failed in run {run}"));
            }
        }
    }
    let names = ["simulate", "train", "score", "exp-insilico", "exp-scenechange", "exp-sweep"];
    let mut compared = 0;
    for name in names {
        let a = files(&root.join("a").join(name));
        let b = files(&root.join("b").join(name));
        if a != b {
            mismatches.push(format!("{name} outputs differ"));
        }
        compared += a.len();
    }
    outcome(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("6 commands, {compared} output files byte-identical across two serial runs")
        } else {
            mismatches.join("; ")
        },
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let mut results: Vec<(&str, Outcome, Duration, Duration)> = Vec::new();
    let mut check = |name: &'static str, limit_s: u64, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let took = start.elapsed();
        let limit = Duration::from_secs(limit_s);
        let passed = o.passed && took <= limit;
        println!(
            "ACCEPTANCE {name}: {} ({}; {:.1} s, limit {} s)",
            if passed { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            limit_s
        );
        results.push((name, Outcome { passed, detail: o.detail }, took, limit));
    };

    check("1 invertibility", 10, &mut invertibility);
    check("2 jacobian exactness", 30, &mut jacobian_exactness);
    check("3 gradient exactness", 60, &mut gradient_exactness);
    check("4 density recovery", 180, &mut density_recovery);

    let start = Instant::now();
    let run = run_insilico(&Config::default(), &tmp.path().join("insilico"), false).unwrap();
    let insilico_time = start.elapsed().as_secs();
    let r = &run.report;
    let mut a = || {
        let (tr, sr) = (r.summary("tr_s").unwrap().median, r.summary("sup_r").unwrap().median);
        outcome(
            r.median_gap.abs() <= 0.5 && insilico_time <= 900,
            format!(
                "median WAIC tr_s {tr:.3}, sup_r {sr:.3}, gap {:.3} (limit 0.5); {} tr_s rows, experiment {insilico_time} s",
                r.median_gap,
                run.split.tr_s.n_rows()
            ),
        )
    };
    check("5a superset median agreement", 900, &mut a);
    check("5b outside-cluster AUROC", 900, &mut || {
        outcome(r.auroc >= 0.9, format!("AUROC {:.4} (limit 0.9)", r.auroc))
    });
    check("5c worst-2% membership", 900, &mut || {
        outcome(
            r.worst_outside_fraction >= 0.8,
            format!("{:.3} of the worst 2% are outside-cluster rows (limit 0.8)", r.worst_outside_fraction),
        )
    });
    check("6 scene change", 600, &mut || scene_change(&tmp.path().join("scene")));
    check("7 ensemble stability", 1800, &mut || ensemble_stability(&tmp.path().join("sweep")));
    check("8 sign convention", 60, &mut || sign_convention(&run));
    check("9 reproducibility", 600, &mut || reproducibility(&tmp.path().join("repro")));

    let failed: Vec<&str> = results.iter().filter(|r| !r.1.passed).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed",
        results.len() - failed.len(),
        failed.len()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
