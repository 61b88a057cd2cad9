use std::sync::OnceLock;

use ndarray::{Array1, Array2, Axis};
use waic_flow::datasets::{load_ensemble, save_ensemble, Dataset, DatasetMeta, SplitTag};
use waic_flow::harness::far_outliers;
use waic_flow::numcore::Rng;
use waic_flow::waic::{train_ensemble, train_member, waic_batch, waic_score, Ensemble, TrainConfig};

fn quick_config() -> TrainConfig {
    TrainConfig {
        epochs: 6,
        ..TrainConfig::default()
    }
}

fn unit_cube_data() -> Array2<f64> {
    let mut rng = Rng::new(21);
    Array2::from_shape_simple_fn((3000, 4), || rng.uniform())
}

/// 4-member ensemble on uniform data in the unit cube, trained once.
fn cube_ensemble() -> &'static Ensemble {
    static ENSEMBLE: OnceLock<Ensemble> = OnceLock::new();
    ENSEMBLE.get_or_init(|| train_ensemble(&quick_config(), unit_cube_data().view(), 3, 4, false).unwrap())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn identity_holds_for_every_score() {
    let data = unit_cube_data();
    for s in waic_batch(cube_ensemble(), data.view(), false).unwrap() {
        assert_eq!(s.waic, s.var_logp - s.mean_logp);
    }
}

#[test]
fn far_point_scores_above_training_median() {
    let ensemble = cube_ensemble();
    let data = unit_cube_data();
    let train_median = median(waic_batch(ensemble, data.view(), false).unwrap().iter().map(|s| s.waic).collect());
    let far = waic_score(ensemble, &[100.0; 4]).unwrap();
    assert!(far.waic > train_median, "{} vs {train_median}", far.waic);
}

#[test]
fn member_order_does_not_change_waic() {
    let ensemble = cube_ensemble();
    let reordered = ensemble.reordered(&[2, 0, 3, 1]).unwrap();
    let mut rng = Rng::new(5);
    for _ in 0..50 {
        let x: Vec<f64> = (0..4).map(|_| 2.0 * rng.uniform() - 0.5).collect();
        let a = waic_score(ensemble, &x).unwrap().waic;
        let b = waic_score(&reordered, &x).unwrap().waic;
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn median_waic_grows_along_outward_rays() {
    let ensemble = cube_ensemble();
    let meta = DatasetMeta::default();
    let data = Dataset::new(unit_cube_data(), None, vec![SplitTag::None; 3000], meta).unwrap();
    let medians: Vec<f64> = [1.0, 2.0, 3.0, 4.0, 5.0]
        .iter()
        .map(|&scale| {
            let rays = far_outliers(&data, scale, 50, 77);
            median(waic_batch(ensemble, rays.view(), false).unwrap().iter().map(|s| s.waic).collect())
        })
        .collect();
    for w in medians.windows(2) {
        assert!(w[1] >= w[0], "{medians:?}");
    }
}

#[test]
fn batch_scores_equal_single_scores_bitwise() {
    let ensemble = cube_ensemble();
    let mut rng = Rng::new(8);
    // More rows than one scoring chunk.
    let xs = Array2::from_shape_simple_fn((2500, 4), || rng.uniform());
    let serial = waic_batch(ensemble, xs.view(), false).unwrap();
    let parallel = waic_batch(ensemble, xs.view(), true).unwrap();
    assert_eq!(serial, parallel);
    for r in [0, 1023, 1024, 2499] {
        let single = waic_score(ensemble, xs.row(r).as_slice().unwrap()).unwrap();
        assert_eq!(single, serial[r]);
    }
}

#[test]
fn saved_ensemble_reproduces_log_likelihoods() {
    let ensemble = cube_ensemble();
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_ensemble(ensemble, dir.path()).unwrap();
    let loaded = load_ensemble(&manifest).unwrap();
    assert_eq!(loaded.len(), 4);
    let mut rng = Rng::new(12);
    for _ in 0..100 {
        let x: Vec<f64> = (0..4).map(|_| rng.uniform()).collect();
        for m in 0..4 {
            let a = ensemble.member_log_likelihood(m, &x).unwrap();
            let b = loaded.member_log_likelihood(m, &x).unwrap();
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn training_is_deterministic() {
    let mut rng = Rng::new(1);
    let data = Array2::from_shape_simple_fn((400, 3), || rng.normal());
    let config = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let a = train_member(&config, data.view(), 9).unwrap();
    let b = train_member(&config, data.view(), 9).unwrap();
    assert_eq!(a.params(), b.params());
    assert_eq!(a.loss_curve(), b.loss_curve());
    let c = train_member(&config, data.view(), 10).unwrap();
    assert_ne!(a.params(), c.params());
}

#[test]
fn training_reduces_loss() {
    let mut rng = Rng::new(2);
    let data = Array2::from_shape_simple_fn((2000, 2), || 3.0 * rng.normal() + 1.0);
    let model = train_member(&quick_config(), data.view(), 4).unwrap();
    let curve = model.loss_curve();
    assert_eq!(curve.len(), 6);
    assert!(curve[5] < curve[0]);
}

#[test]
fn likelihood_includes_whitening_jacobian() {
    let ensemble = cube_ensemble();
    let data = unit_cube_data();
    let mean: Array1<f64> = data.mean_axis(Axis(0)).unwrap();
    let x = mean.as_slice().unwrap();
    let w = ensemble.whitening();
    assert_eq!(ensemble.input_dim(), 4);
    assert_eq!(w.rank(), 4);
    let direct = ensemble.members()[0].log_likelihood(&w.transform(x).unwrap()).unwrap() + w.log_abs_det();
    assert_eq!(ensemble.member_log_likelihood(0, x).unwrap(), direct);
}
