use ndarray::Array2;
use proptest::prelude::*;
use waic_flow::datasets::{pca_fit, split_train_test, superset_split, Dataset, DatasetMeta, SplitTag};
use waic_flow::flow::{CouplingBlock, FlowConfig, FlowModel, Permutation};
use waic_flow::numcore::Rng;
use waic_flow::simulator::{
    apply_camera, make_camera, reflectance_spectrum, CameraKind, Illuminant, TissueParams, OXYGENATION_L1,
};

fn perturbed_model(dim: usize, config: FlowConfig, seed: u64, scale: f64) -> FlowModel {
    let mut model = FlowModel::new(dim, config, seed).unwrap();
    let mut rng = Rng::new(seed.wrapping_add(1));
    let params: Vec<f64> = model.params().iter().map(|p| p + scale * rng.normal()).collect();
    model.read_params(&params).unwrap();
    model
}

fn tissue() -> impl Strategy<Value = TissueParams> {
    (
        prop::array::uniform3(0.0f64..=0.3),
        prop::array::uniform3(0.0f64..=1.0),
        5.0f64..=50.0,
        0.3f64..=3.0,
    )
        .prop_map(|(v, s, a, b)| TissueParams {
            blood_volume: v,
            oxygenation: s,
            scattering_amplitude: a,
            scattering_power: b,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn full_models_are_bijective(seed in 0u64..1000, dim in prop::sample::select(vec![8usize, 16])) {
        let model = perturbed_model(dim, FlowConfig::default(), seed, 0.05);
        let mut rng = Rng::new(seed);
        // Standard normal inputs match the scale of whitened data.
        let x: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let (z, _) = model.forward(&x).unwrap();
        let back = model.inverse(&z).unwrap();
        let err = x.iter().zip(&back).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        prop_assert!(err < 1e-6, "{}", err);
    }

    #[test]
    fn coupling_scale_within_clamp(seed in 0u64..1000, alpha in 0.5f64..3.0, spread in 1.0f64..50.0) {
        let mut rng = Rng::new(seed);
        let mut block = CouplingBlock::random(6, 16, alpha, &mut rng).unwrap();
        // Blow up the last layer so raw scales far exceed the clamp.
        for w in block.subnet_mut().layers_mut()[2].weight.iter_mut() {
            *w *= spread;
        }
        let x: Vec<f64> = (0..6).map(|_| 5.0 * rng.normal()).collect();
        let (y, logdet) = block.forward(&x).unwrap();
        let split = block.split();
        for j in split..6 {
            let t_only = block.forward(&[&x[..split], &vec![0.0; 6 - split][..]].concat()).unwrap().0[j];
            // Per-coordinate scale is (y − t) / x.
            if x[j].abs() < 1e-3 {
                continue;
            }
            let scale = (y[j] - t_only) / x[j];
            // tanh saturates to exactly ±1 in floating point, so allow rounding at the ends.
            let tol = 1e-9;
            prop_assert!(scale > (-alpha).exp() * (1.0 - tol) && scale < alpha.exp() * (1.0 + tol), "{} vs α {}", scale, alpha);
        }
        prop_assert!(logdet.abs() <= alpha * (6 - split) as f64);
    }

    #[test]
    fn extra_identity_permutations_are_neutral(seed in 0u64..1000) {
        let mut rng = Rng::new(seed);
        let config = FlowConfig { n_blocks: 3, ..FlowConfig::default() };
        let identity = FlowModel::identity(5, config).unwrap();
        let blocks: Vec<CouplingBlock> = identity.blocks().to_vec();
        let perms: Vec<Permutation> = (0..3).map(|_| Permutation::shuffled(5, &mut rng)).collect();
        let shuffled = FlowModel::from_parts(blocks, perms).unwrap();
        let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let a = identity.log_likelihood(&x).unwrap();
        let b = shuffled.log_likelihood(&x).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn band_measurements_normalized(p in tissue()) {
        let spectrum = reflectance_spectrum(&p);
        prop_assert!(spectrum.reflectance.iter().all(|&r| r > 0.0 && r <= 1.0));
        for kind in [CameraKind::SpectroCam8, CameraKind::Ximea16] {
            for light in [Illuminant::Xenon, Illuminant::Led] {
                let m = apply_camera(&spectrum, &make_camera(kind, light)).unwrap();
                prop_assert!(m.bands.iter().all(|&b| b >= 0.0));
                prop_assert!((m.bands.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pca_projection_never_expands_distances(seed in 0u64..1000, k in 1usize..=4) {
        let mut rng = Rng::new(seed);
        let data = Array2::from_shape_simple_fn((60, 5), || rng.normal());
        let pca = pca_fit(data.view(), k).unwrap();
        let proj = pca.project(data.view()).unwrap();
        for (i, j) in [(0, 1), (2, 30), (10, 59)] {
            let d_in = (&data.row(i) - &data.row(j)).mapv(|v| v * v).sum().sqrt();
            let d_out = (&proj.row(i) - &proj.row(j)).mapv(|v| v * v).sum().sqrt();
            prop_assert!(d_out <= d_in + 1e-10);
        }
    }

    #[test]
    fn splits_are_seeded_partitions(seed in 0u64..1000, n in 20usize..300) {
        let mut rng = Rng::new(seed);
        let m = Array2::from_shape_fn((n, 8), |(i, _)| i as f64);
        let labels = Array2::from_shape_simple_fn((n, 8), || rng.uniform());
        let ds = Dataset::new(m, Some(labels), vec![SplitTag::None; n], DatasetMeta::default()).unwrap();

        let (a, b) = split_train_test(&ds, 0.7, &mut Rng::new(seed)).unwrap();
        let (a2, _) = split_train_test(&ds, 0.7, &mut Rng::new(seed)).unwrap();
        prop_assert_eq!(&a, &a2);
        let mut ids: Vec<usize> = a.measurements().column(0).iter().chain(b.measurements().column(0).iter()).map(|v| *v as usize).collect();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..n).collect::<Vec<_>>());

        let split = superset_split(&ds, &mut Rng::new(seed)).unwrap();
        let s1 = |d: &Dataset| d.labels().unwrap().column(OXYGENATION_L1).to_vec();
        let tr_max = s1(&split.tr_s).into_iter().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(tr_max <= 0.85);
        prop_assert!(s1(&split.sup_r).iter().all(|&s| s <= 0.85));
        for (s, outside) in s1(&split.sup).iter().zip(&split.sup_outside) {
            prop_assert_eq!(*outside, *s > 0.85);
            if *outside {
                prop_assert!(*s > tr_max);
            }
        }
        prop_assert_eq!(split.tr_s.n_rows() + split.sup.n_rows(), n);
    }
}

#[test]
fn small_network_gradients_match_finite_differences() {
    // 2 blocks on 4 inputs with hidden width 4: 104 parameters.
    let config = FlowConfig {
        n_blocks: 2,
        hidden_width: 4,
        clamp_alpha: 2.0,
    };
    for seed in 0..5 {
        let model = perturbed_model(4, config, seed, 0.3);
        assert!(model.n_params() <= 200);
        let mut rng = Rng::new(seed + 100);
        let batch = Array2::from_shape_simple_fn((3, 4), || rng.normal());
        let (_, grad) = model.nll_loss_and_grad(batch.view()).unwrap();
        let mut params = model.params();
        let mut probe = model.clone();
        let h = 1e-6;
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + h;
            probe.read_params(&params).unwrap();
            let up = probe.nll_loss_and_grad(batch.view()).unwrap().0;
            params[i] = orig - h;
            probe.read_params(&params).unwrap();
            let down = probe.nll_loss_and_grad(batch.view()).unwrap().0;
            params[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (grad[i] - numeric).abs() / (grad[i].abs() + numeric.abs()).max(1e-8);
            assert!(rel < 1e-3, "seed {seed} param {i}: {} vs {numeric}", grad[i]);
        }
    }
}
