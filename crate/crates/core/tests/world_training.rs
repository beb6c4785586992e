use nalgebra::{DMatrix, DVector};
use ndarray::{array, Array1, Array2};
use rayon::prelude::*;

use gdt::encoder::EncoderParams;
use gdt::harness::{builtin_presets, ExperimentConfig};
use gdt::loss::LossConfig;
use gdt::train::{train, TrainConfig};
use gdt::world::{FactorGains, Latent, Modality, SyntheticView, SyntheticWorld, WorldConfig};
use gdt::GdtError;

fn clean_world() -> SyntheticWorld {
    SyntheticWorld::new(WorldConfig { noise_sigma: 0.0, ..WorldConfig::default() }).unwrap()
}

#[test]
fn identity_is_linearly_recoverable_from_every_modality() {
    let w = clean_world();
    let cfg = w.config().clone();
    for m in Modality::ALL {
        let g = w.mixing(m);
        let gm = DMatrix::from_row_slice(g.nrows(), g.ncols(), g.as_slice().unwrap());
        let svd = gm.svd(true, true);
        for i in [0, 17, 63] {
            let x = w.clean_view(Latent { identity: i, shift: 3, reversed: true, modality: m }).unwrap();
            let z = svd.solve(&DVector::from_column_slice(x.observation.as_slice().unwrap()), 1e-12).unwrap();
            let code = w.identity_code(i);
            for d in 0..cfg.identity_code_dim {
                assert!((z[d] / cfg.factor_gains.identity - code[d]).abs() < 1e-9, "modality {m:?}");
            }
        }
    }
}

#[test]
fn views_are_pure_functions_of_latent_and_draw() {
    let a = SyntheticWorld::new(WorldConfig::default()).unwrap();
    let b = SyntheticWorld::new(WorldConfig::default()).unwrap();
    let l = Latent { identity: 5, shift: 2, reversed: false, modality: Modality::A };
    assert_eq!(a.view(l, 11).unwrap(), b.view(l, 11).unwrap());
}

#[test]
fn hand_computed_toy_encoder() {
    let mut p = EncoderParams::zeros(2, 2, 2);
    let b = &mut p.blocks[Modality::V.index()];
    b.w1 = array![[1.0, 0.0], [0.0, 2.0]];
    b.b1 = array![0.0, 0.5];
    b.w2 = array![[1.0, 1.0], [0.0, 1.0]];
    b.b2 = array![0.0, 0.0];
    let view = SyntheticView {
        latent: Latent { identity: 0, shift: 0, reversed: false, modality: Modality::V },
        observation: array![0.5, -1.0],
    };
    // h = (tanh 0.5, tanh(-1.5)); z = (h0 + h1, h1).
    let (h0, h1) = (0.5f64.tanh(), (-1.5f64).tanh());
    let (z0, z1) = (h0 + h1, h1);
    let n = (z0 * z0 + z1 * z1).sqrt();
    let y = p.embed(&[view]).unwrap();
    assert!((y[[0, 0]] - z0 / n).abs() < 1e-15);
    assert!((y[[0, 1]] - z1 / n).abs() < 1e-15);
}

#[test]
fn zero_encoder_is_a_domain_error() {
    let p = EncoderParams::zeros(3, 2, 2);
    let view = SyntheticView {
        latent: Latent { identity: 0, shift: 0, reversed: false, modality: Modality::A },
        observation: Array1::from(vec![1.0, 2.0, 3.0]),
    };
    assert!(matches!(p.embed(&[view]), Err(GdtError::Domain(_))));
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let w = SyntheticWorld::new(WorldConfig::default()).unwrap();
    let p = EncoderParams::init(32, 8, 4, 3).unwrap();
    let views: Vec<_> = (0..6)
        .map(|i| w.view(Latent { identity: i, shift: i % 4, reversed: false, modality: Modality::ALL[i % 3] }, 0).unwrap())
        .collect();
    let (_, cache) = p.forward(&views).unwrap();
    let g = p.backward(&cache, Array2::zeros((6, 4)).view()).unwrap();
    assert!(g.to_flat().iter().all(|&x| x == 0.0));
}

#[test]
fn outputs_are_unit_norm_for_random_params() {
    let w = SyntheticWorld::new(WorldConfig::default()).unwrap();
    for seed in 0..5 {
        let p = EncoderParams::init(32, 24, 16, seed).unwrap();
        let v = w.view(Latent { identity: 1, shift: 1, reversed: true, modality: Modality::T }, 3).unwrap();
        let y = p.embed(&[v]).unwrap();
        assert!((y.row(0).dot(&y.row(0)) - 1.0).abs() < 1e-9);
    }
}

fn quick(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig { epochs, steps_per_epoch: 10, learning_rate: lr, ..TrainConfig::default() }
}

fn setup(preset: &str) -> (SyntheticWorld, gdt::sampler::SamplingPlan, LossConfig) {
    let cfg = ExperimentConfig { k_identity: 8, ..ExperimentConfig::default() };
    let p = cfg.preset(preset).unwrap();
    let world = SyntheticWorld::new(cfg.world.clone()).unwrap();
    let plan = p.plan(&cfg.world, cfg.k_identity).unwrap();
    (world, plan, LossConfig { weight_scheme: p.weight_scheme, ..LossConfig::default() })
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let (w, plan, loss) = setup("row_h");
    let before = train(&w, &plan, &loss, &quick(0, 0.05), 4).unwrap();
    let after = train(&w, &plan, &loss, &quick(3, 0.0), 4).unwrap();
    assert_eq!(before.params, after.params);
    assert!(before.history.epoch_losses.is_empty());
    assert_eq!(after.history.epoch_losses.len(), 3);
}

#[test]
fn training_is_deterministic() {
    let (w, plan, loss) = setup("row_l");
    let a = train(&w, &plan, &loss, &quick(2, 0.05), 9).unwrap();
    let b = train(&w, &plan, &loss, &quick(2, 0.05), 9).unwrap();
    assert_eq!(a.params.to_text(), b.params.to_text());
    assert_eq!(a.history, b.history);
}

#[test]
fn non_finite_loss_names_the_step() {
    let (w, plan, _) = setup("row_a");
    let loss = LossConfig { temperature: 1e-320, ..LossConfig::default() };
    match train(&w, &plan, &loss, &quick(1, 0.05), 0) {
        Err(GdtError::Divergence { step, .. }) => assert_eq!(step, 0),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn ts_invariant_cross_modal_preset_lowers_the_loss_for_five_seeds() {
    let cfg = ExperimentConfig::default();
    let p = cfg.preset("row_h").unwrap();
    let world = SyntheticWorld::new(cfg.world.clone()).unwrap();
    let plan = p.plan(&cfg.world, cfg.k_identity).unwrap();
    let loss = LossConfig { weight_scheme: p.weight_scheme, ..LossConfig::default() };
    let short = TrainConfig { epochs: 10, ..cfg.train };
    let ok: Vec<bool> = (0..5u64)
        .into_par_iter()
        .map(|s| {
            let h = train(&world, &plan, &loss, &short, s).unwrap().history;
            h.final_loss() < h.initial_loss
        })
        .collect();
    assert!(ok.iter().all(|&b| b), "{ok:?}");
}

#[test]
fn every_preset_lowers_the_loss_for_most_seeds() {
    let cfg = ExperimentConfig {
        k_identity: 16,
        train: TrainConfig { epochs: 6, steps_per_epoch: 25, ..TrainConfig::default() },
        ..ExperimentConfig::default()
    };
    let world = SyntheticWorld::new(cfg.world.clone()).unwrap();
    let failures: Vec<String> = builtin_presets()
        .par_iter()
        .filter_map(|p| {
            let plan = p.plan(&cfg.world, cfg.k_identity).unwrap();
            let loss = LossConfig { weight_scheme: p.weight_scheme, ..LossConfig::default() };
            let wins = (0..5u64)
                .filter(|&s| {
                    let h = train(&world, &plan, &loss, &cfg.train, s).unwrap().history;
                    h.final_loss() < h.initial_loss
                })
                .count();
            (wins < 4).then(|| format!("{}: {wins}/5", p.name))
        })
        .collect();
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn shift_blind_world_gives_zero_dispersion() {
    let gains = FactorGains { shift: 0.0, private: 0.0, ..FactorGains::default() };
    let w = SyntheticWorld::new(WorldConfig { noise_sigma: 0.0, factor_gains: gains, ..WorldConfig::default() }).unwrap();
    let p = EncoderParams::init(32, 24, 16, 1).unwrap();
    assert_eq!(gdt::eval::dispersion_across_shifts(&p, &w, 10, 8).unwrap(), 0.0);
    assert!(matches!(gdt::eval::dispersion_across_shifts(&p, &w, 10, 9), Err(GdtError::Domain(_))));
}
