use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;
use rand::Rng;

use gdt::loss::{
    build_pair_mask, gdt_nce_grad, gdt_nce_loss, gdt_nce_loss_and_grad, normalize_rows, LossConfig, PairMask,
};
use gdt::rng::keyed_rng;
use gdt::sampler::{sample_batch, SamplingPlan};

fn random_unit_rows(k: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = keyed_rng(seed, &[]);
    let raw = Array2::from_shape_fn((k, d), |_| rng.random_range(-1.0..1.0));
    normalize_rows(raw.view()).unwrap().into_output()
}

/// NT-Xent with the sum-over-positive-pairs convention, written from the
/// pair structure alone.
fn nt_xent(emb: ArrayView2<f64>, partner: &[usize], tau: f64) -> f64 {
    let k = emb.nrows();
    let s = |a: usize, b: usize| emb.row(a).dot(&emb.row(b)) / tau;
    (0..k)
        .map(|a| {
            let denom: f64 = (0..k).filter(|&c| c != a).map(|c| s(a, c).exp()).sum();
            -(s(a, partner[a]).exp() / denom).ln()
        })
        .sum()
}

fn simclr_case(b: usize, d: usize, seed: u64) -> (Array2<f64>, PairMask, Vec<usize>) {
    let plan = SamplingPlan::simclr(b, 50, 50).unwrap();
    let batch = sample_batch(&plan, seed).unwrap();
    let mask = build_pair_mask(&batch, &LossConfig::default()).unwrap();
    let ts = batch.transformations();
    let partner = (0..b).map(|a| (0..b).find(|&c| c != a && ts[c].0[0] == ts[a].0[0]).unwrap()).collect();
    (random_unit_rows(b, d, seed), mask, partner)
}

#[test]
fn four_element_simclr_batch_matches_nt_xent() {
    let (emb, mask, partner) = simclr_case(4, 3, 1);
    let ours = gdt_nce_loss(emb.view(), &mask, &LossConfig::default()).unwrap();
    assert!((ours - nt_xent(emb.view(), &partner, 0.07)).abs() < 1e-10);
}

fn central_difference(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>, h: f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.raw_dim());
    let mut y = x.clone();
    for idx in ndarray::indices(x.raw_dim()) {
        let orig = y[idx];
        y[idx] = orig + h;
        let up = f(&y);
        y[idx] = orig - h;
        let down = f(&y);
        y[idx] = orig;
        g[idx] = (up - down) / (2.0 * h);
    }
    g
}

fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).mapv(|x| x * x).sum().sqrt();
    let scale = a.mapv(|x| x * x).sum().sqrt().max(b.mapv(|x| x * x).sum().sqrt());
    if scale == 0.0 { diff } else { diff / scale }
}

fn random_mask(k: usize, seed: u64) -> PairMask {
    let mut rng = keyed_rng(seed, &[1]);
    let contrast = Array2::from_shape_fn((k, k), |(a, b)| a == b || rng.random_bool(0.3));
    let weight = Array2::from_shape_fn((k, k), |(a, b)| a != b && rng.random_bool(0.8));
    PairMask::new(contrast, weight).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gradient_matches_finite_differences(k in 2usize..=8, d in 2usize..=5, seed in any::<u64>()) {
        // Moderate norms keep the softmax away from saturation, where the
        // gradient vanishes below finite-difference round-off.
        let emb = random_unit_rows(k, d, seed) * 0.4;
        let mask = random_mask(k, seed);
        let cfg = LossConfig::default();
        let g = gdt_nce_grad(emb.view(), &mask, &cfg).unwrap();
        let fd = central_difference(|x| gdt_nce_loss(x.view(), &mask, &cfg).unwrap(), &emb, 1e-5);
        prop_assert!(rel_err(&g, &fd) < 1e-6, "rel err {}", rel_err(&g, &fd));
    }

    #[test]
    fn loss_is_permutation_invariant(k in 2usize..=10, seed in any::<u64>()) {
        let emb = random_unit_rows(k, 4, seed);
        let mask = random_mask(k, seed);
        let mut perm: Vec<usize> = (0..k).collect();
        let mut rng = keyed_rng(seed, &[2]);
        for i in (1..k).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permuted = emb.select(ndarray::Axis(0), &perm);
        let cfg = LossConfig::default();
        let a = gdt_nce_loss(emb.view(), &mask, &cfg).unwrap();
        let b = gdt_nce_loss(permuted.view(), &mask.permuted(&perm), &cfg).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn pulling_a_negative_closer_never_lowers_the_loss(seed in any::<u64>(), t1 in 0.0f64..1.0, dt in 0.0f64..1.0) {
        let (emb, mask, _) = simclr_case(8, 3, seed);
        let cfg = LossConfig::default();
        let a = 0;
        let c = (0..8).find(|&c| !mask.contrast[[a, c]] && mask.weight[[a, c]]).unwrap();
        // A private extra coordinate shared only by rows a and c raises
        // s_ac (and s_ca) without touching any other similarity.
        let lift = |t: f64| {
            let mut e = Array2::zeros((8, 4));
            e.slice_mut(ndarray::s![.., ..3]).assign(&emb);
            e[[a, 3]] = t;
            e[[c, 3]] = t;
            gdt_nce_loss(e.view(), &mask, &cfg).unwrap()
        };
        prop_assert!(lift(t1 + dt) >= lift(t1));
    }

    #[test]
    fn max_shift_does_not_change_the_value(k in 2usize..=10, seed in any::<u64>()) {
        let emb = random_unit_rows(k, 4, seed);
        let mask = random_mask(k, seed);
        let on = LossConfig::default();
        let off = LossConfig { stabilize: false, ..on };
        let a = gdt_nce_loss(emb.view(), &mask, &on).unwrap();
        let b = gdt_nce_loss(emb.view(), &mask, &off).unwrap();
        prop_assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn normalization_backward_matches_finite_differences(k in 1usize..=6, d in 2usize..=5, seed in any::<u64>()) {
        let mut rng = keyed_rng(seed, &[3]);
        let x = Array2::from_shape_fn((k, d), |_| rng.random_range(-2.0..2.0));
        let w = Array2::from_shape_fn((k, d), |_| rng.random_range(-1.0..1.0));
        prop_assume!(x.rows().into_iter().all(|r| r.dot(&r) > 0.1));
        let f = |x: &Array2<f64>| (normalize_rows(x.view()).unwrap().into_output() * &w).sum();
        let g = normalize_rows(x.view()).unwrap().backward(w.view());
        let fd = central_difference(f, &x, 1e-6);
        prop_assert!(rel_err(&g, &fd) < 1e-6);
    }
}

#[test]
fn empty_positive_set_gives_zero_loss_and_gradient() {
    let emb = random_unit_rows(5, 3, 9);
    let mask = PairMask::new(
        Array2::from_shape_fn((5, 5), |(a, b)| a == b),
        Array2::from_shape_fn((5, 5), |(a, b)| a != b),
    )
    .unwrap();
    let (l, g) = gdt_nce_loss_and_grad(emb.view(), &mask, &LossConfig::default()).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.iter().all(|&x| x == 0.0));
}

#[test]
fn unit_rows_are_unchanged_by_normalization() {
    let e = random_unit_rows(4, 3, 2);
    let n = normalize_rows(e.view()).unwrap().into_output();
    assert!((&n - &e).iter().all(|x| x.abs() < 1e-15));
}

