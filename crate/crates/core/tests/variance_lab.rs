use gdt::variance::{
    exact_loss, gdt_estimate, gdt_moments_by_enumeration, naive_estimate, run_variance_experiment,
    stratum_stats, FiniteLossWorld,
};

#[test]
fn constant_world_has_no_variance() {
    let w = FiniteLossWorld::constant(4, 4, 2.5).unwrap();
    let r = run_variance_experiment(&w, 2, 2, 1000, 3).unwrap();
    assert_eq!(r.gdt.variance, 0.0);
    assert_eq!(r.naive.variance, 0.0);
    assert_eq!(r.gdt.mean, 2.5);
    assert!(r.checks.all_pass());
    assert_eq!(r.checks.naive_strictly_above_gdt, None);
}

#[test]
fn exhaustive_draws_recover_the_exact_loss() {
    let w = FiniteLossWorld::random_table(3, 4, 8).unwrap();
    let brute = (0..3)
        .flat_map(|i| (0..4).flat_map(move |v| (0..3).flat_map(move |i2| (0..4).map(move |v2| (i, v, i2, v2)))))
        .map(|(i, v, i2, v2)| w.loss(i, v, i2, v2))
        .sum::<f64>()
        / 144.0;
    assert!((exact_loss(&w) - brute).abs() < 1e-14);
    for seed in 0..5 {
        assert!((gdt_estimate(&w, 3, 4, seed).unwrap() - brute).abs() < 1e-12);
    }
    assert!(naive_estimate(&w, 4, 1, 0).is_err());
}

/// Expected stratified estimate when both sides are drawn without replacement:
/// a pair repeats its invariant value with probability 1/K_I (1/K_V for the
/// distinctive value), against 1/|T| under uniform pair sampling.
fn reuse_weighted_mean(w: &FiniteLossWorld, k_i: usize, k_v: usize) -> f64 {
    let (ni, nv) = (w.n_invariant(), w.n_distinctive());
    let mut sums = [[0.0; 2]; 2];
    let mut counts = [[0usize; 2]; 2];
    for i in 0..ni {
        for i2 in 0..ni {
            for v in 0..nv {
                for v2 in 0..nv {
                    let (a, b) = ((i == i2) as usize, (v == v2) as usize);
                    sums[a][b] += w.loss(i, v, i2, v2);
                    counts[a][b] += 1;
                }
            }
        }
    }
    let p = |same: usize, k: usize, n: usize| match (same, k == n) {
        (1, _) => 1.0 / k as f64,
        (_, true) if n == 1 => 0.0,
        _ => 1.0 - 1.0 / k as f64,
    };
    let mut e = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            if counts[a][b] > 0 {
                e += p(a, k_i, ni) * p(b, k_v, nv) * sums[a][b] / counts[a][b] as f64;
            }
        }
    }
    e
}

#[test]
fn contrastive_embedding_world_behaves_as_predicted() {
    let w = FiniteLossWorld::embedding_nce(6, 6, 4, 0.5, 21).unwrap();
    let r = run_variance_experiment(&w, 2, 2, 20_000, 5).unwrap();

    let (enum_mean, _) = gdt_moments_by_enumeration(&w, 2, 2).unwrap();
    let oracle = reuse_weighted_mean(&w, 2, 2);
    assert!((enum_mean - oracle).abs() < 1e-12);
    assert!((r.gdt_full.mean - oracle).abs() < 3.0 * r.gdt_full.standard_error);
    // Positive pairs sit on the diagonal, which reuse over-weights: the
    // stratified estimate is biased low relative to L on this world.
    assert!(r.exact_l - r.gdt_full.mean > 10.0 * r.gdt_full.standard_error);
    assert!(!r.checks.gdt_unbiased);

    assert!((r.naive_full.mean - r.exact_l).abs() < 3.0 * r.naive_full.standard_error);
    let restricted = w.restrict_distinctive(&r.distinct_sample).unwrap();
    let (_, var) = gdt_moments_by_enumeration(&restricted, 2, 2).unwrap();
    assert!((r.gdt.variance - var).abs() / var < 0.05);
}

#[test]
fn reuse_makes_the_stratified_estimate_noisier_on_a_contrastive_world() {
    let w = FiniteLossWorld::embedding_nce(6, 6, 4, 0.5, 21).unwrap();
    let (_, gdt_var) = gdt_moments_by_enumeration(&w, 2, 2).unwrap();
    // Naive pairs are iid uniform: variance is the pair variance over K_I²K_V².
    let all: Vec<f64> = (0..6)
        .flat_map(|i| (0..6).flat_map(move |v| (0..6).flat_map(move |i2| (0..6).map(move |v2| (i, v, i2, v2)))))
        .map(|(i, v, i2, v2)| w.loss(i, v, i2, v2))
        .collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let naive_var = all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / all.len() as f64 / 16.0;

    let r = run_variance_experiment(&w, 2, 2, 20_000, 5).unwrap();
    assert!((r.gdt_full.variance - gdt_var).abs() / gdt_var < 0.05);
    assert!((r.naive_full.variance - naive_var).abs() / naive_var < 0.05);
    // Every pair in a batch shares draws, so the terms are positively
    // correlated and the ordering seen on stratified worlds reverses.
    assert!(gdt_var > 2.0 * naive_var, "{gdt_var} vs {naive_var}");
}

#[test]
fn stratum_means_average_to_the_restricted_loss() {
    let w = FiniteLossWorld::random_table(5, 5, 2).unwrap();
    let s = stratum_stats(&w, &[4, 1, 2]).unwrap();
    let r = w.restrict_distinctive(&[4, 1, 2]).unwrap();
    assert!((s.grand_mean - exact_loss(&r)).abs() < 1e-12);
    assert!(stratum_stats(&w, &[1, 1]).is_err());
}
