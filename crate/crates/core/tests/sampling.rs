use std::collections::{HashMap, HashSet};

use proptest::prelude::*;

use gdt::sampler::{
    brute_force_pair_counts, isolated_variation_counts, predict_pair_counts, sample_batch, validate_batch, Batch,
    SamplingPlan,
};
use gdt::transform::{FactorKind, FactorSpec};
use gdt::GdtError;

fn kind() -> impl Strategy<Value = FactorKind> {
    prop_oneof![Just(FactorKind::Invariant), Just(FactorKind::Distinctive)]
}

/// Plans with `M ≤ 4`, `K_m ≤ 3`, adjusted so distinctive factors below an
/// invariant split are sampled exhaustively.
fn exact_plans() -> impl Strategy<Value = SamplingPlan> {
    prop::collection::vec((kind(), 1usize..=3, 1usize..=3), 1..=4).prop_map(|fs| {
        let mut branched = false;
        let specs = fs
            .into_iter()
            .enumerate()
            .map(|(i, (kind, n, k))| {
                let k = k.min(n);
                let k = match kind {
                    FactorKind::Invariant => {
                        branched |= k >= 2;
                        k
                    }
                    FactorKind::Distinctive if branched => n,
                    FactorKind::Distinctive => k,
                };
                FactorSpec::indexed(format!("f{i}"), kind, n, k).unwrap()
            })
            .collect();
        SamplingPlan::new(specs).unwrap()
    })
}

fn any_plans() -> impl Strategy<Value = SamplingPlan> {
    prop::collection::vec((kind(), 1usize..=5, 1usize..=3), 1..=4).prop_map(|fs| {
        let specs = fs
            .into_iter()
            .enumerate()
            .map(|(i, (kind, n, k))| FactorSpec::indexed(format!("f{i}"), kind, n, k.min(n)).unwrap())
            .collect();
        SamplingPlan::new(specs).unwrap()
    })
}

/// Brute-force oracle independent of the library's counting: tally ordered
/// pairs by comparing distinctive coordinates directly.
fn oracle_counts(batch: &Batch) -> (usize, usize, Vec<usize>) {
    let ts = batch.transformations();
    let distinct: Vec<usize> = batch
        .plan()
        .specs()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.kind() == FactorKind::Distinctive)
        .map(|(m, _)| m)
        .collect();
    let pos = |a: usize, b: usize| distinct.iter().all(|&m| ts[a].0[m] == ts[b].0[m]);
    let k = ts.len();
    let total = (0..k).flat_map(|a| (0..k).map(move |b| (a, b))).filter(|&(a, b)| pos(a, b)).count();
    let trivial = (0..k).filter(|&a| pos(a, a)).count();
    let negatives = (0..k).map(|a| (0..k).filter(|&b| !pos(a, b)).count()).collect();
    (total, trivial, negatives)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn counts_match_closed_form_for_many_seeds(plan in exact_plans()) {
        let predicted = predict_pair_counts(&plan);
        for seed in 0..100 {
            let batch = sample_batch(&plan, seed).unwrap();
            let (total, trivial, negatives) = oracle_counts(&batch);
            prop_assert_eq!(total, predicted.total_positive);
            prop_assert_eq!(trivial, predicted.trivial_positive);
            prop_assert!(negatives.iter().all(|&n| n == predicted.negatives_per_anchor));
            prop_assert_eq!(brute_force_pair_counts(&batch).unwrap(), predicted);
        }
    }

    #[test]
    fn batches_are_balanced_and_distinct(plan in any_plans(), seed in any::<u64>()) {
        let batch = sample_batch(&plan, seed).unwrap();
        let k = plan.batch_size();
        prop_assert_eq!(batch.len(), k);
        let uniq: HashSet<_> = batch.transformations().iter().collect();
        prop_assert_eq!(uniq.len(), k);
        let mut below = k;
        for m in 0..plan.m() {
            below /= plan.specs()[m].k();
            let mut groups: HashMap<&[usize], usize> = HashMap::new();
            for t in batch.transformations() {
                *groups.entry(&t.0[..=m]).or_default() += 1;
            }
            prop_assert!(groups.values().all(|&c| c == below), "level {}", m);
        }
        prop_assert!(validate_batch(&batch).balanced);
    }

    #[test]
    fn sampling_is_deterministic(plan in any_plans(), seed in any::<u64>()) {
        let a = sample_batch(&plan, seed).unwrap();
        let b = sample_batch(&plan, seed).unwrap();
        prop_assert_eq!(a.to_text(), b.to_text());
        prop_assert_eq!(a.transformations(), b.transformations());
    }

    #[test]
    fn text_form_round_trips(plan in any_plans(), seed in any::<u64>()) {
        let a = sample_batch(&plan, seed).unwrap();
        let b = Batch::parse_text(plan.clone(), &a.to_text()).unwrap();
        prop_assert_eq!(a.transformations(), b.transformations());
    }

    #[test]
    fn non_degenerate_plans_meet_all_requirements(plan in exact_plans(), seed in any::<u64>()) {
        let split = |kind| plan.specs().iter().any(|s| s.kind() == kind && s.k() >= 2);
        prop_assume!(split(FactorKind::Invariant) && split(FactorKind::Distinctive));
        prop_assert!(validate_batch(&sample_batch(&plan, seed).unwrap()).all());
    }
}

#[test]
fn two_two_one_plan_has_four_members() {
    let plan = SamplingPlan::new(vec![
        FactorSpec::indexed("a", FactorKind::Distinctive, 3, 2).unwrap(),
        FactorSpec::indexed("b", FactorKind::Invariant, 3, 2).unwrap(),
        FactorSpec::indexed("c", FactorKind::Invariant, 3, 1).unwrap(),
    ])
    .unwrap();
    assert_eq!(sample_batch(&plan, 5).unwrap().len(), 4);
}

#[test]
fn oversized_k_is_a_plan_error() {
    let spec = FactorSpec::new("a", FactorKind::Distinctive, vec!["x".into(), "y".into()], 3);
    assert!(matches!(spec, Err(GdtError::Plan(_))));
}

#[test]
fn degenerate_plans_are_flagged() {
    let all_invariant = SamplingPlan::new(vec![FactorSpec::indexed("g", FactorKind::Invariant, 4, 3).unwrap()]).unwrap();
    assert!(!validate_batch(&sample_batch(&all_invariant, 0).unwrap()).req_iii);
    let single = SamplingPlan::new(vec![FactorSpec::indexed("i", FactorKind::Distinctive, 4, 1).unwrap()]).unwrap();
    let b = sample_batch(&single, 0).unwrap();
    assert!(!validate_batch(&b).req_ii);
    let c = brute_force_pair_counts(&b).unwrap();
    assert_eq!((c.total_positive, c.trivial_positive, c.nontrivial_positive, c.negatives_per_anchor), (1, 1, 0, 0));
}

#[test]
fn isolated_variations_follow_the_hierarchy() {
    // Augmentations are drawn per image from a large pool, so a change of
    // image alone is rare (absent for this seed).
    let plan = SamplingPlan::simclr(16, 100, 1000).unwrap();
    let b = sample_batch(&plan, 3).unwrap();
    let iso = isolated_variation_counts(&b);
    assert_eq!(iso[0], 0);
    assert_eq!(iso[1], 16);
}
