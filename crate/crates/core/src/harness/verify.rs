//! Self-contained verification suites run by `gdt verify`.

use ndarray::Array2;
use rand::Rng;
use serde::Serialize;

use crate::encoder::EncoderParams;
use crate::error::{GdtError, Result};
use crate::loss::{build_pair_mask, gdt_nce_loss, gdt_nce_loss_and_grad, LossConfig, PairMask, WeightScheme};
use crate::rng::keyed_rng;
use crate::sampler::{brute_force_pair_counts, predict_pair_counts, sample_batch, validate_batch, SamplingPlan};
use crate::transform::{
    enumerate_factorwise_contrasts, verify_admissibility, ContrastTable, FactorKind, FactorSpec, Violation,
};
use crate::variance::{run_variance_experiment, FiniteLossWorld};
use crate::world::{FactorGains, SyntheticWorld, WorldConfig, AUGMENT, IDENTITY, MODALITY, SHIFT};

pub const SUITES: [&str; 5] = ["admissibility", "counting", "enumeration", "variance", "gradient"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub expected: String,
    pub observed: String,
    pub pass: bool,
}

impl Check {
    fn new(name: impl Into<String>, expected: impl ToString, observed: impl ToString, pass: bool) -> Self {
        Self { name: name.into(), expected: expected.to_string(), observed: observed.to_string(), pass }
    }

    fn eq<T: PartialEq + std::fmt::Debug>(name: impl Into<String>, expected: T, observed: T) -> Self {
        let pass = expected == observed;
        Self::new(name, format!("{expected:?}"), format!("{observed:?}"), pass)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub pass: bool,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}

impl SuiteReport {
    fn new(name: &str, checks: Vec<Check>, details: Option<serde_json::Value>) -> Self {
        Self { name: name.into(), pass: checks.iter().all(|c| c.pass), checks, details }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub pass: bool,
    pub suites: Vec<SuiteReport>,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    /// Restrict to one suite.
    pub suite: Option<String>,
    /// An extra contrast table checked by the admissibility suite.
    pub table: Option<ContrastTable>,
}

pub fn run_verify(opts: &VerifyOptions) -> Result<VerifyReport> {
    let selected: Vec<&str> = match &opts.suite {
        Some(s) if SUITES.contains(&s.as_str()) => vec![s.as_str()],
        Some(s) => {
            return Err(GdtError::Usage(format!("unknown suite `{s}`; expected one of {}", SUITES.join(", "))))
        }
        None => SUITES.to_vec(),
    };
    let suites = selected
        .into_iter()
        .map(|s| match s {
            "admissibility" => admissibility_suite(opts.table.as_ref()),
            "counting" => counting_suite(),
            "enumeration" => enumeration_suite(),
            "variance" => variance_suite(),
            "gradient" => gradient_suite(),
            _ => unreachable!("suite names are checked above"),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VerifyReport { pass: suites.iter().all(|s| s.pass), suites })
}

fn random_specs<R: Rng>(rng: &mut R, max_factors: usize, max_card: usize) -> Vec<FactorSpec> {
    let m = rng.random_range(1..=max_factors);
    (0..m)
        .map(|f| {
            let kind = if rng.random_bool(0.5) { FactorKind::Invariant } else { FactorKind::Distinctive };
            let n = rng.random_range(1..=max_card);
            let k = rng.random_range(1..=n);
            FactorSpec::indexed(format!("f{f}"), kind, n, k).expect("valid by construction")
        })
        .collect()
}

/// Random specs adjusted so the closed-form pair counts apply.
fn random_counting_specs<R: Rng>(rng: &mut R) -> Vec<FactorSpec> {
    let mut branched = false;
    random_specs(rng, 4, 3)
        .into_iter()
        .map(|s| {
            let k = match s.kind() {
                FactorKind::Invariant => {
                    branched |= s.k() >= 2;
                    s.k()
                }
                FactorKind::Distinctive if branched => s.cardinality(),
                FactorKind::Distinctive => s.k(),
            };
            FactorSpec::new(s.name(), s.kind(), s.values().to_vec(), k).expect("k ≤ cardinality")
        })
        .collect()
}

fn admissibility_suite(table: Option<&ContrastTable>) -> Result<SuiteReport> {
    let mut rng = keyed_rng(11, &[]);
    let mut admitted = 0;
    let mut caught = 0;
    let trials = 100;
    for _ in 0..trials {
        let specs = random_specs(&mut rng, 3, 3);
        let mut t = ContrastTable::full_enumeration(&specs);
        if verify_admissibility(&t).admissible {
            admitted += 1;
        }
        let n = t.size();
        let x = rng.random_range(0..n);
        let y = rng.random_range(0..n);
        let (x, y) = (x.min(y), x.max(y));
        let flipped = !t.get(x, y);
        t.set(x, y, flipped);
        let expected = if x == y { Violation::Reflexivity { x } } else { Violation::Symmetry { x, y } };
        if verify_admissibility(&t).witness == Some(expected) {
            caught += 1;
        }
    }
    let mut checks = vec![
        Check::eq("random product tables are admissible", trials, admitted),
        Check::eq("injected single-entry violations are caught", trials, caught),
    ];
    if let Some(t) = table {
        let r = verify_admissibility(t);
        let observed = match r.witness {
            Some(w) => w.to_string(),
            None => "admissible".into(),
        };
        checks.push(Check::new(format!("supplied {}×{} table", t.size(), t.size()), "admissible", observed, r.admissible));
    }
    Ok(SuiteReport::new("admissibility", checks, None))
}

fn counting_suite() -> Result<SuiteReport> {
    let mut checks = Vec::new();
    let simclr = SamplingPlan::simclr(8, 100, 10)?;
    let counts = brute_force_pair_counts(&sample_batch(&simclr, 0)?)?;
    checks.push(Check::eq("SimCLR B=8 nontrivial positives", 8, counts.nontrivial_positive));
    checks.push(Check::eq("SimCLR B=8 negatives per anchor", 6, counts.negatives_per_anchor));
    let mut rng = keyed_rng(12, &[]);
    let (mut agree, mut nondegenerate, mut valid, mut balanced) = (0usize, 0usize, 0usize, 0usize);
    let plans = 200usize;
    for p in 0..plans {
        let plan = SamplingPlan::new(random_counting_specs(&mut rng))?;
        let batch = sample_batch(&plan, p as u64)?;
        if brute_force_pair_counts(&batch)? == predict_pair_counts(&plan) {
            agree += 1;
        }
        let v = validate_batch(&batch);
        balanced += v.balanced as usize;
        let split = |kind| plan.specs().iter().any(|s| s.kind() == kind && s.k() >= 2);
        if split(FactorKind::Invariant) && split(FactorKind::Distinctive) {
            nondegenerate += 1;
            valid += v.all() as usize;
        }
    }
    checks.push(Check::eq("brute-force counts equal predictions", plans, agree));
    checks.push(Check::eq("sampled batches are balanced", plans, balanced));
    checks.push(Check::eq("non-degenerate plans meet requirements (i)-(iii)", nondegenerate, valid));
    Ok(SuiteReport::new("counting", checks, None))
}

fn enumeration_suite() -> Result<SuiteReport> {
    let mut checks = Vec::new();
    for m in 1..=4 {
        let found = enumerate_factorwise_contrasts(m)?;
        checks.push(Check::eq(format!("M={m} admissible monotone contrasts"), 1usize << m, found.len()));
        let products = found.iter().filter(|h| h.as_subset_product().is_some()).count();
        checks.push(Check::eq(format!("M={m} all are subset products"), found.len(), products));
    }
    Ok(SuiteReport::new("enumeration", checks, None))
}

fn variance_suite() -> Result<SuiteReport> {
    let world = FiniteLossWorld::stratified(6, 6, 2, 1.0, 1)?;
    let r = run_variance_experiment(&world, 2, 2, 20_000, 1)?;
    let c = r.checks;
    let checks = vec![
        Check::new(
            "GDT mean within 3 SE of L (full world; fixed strata)",
            format!("{}; {}", r.exact_l, r.strata.grand_mean),
            format!("{}; {}", r.gdt_full.mean, r.gdt.mean),
            c.gdt_unbiased,
        ),
        Check::new(
            "naive mean within 3 SE of L (full world; fixed strata)",
            format!("{}; {}", r.exact_l, r.strata.grand_mean),
            format!("{}; {}", r.naive_full.mean, r.naive.mean),
            c.naive_unbiased,
        ),
        Check::new(
            "GDT variance matches the stratified closed form",
            r.predicted_var_gdt,
            r.gdt.variance,
            c.gdt_variance_matches_closed_form,
        ),
        Check::new("naive variance not below GDT", format!("≥ {}", r.gdt.variance), r.naive.variance, c.naive_not_below_gdt),
    ];
    let details = serde_json::json!({
        "naive_form_match": r.naive_form_match,
        "predicted_var_naive_separate": r.predicted_var_naive_separate,
        "predicted_var_naive_pooled": r.predicted_var_naive_pooled,
        "empirical_var_naive": r.naive.variance,
    });
    Ok(SuiteReport::new("variance", checks, Some(details)))
}

/// Central differences of `f` at `x`.
fn central_differences(mut f: impl FnMut(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut x = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let orig = x[j];
        x[j] = orig + h;
        let up = f(&x)?;
        x[j] = orig - h;
        let down = f(&x)?;
        x[j] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn gradient_suite() -> Result<SuiteReport> {
    let mut rng = keyed_rng(13, &[]);
    let cfg = LossConfig::default();
    let mut worst_emb = 0.0f64;
    for _ in 0..10 {
        let k = rng.random_range(2..=8);
        let d = rng.random_range(2..=5);
        let emb = Array2::from_shape_fn((k, d), |_| rng.random_range(-0.5..0.5));
        let contrast = Array2::from_shape_fn((k, k), |(a, b)| a == b || rng.random_bool(0.3));
        let weight = Array2::from_shape_fn((k, k), |(a, b)| a != b && rng.random_bool(0.8));
        let mask = PairMask::new(contrast, weight)?;
        let (_, grad) = gdt_nce_loss_and_grad(emb.view(), &mask, &cfg)?;
        let fd = central_differences(
            |x| gdt_nce_loss(ndarray::ArrayView2::from_shape((k, d), x).expect("shape").view(), &mask, &cfg),
            emb.as_slice().expect("standard layout"),
            1e-5,
        )?;
        worst_emb = worst_emb.max(relative_error(grad.as_slice().expect("standard layout"), &fd));
    }
    let mut worst_enc = 0.0f64;
    for s in 0..3 {
        let (err, _) = encoder_gradient_error(s)?;
        worst_enc = worst_enc.max(err);
    }
    let checks = vec![
        Check::new("embedding gradient vs central differences", "< 1e-6", worst_emb, worst_emb < 1e-6),
        Check::new("encoder gradient vs central differences", "< 1e-5", worst_enc, worst_enc < 1e-5),
    ];
    Ok(SuiteReport::new("gradient", checks, None))
}

/// Relative error between the analytic and finite-difference parameter
/// gradients of the objective on a small cross-modal batch, and the number of
/// parameters compared.
pub fn encoder_gradient_error(seed: u64) -> Result<(f64, usize)> {
    let world = SyntheticWorld::new(WorldConfig {
        n_identities: 6,
        n_shifts: 3,
        n_augmentations: 4,
        obs_dim: 5,
        identity_code_dim: 3,
        shift_code_dim: 2,
        reversal_code_dim: 1,
        private_code_dim: 2,
        noise_sigma: 0.2,
        factor_gains: FactorGains::default(),
        seed,
    })?;
    let plan = SamplingPlan::new(vec![
        FactorSpec::indexed(IDENTITY, FactorKind::Distinctive, 6, 3)?,
        FactorSpec::indexed(SHIFT, FactorKind::Distinctive, 3, 2)?,
        FactorSpec::new(MODALITY, FactorKind::Invariant, vec!["v".into(), "a".into()], 2)?,
        FactorSpec::indexed(AUGMENT, FactorKind::Invariant, 4, 1)?,
    ])?;
    let cfg = LossConfig { weight_scheme: WeightScheme::CrossModal, ..LossConfig::default() };
    let batch = sample_batch(&plan, seed)?;
    let mask = build_pair_mask(&batch, &cfg)?;
    let views = world.batch_views(&world.bind(&plan)?, &batch)?;
    let params = EncoderParams::init(5, 4, 3, seed)?;
    let (emb, cache) = params.forward(&views)?;
    let (_, up) = gdt_nce_loss_and_grad(emb.view(), &mask, &cfg)?;
    let analytic = params.backward(&cache, up.view())?.to_flat();
    let mut probe = params.clone();
    let fd = central_differences(
        |x| {
            probe.set_flat(x)?;
            gdt_nce_loss(probe.embed(&views)?.view(), &mask, &cfg)
        },
        &params.to_flat(),
        1e-6,
    )?;
    Ok((relative_error(&analytic, &fd), fd.len()))
}
