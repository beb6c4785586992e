//! Hierarchical batch sampling.
//!
//! `K_1` values of the first factor are drawn without replacement; then, for
//! every node of the tree built so far, `K_m` values of factor `m` are drawn
//! without replacement, independently per branch. The leaves are the `K =
//! ∏ K_m` transformations of the batch.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{GdtError, Result};
use crate::rng::{keyed_rng, sample_without_replacement};
use crate::transform::{composed_contrast_unchecked, FactorKind, FactorSpec, GDTransformation};

/// Factor specs in sampling order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPlan {
    specs: Vec<FactorSpec>,
}

impl SamplingPlan {
    pub fn new(specs: Vec<FactorSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(GdtError::Plan("a plan needs at least one factor".into()));
        }
        for s in &specs {
            if s.k() == 0 || s.k() > s.cardinality() {
                return Err(GdtError::Plan(format!(
                    "factor `{}`: K = {} with {} values",
                    s.name(),
                    s.k(),
                    s.cardinality()
                )));
            }
        }
        Ok(Self { specs })
    }

    /// `i` distinctive with `K = B/2`, one augmentation factor with `K = 2`.
    pub fn simclr(batch_size: usize, n_images: usize, n_augmentations: usize) -> Result<Self> {
        if batch_size % 2 != 0 {
            return Err(GdtError::Plan(format!("SimCLR batch size {batch_size} is odd")));
        }
        Self::new(vec![
            FactorSpec::indexed("identity", FactorKind::Distinctive, n_images, batch_size / 2)?,
            FactorSpec::indexed("augment", FactorKind::Invariant, n_augmentations, 2)?,
        ])
    }

    pub fn specs(&self) -> &[FactorSpec] {
        &self.specs
    }

    pub fn m(&self) -> usize {
        self.specs.len()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name() == name)
    }

    /// `K = ∏ K_m`.
    /// True when every distinctive factor that follows an invariant factor
    /// with `K ≥ 2` is sampled exhaustively. Otherwise sibling branches can
    /// draw different distinctive values, and the positive set of an anchor
    /// depends on the draw.
    pub fn counts_are_exact(&self) -> bool {
        let mut branched_invariant = false;
        for s in &self.specs {
            match s.kind() {
                FactorKind::Invariant => branched_invariant |= s.k() >= 2,
                FactorKind::Distinctive => {
                    if branched_invariant && s.k() < s.cardinality() {
                        return false;
                    }
                }
            }
        }
        true
    }

    pub fn batch_size(&self) -> usize {
        self.specs.iter().map(FactorSpec::k).product()
    }

    /// `K_I`, the product over invariant factors.
    pub fn k_invariant(&self) -> usize {
        self.k_of(FactorKind::Invariant)
    }

    /// `K_D`, the product over distinctive factors.
    pub fn k_distinctive(&self) -> usize {
        self.k_of(FactorKind::Distinctive)
    }

    fn k_of(&self, kind: FactorKind) -> usize {
        self.specs.iter().filter(|s| s.kind() == kind).map(FactorSpec::k).product()
    }
}

/// A sampled batch together with its sampling tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    plan: SamplingPlan,
    transformations: Vec<GDTransformation>,
    /// `tree[m][node]` is the index of the node's parent at level `m - 1`
    /// (the root for `m = 0`, encoded as 0). Leaves are level `M - 1` in the
    /// same order as `transformations`.
    tree: Vec<Vec<usize>>,
}

impl Batch {
    pub fn plan(&self) -> &SamplingPlan {
        &self.plan
    }

    pub fn transformations(&self) -> &[GDTransformation] {
        &self.transformations
    }

    pub fn tree(&self) -> &[Vec<usize>] {
        &self.tree
    }

    pub fn len(&self) -> usize {
        self.transformations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transformations.is_empty()
    }

    pub fn contrast(&self, a: usize, b: usize) -> bool {
        composed_contrast_unchecked(
            self.plan.specs(),
            &self.transformations[a],
            &self.transformations[b],
        )
    }

    /// A batch built from an explicit transformation list (no sampling
    /// tree). Used for golden files and hand-built fixtures.
    pub fn from_transformations(
        plan: SamplingPlan,
        transformations: Vec<GDTransformation>,
    ) -> Result<Self> {
        for t in &transformations {
            t.conforms(plan.specs())?;
        }
        Ok(Self { plan, transformations, tree: Vec::new() })
    }

    /// One transformation per line, factor labels tab-separated, preceded
    /// by a `#`-header naming the factors.
    pub fn to_text(&self) -> String {
        let specs = self.plan.specs();
        let mut out = String::from("#");
        out.push_str(&specs.iter().map(FactorSpec::name).collect::<Vec<_>>().join("\t"));
        out.push('\n');
        for t in &self.transformations {
            let line: Vec<&str> =
                specs.iter().zip(t.factors()).map(|(s, &v)| s.values()[v].as_str()).collect();
            let _ = writeln!(out, "{}", line.join("\t"));
        }
        out
    }

    /// Inverse of [`Batch::to_text`] for a known plan.
    pub fn parse_text(plan: SamplingPlan, text: &str) -> Result<Self> {
        let specs = plan.specs();
        let mut transformations = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                let names: Vec<&str> = header.split('\t').collect();
                let expected: Vec<&str> = specs.iter().map(FactorSpec::name).collect();
                if names != expected {
                    return Err(GdtError::Parse(format!(
                        "line {}: header {names:?} does not match plan {expected:?}",
                        lineno + 1
                    )));
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != specs.len() {
                return Err(GdtError::Parse(format!(
                    "line {}: {} fields, expected {}",
                    lineno + 1,
                    fields.len(),
                    specs.len()
                )));
            }
            let t = specs
                .iter()
                .zip(&fields)
                .map(|(s, f)| {
                    s.index_of(f).ok_or_else(|| {
                        GdtError::Parse(format!(
                            "line {}: `{f}` is not a value of `{}`",
                            lineno + 1,
                            s.name()
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            transformations.push(GDTransformation(t));
        }
        Self::from_transformations(plan, transformations)
    }
}

/// Draws a batch by recursive without-replacement sampling.
///
/// Each node's draw uses a stream keyed on `(seed, path to the node)`, so
/// the batch is a pure function of `(plan, seed)`.
pub fn sample_batch(plan: &SamplingPlan, seed: u64) -> Result<Batch> {
    // (path from root, partial transformation)
    let mut frontier: Vec<(Vec<u64>, Vec<usize>)> = vec![(Vec::new(), Vec::new())];
    let mut tree = Vec::with_capacity(plan.m());
    for spec in plan.specs() {
        if spec.k() > spec.cardinality() {
            return Err(GdtError::Plan(format!(
                "factor `{}`: cannot draw {} of {} values without replacement",
                spec.name(),
                spec.k(),
                spec.cardinality()
            )));
        }
        let mut next = Vec::with_capacity(frontier.len() * spec.k());
        let mut parents = Vec::with_capacity(frontier.len() * spec.k());
        for (parent, (path, prefix)) in frontier.iter().enumerate() {
            let mut rng = keyed_rng(seed, path);
            let draws = sample_without_replacement(&mut rng, spec.cardinality(), spec.k());
            for (child, v) in draws.into_iter().enumerate() {
                let mut p = path.clone();
                p.push(child as u64);
                let mut t = prefix.clone();
                t.push(v);
                next.push((p, t));
                parents.push(parent);
            }
        }
        tree.push(parents);
        frontier = next;
    }
    let transformations = frontier.into_iter().map(|(_, t)| GDTransformation(t)).collect();
    Ok(Batch { plan: plan.clone(), transformations, tree })
}

/// Ordered-pair statistics of the contrast over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub total_positive: usize,
    pub trivial_positive: usize,
    pub nontrivial_positive: usize,
    pub negatives_per_anchor: usize,
}

/// Closed-form counts: `K·K_I` positives of which `K` are trivial, and
/// `K − K_I` negatives for every anchor.
///
/// Exact whenever [`SamplingPlan::counts_are_exact`] holds.
pub fn predict_pair_counts(plan: &SamplingPlan) -> PairCounts {
    let k = plan.batch_size();
    let ki = plan.k_invariant();
    PairCounts {
        total_positive: k * ki,
        trivial_positive: k,
        nontrivial_positive: k * (ki - 1),
        negatives_per_anchor: k - ki,
    }
}

/// Counts by evaluating the contrast on all `K²` ordered pairs.
pub fn brute_force_pair_counts(batch: &Batch) -> Result<PairCounts> {
    let k = batch.len();
    let mut counts = PairCounts {
        total_positive: 0,
        trivial_positive: 0,
        nontrivial_positive: 0,
        negatives_per_anchor: 0,
    };
    let mut negatives: Option<usize> = None;
    for a in 0..k {
        let mut neg = 0;
        for b in 0..k {
            if batch.contrast(a, b) {
                counts.total_positive += 1;
                if batch.transformations[a] == batch.transformations[b] {
                    counts.trivial_positive += 1;
                } else {
                    counts.nontrivial_positive += 1;
                }
            } else {
                neg += 1;
            }
        }
        match negatives {
            None => negatives = Some(neg),
            Some(n) if n != neg => {
                return Err(GdtError::Invariant(format!(
                    "anchor {a} has {neg} negatives, anchor 0 has {n}"
                )))
            }
            Some(_) => {}
        }
    }
    counts.negatives_per_anchor = negatives.unwrap_or(0);
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchValidation {
    /// Some pair has `c = 1`.
    pub req_i: bool,
    /// Some pair `T ≠ T'` has `c = 1`.
    pub req_ii: bool,
    /// Every `T` has a `T''` with `c(T, T'') = 0`.
    pub req_iii: bool,
    /// Every level-`m` prefix is shared by exactly `K / (K_1⋯K_m)` members.
    pub balanced: bool,
}

impl BatchValidation {
    pub fn all(&self) -> bool {
        self.req_i && self.req_ii && self.req_iii && self.balanced
    }
}

pub fn validate_batch(batch: &Batch) -> BatchValidation {
    let k = batch.len();
    let mut req_i = false;
    let mut req_ii = false;
    let mut req_iii = k > 0;
    for a in 0..k {
        let mut has_negative = false;
        for b in 0..k {
            if batch.contrast(a, b) {
                req_i = true;
                if batch.transformations[a] != batch.transformations[b] {
                    req_ii = true;
                }
            } else {
                has_negative = true;
            }
        }
        // c(T, T) = 1, so every member takes part in a positive
        req_iii &= has_negative;
    }
    BatchValidation { req_i, req_ii, req_iii, balanced: is_balanced(batch) }
}

fn is_balanced(batch: &Batch) -> bool {
    let specs = batch.plan.specs();
    let k = batch.len();
    let mut k_prefix = 1;
    for m in 0..specs.len() {
        k_prefix *= specs[m].k();
        if k % k_prefix != 0 {
            return false;
        }
        let expected = k / k_prefix;
        let mut groups: BTreeMap<&[usize], usize> = BTreeMap::new();
        for t in &batch.transformations {
            *groups.entry(&t.factors()[..=m]).or_default() += 1;
        }
        if groups.len() != k_prefix || groups.values().any(|&c| c != expected) {
            return false;
        }
    }
    true
}

/// For each factor `m`, the number of ordered pairs in the batch that
/// differ in factor `m` and nowhere else.
///
/// Under hierarchical sampling a change at level `m` usually drags changes
/// in every later factor with it, so these counts are zero for most levels
/// except the last ones and the exhaustively sampled ones.
pub fn isolated_variation_counts(batch: &Batch) -> Vec<usize> {
    let m = batch.plan.m();
    let mut counts = vec![0; m];
    for a in &batch.transformations {
        for b in &batch.transformations {
            let diffs: Vec<usize> = (0..m).filter(|&i| a.0[i] != b.0[i]).collect();
            if let [only] = diffs[..] {
                counts[only] += 1;
            }
        }
    }
    counts
}
