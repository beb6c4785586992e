//! Transformation factors, composed transformations and their contrast
//! functions.
//!
//! A composed transformation `T = (t_1, ..., t_M)` picks one value per
//! factor. Each factor is either *invariant* (its contrast is identically
//! one) or *distinctive* (its contrast is `δ[t_m = t'_m]`), and the contrast
//! of a composition is the product of the per-factor contrasts. Factor values
//! are opaque: the algebra only ever compares them for equality.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{GdtError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorKind {
    Invariant,
    Distinctive,
}

/// One transformation factor: its finite value set, contrast kind and the
/// number of values drawn per branch when forming a batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorSpec {
    name: String,
    kind: FactorKind,
    values: Vec<String>,
    k: usize,
}

impl FactorSpec {
    pub fn new(
        name: impl Into<String>,
        kind: FactorKind,
        values: Vec<String>,
        k: usize,
    ) -> Result<Self> {
        let name = name.into();
        if values.is_empty() {
            return Err(GdtError::domain(format!("factor `{name}` has no values")));
        }
        let mut seen = HashSet::with_capacity(values.len());
        for v in &values {
            if !seen.insert(v.as_str()) {
                return Err(GdtError::domain(format!(
                    "factor `{name}` lists value `{v}` twice"
                )));
            }
        }
        if k == 0 {
            return Err(GdtError::domain(format!("factor `{name}` has K = 0")));
        }
        if k > values.len() {
            return Err(GdtError::Plan(format!(
                "factor `{name}`: K = {k} exceeds its {} values (sampling is without replacement)",
                values.len()
            )));
        }
        Ok(Self { name, kind, values, k })
    }

    /// A factor whose values are the integers `0..n` rendered as text.
    pub fn indexed(name: impl Into<String>, kind: FactorKind, n: usize, k: usize) -> Result<Self> {
        Self::new(name, kind, (0..n).map(|v| v.to_string()).collect(), k)
    }

    /// Sampled once per branch with no contrast role.
    pub fn augment_only(name: impl Into<String>, n: usize) -> Result<Self> {
        Self::indexed(name, FactorKind::Invariant, n, 1)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> FactorKind {
        self.kind
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }

    pub fn cardinality(&self) -> usize {
        self.values.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.values.iter().position(|v| v == label)
    }

    fn check_value(&self, v: usize) -> Result<()> {
        if v < self.values.len() {
            Ok(())
        } else {
            Err(GdtError::domain(format!(
                "value index {v} is not in factor `{}` ({} values)",
                self.name,
                self.values.len()
            )))
        }
    }
}

/// A composed transformation: one value index per factor, in spec order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GDTransformation(pub Vec<usize>);

impl GDTransformation {
    pub fn new(factors: Vec<usize>) -> Self {
        Self(factors)
    }

    pub fn factors(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn conforms(&self, specs: &[FactorSpec]) -> Result<()> {
        if self.0.len() != specs.len() {
            return Err(GdtError::domain(format!(
                "transformation has {} factors, spec list has {}",
                self.0.len(),
                specs.len()
            )));
        }
        for (spec, &v) in specs.iter().zip(&self.0) {
            spec.check_value(v)?;
        }
        Ok(())
    }
}

impl fmt::Display for GDTransformation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

pub fn factor_contrast(spec: &FactorSpec, a: usize, b: usize) -> Result<bool> {
    spec.check_value(a)?;
    spec.check_value(b)?;
    Ok(match spec.kind {
        FactorKind::Invariant => true,
        FactorKind::Distinctive => a == b,
    })
}

/// `c(T, T') = ∏_m c_m(t_m, t'_m)`.
pub fn composed_contrast(
    specs: &[FactorSpec],
    t: &GDTransformation,
    t2: &GDTransformation,
) -> Result<bool> {
    t.conforms(specs)?;
    t2.conforms(specs)?;
    Ok(composed_contrast_unchecked(specs, t, t2))
}

/// Same as [`composed_contrast`] for transformations already known to conform.
pub(crate) fn composed_contrast_unchecked(
    specs: &[FactorSpec],
    t: &GDTransformation,
    t2: &GDTransformation,
) -> bool {
    specs
        .iter()
        .zip(t.0.iter().zip(&t2.0))
        .all(|(s, (a, b))| s.kind == FactorKind::Invariant || a == b)
}

/// Every composed transformation of the spec list, in lexicographic order.
pub fn enumerate_space(specs: &[FactorSpec]) -> Vec<GDTransformation> {
    let mut out = vec![GDTransformation(Vec::with_capacity(specs.len()))];
    for spec in specs {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..spec.cardinality()).map(move |v| {
                    let mut t = prefix.0.clone();
                    t.push(v);
                    GDTransformation(t)
                })
            })
            .collect();
    }
    out
}

/// A binary contrast over a finite domain, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastTable {
    domain: Vec<GDTransformation>,
    entries: Vec<bool>,
}

impl ContrastTable {
    pub fn new(domain: Vec<GDTransformation>, entries: Vec<bool>) -> Result<Self> {
        if entries.len() != domain.len() * domain.len() {
            return Err(GdtError::domain(format!(
                "contrast table over {} elements needs {} entries, got {}",
                domain.len(),
                domain.len() * domain.len(),
                entries.len()
            )));
        }
        Ok(Self { domain, entries })
    }

    pub fn from_fn(
        domain: Vec<GDTransformation>,
        mut f: impl FnMut(&GDTransformation, &GDTransformation) -> bool,
    ) -> Self {
        let mut entries = Vec::with_capacity(domain.len() * domain.len());
        for a in &domain {
            for b in &domain {
                entries.push(f(a, b));
            }
        }
        Self { domain, entries }
    }

    /// The product contrast over a domain of transformations.
    pub fn from_specs(specs: &[FactorSpec], domain: Vec<GDTransformation>) -> Result<Self> {
        for t in &domain {
            t.conforms(specs)?;
        }
        Ok(Self::from_fn(domain, |a, b| composed_contrast_unchecked(specs, a, b)))
    }

    /// The product contrast over the full enumeration of the spec list.
    pub fn full_enumeration(specs: &[FactorSpec]) -> Self {
        let domain = enumerate_space(specs);
        Self::from_fn(domain, |a, b| composed_contrast_unchecked(specs, a, b))
    }

    pub fn identity(domain: Vec<GDTransformation>) -> Self {
        Self::from_fn(domain, |a, b| a == b)
    }

    /// Parses a whitespace-separated 0/1 matrix; `#` starts a comment line.
    /// Row `i` is given the single-factor transformation `(i)`.
    pub fn parse_matrix(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<bool>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|tok| match tok {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(GdtError::Parse(format!(
                        "line {}: expected 0 or 1, found `{other}`",
                        lineno + 1
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let n = rows.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(GdtError::Parse(format!(
                "row {i} has {} entries, expected {n}",
                r.len()
            )));
        }
        let domain = (0..n).map(|i| GDTransformation(vec![i])).collect();
        Self::new(domain, rows.into_iter().flatten().collect())
    }

    pub fn size(&self) -> usize {
        self.domain.len()
    }

    pub fn domain(&self) -> &[GDTransformation] {
        &self.domain
    }

    pub fn get(&self, a: usize, b: usize) -> bool {
        self.entries[a * self.domain.len() + b]
    }

    pub fn set(&mut self, a: usize, b: usize, v: bool) {
        let n = self.domain.len();
        self.entries[a * n + b] = v;
    }

    pub fn ones(&self) -> usize {
        self.entries.iter().filter(|&&e| e).count()
    }
}

/// The first way in which a contrast fails to be an equivalence relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "property", rename_all = "lowercase")]
pub enum Violation {
    /// `c(x, x) = 0`.
    Reflexivity { x: usize },
    /// `c(x, y) ≠ c(y, x)`.
    Symmetry { x: usize, y: usize },
    /// `c(x, y) = c(y, z) = 1` but `c(x, z) = 0`.
    Transitivity { x: usize, y: usize, z: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Reflexivity { x } => write!(f, "reflexivity fails at ({x}, {x})"),
            Violation::Symmetry { x, y } => write!(f, "symmetry fails at ({x}, {y})"),
            Violation::Transitivity { x, y, z } => {
                write!(f, "transitivity fails at ({x}, {y}, {z})")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    pub witness: Option<Violation>,
}

/// Checks that `{(x, y) : c(x, y) = 1}` is an equivalence relation.
///
/// Reflexivity is scanned first, then symmetry, then transitivity, each in
/// lexicographic order over the domain, so the reported witness is stable.
pub fn verify_admissibility(table: &ContrastTable) -> AdmissibilityReport {
    let witness = first_violation(table);
    AdmissibilityReport { admissible: witness.is_none(), witness }
}

fn first_violation(table: &ContrastTable) -> Option<Violation> {
    let n = table.size();
    if let Some(x) = (0..n).find(|&x| !table.get(x, x)) {
        return Some(Violation::Reflexivity { x });
    }
    for x in 0..n {
        for y in 0..n {
            if table.get(x, y) != table.get(y, x) {
                return Some(Violation::Symmetry { x, y });
            }
        }
    }
    for x in 0..n {
        for y in 0..n {
            if !table.get(x, y) {
                continue;
            }
            for z in 0..n {
                if table.get(y, z) && !table.get(x, z) {
                    return Some(Violation::Transitivity { x, y, z });
                }
            }
        }
    }
    None
}

pub const MAX_ENUMERATION_ARITY: usize = 4;

/// A function `h : {0,1}^M → {0,1}` of the per-factor contrast vector,
/// stored as a truth table. Bit `v` of `truth` is `h(v)` where coordinate
/// `i` of `v` is bit `i` of the index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FactorwiseContrast {
    pub arity: usize,
    pub truth: u32,
}

impl FactorwiseContrast {
    pub fn eval(&self, v: u32) -> bool {
        (self.truth >> v) & 1 == 1
    }

    /// `h_S(v) = ∏_{i ∈ S} v_i`.
    pub fn subset_product(arity: usize, subset: &[usize]) -> Self {
        let mask: u32 = subset.iter().map(|&i| 1u32 << i).sum();
        let truth = (0..1u32 << arity)
            .filter(|v| v & mask == mask)
            .map(|v| 1u32 << v)
            .sum();
        Self { arity, truth }
    }

    /// The factor subset `S` if `h` is a subset product, otherwise `None`.
    pub fn as_subset_product(&self) -> Option<Vec<usize>> {
        let all = (1u32 << self.arity) - 1;
        if !self.eval(all) {
            return None;
        }
        // the smallest true vector is the candidate subset
        let mask = (0..=all)
            .filter(|&v| self.eval(v))
            .min_by_key(|v| v.count_ones())?;
        let subset: Vec<usize> = (0..self.arity).filter(|i| mask >> i & 1 == 1).collect();
        (Self::subset_product(self.arity, &subset) == *self).then_some(subset)
    }

    fn is_monotone(&self) -> bool {
        let all = (1u32 << self.arity) - 1;
        (0..=all).all(|v| {
            !self.eval(v) || (0..self.arity).all(|i| self.eval(v | 1 << i))
        })
    }

    /// Admissibility of `c(T, T') = h(v(T, T'))` over all `2^M` binary
    /// distinctive transformations, where `v_i = δ[t_i = t'_i]`.
    fn induces_admissible_contrast(&self) -> bool {
        let all = (1u32 << self.arity) - 1;
        let c = |a: u32, b: u32| self.eval(!(a ^ b) & all);
        if !c(0, 0) {
            return false;
        }
        // symmetry is automatic: v(T, T') = v(T', T)
        for a in 0..=all {
            for b in 0..=all {
                if !c(a, b) {
                    continue;
                }
                for z in 0..=all {
                    if c(b, z) && !c(a, z) {
                        return false;
                    }
                }
            }
        }
        true
    }
}

impl fmt::Display for FactorwiseContrast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.as_subset_product() {
            Some(s) if s.is_empty() => write!(f, "1"),
            Some(s) => {
                let terms: Vec<String> = s.iter().map(|i| format!("v{}", i + 1)).collect();
                write!(f, "{}", terms.join("·"))
            }
            None => write!(f, "h[{:#x}]", self.truth),
        }
    }
}

/// Exhaustively enumerates every `h : {0,1}^M → {0,1}` that is monotone and
/// induces an admissible contrast over `M` binary distinctive factors.
///
/// Restricting to distinctive factors loses nothing: an invariant factor's
/// coordinate of `v` is always one, so `h` cannot observe it.
pub fn enumerate_factorwise_contrasts(m: usize) -> Result<Vec<FactorwiseContrast>> {
    if !(1..=MAX_ENUMERATION_ARITY).contains(&m) {
        return Err(GdtError::domain(format!(
            "arity must be in 1..={MAX_ENUMERATION_ARITY}, got {m}"
        )));
    }
    let n_inputs = 1u32 << m;
    let n_candidates: u64 = 1u64 << n_inputs;
    Ok((0..n_candidates)
        .map(|truth| FactorwiseContrast { arity: m, truth: truth as u32 })
        .filter(|h| h.is_monotone() && h.induces_admissible_contrast())
        .collect())
}
