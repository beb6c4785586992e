//! Named experiment presets for the hypothesis grids.
//!
//! Every preset treats the sampled video (`identity`) as distinctive. The
//! remaining factors follow the grid:
//!
//! | preset | TR | TS | modalities | weights     | K_g |
//! |--------|----|----|------------|-------------|-----|
//! | row_a  | ·  | ·  | v          | simclr      | 2   |
//! | row_b  | i  | ·  | v          | simclr      | 2   |
//! | row_c  | ·  | i  | v          | simclr      | 2   |
//! | row_d  | i  | i  | v          | simclr      | 2   |
//! | row_e  | ·  | ·  | v, a       | cross_modal | 1   |
//! | row_f  | i  | ·  | v, a       | cross_modal | 1   |
//! | row_g  | ·  | i  | v, a       | cross_modal | 1   |
//! | row_h  | i  | i  | v, a       | cross_modal | 1   |
//! | row_i  | d  | ·  | v, a       | cross_modal | 1   |
//! | row_j  | ·  | d  | v, a       | cross_modal | 1   |
//! | row_k  | d  | i  | v, a       | cross_modal | 1   |
//! | row_l  | i  | d  | v, a       | cross_modal | 1   |
//! | row_m  | d  | d  | v, a       | cross_modal | 1   |
//!
//! `t2_a` … `t2_g` repeat rows e–j and l with the visual/text pair.
//!
//! `·` means the factor is sampled once (`K = 1`): a single random shift, or
//! the unreversed clip. `i` and `d` sample two values that are contrasted as
//! invariant or distinctive.

use serde::{Deserialize, Serialize};

use crate::error::{GdtError, Result};
use crate::loss::WeightScheme;
use crate::sampler::SamplingPlan;
use crate::transform::{FactorKind, FactorSpec};
use crate::world::{Modality, WorldConfig, AUGMENT, IDENTITY, MODALITY, REVERSAL, SHIFT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorRole {
    Off,
    Invariant,
    Distinctive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPreset {
    pub name: String,
    pub reversal: FactorRole,
    pub shift: FactorRole,
    pub modalities: Vec<Modality>,
    pub weight_scheme: WeightScheme,
    pub augment_k: usize,
    /// Replaces the config's world when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world: Option<WorldConfig>,
}

fn role_spec(name: &str, role: FactorRole, n: usize, off_values: usize) -> Result<FactorSpec> {
    let labels = |n: usize| (0..n).map(|v| v.to_string()).collect::<Vec<_>>();
    match role {
        FactorRole::Off => FactorSpec::new(name, FactorKind::Invariant, labels(off_values), 1),
        FactorRole::Invariant => FactorSpec::new(name, FactorKind::Invariant, labels(n), 2),
        FactorRole::Distinctive => FactorSpec::new(name, FactorKind::Distinctive, labels(n), 2),
    }
}

impl ExperimentPreset {
    fn grid(name: &str, reversal: FactorRole, shift: FactorRole, modalities: &[Modality]) -> Self {
        let single = modalities.len() == 1;
        Self {
            name: name.to_string(),
            reversal,
            shift,
            modalities: modalities.to_vec(),
            weight_scheme: if single { WeightScheme::SimClr } else { WeightScheme::CrossModal },
            augment_k: if single { 2 } else { 1 },
            world: None,
        }
    }

    /// Sampling plan in the order identity, shift, modality, reversal, augment.
    pub fn plan(&self, world: &WorldConfig, k_identity: usize) -> Result<SamplingPlan> {
        if self.modalities.is_empty() {
            return Err(GdtError::Config(format!("preset `{}` has no modalities", self.name)));
        }
        let modality_labels: Vec<String> = self.modalities.iter().map(|m| m.label().to_string()).collect();
        SamplingPlan::new(vec![
            FactorSpec::indexed(IDENTITY, FactorKind::Distinctive, world.n_identities, k_identity)?,
            role_spec(SHIFT, self.shift, world.n_shifts, world.n_shifts)?,
            FactorSpec::new(MODALITY, FactorKind::Invariant, modality_labels, self.modalities.len())?,
            role_spec(REVERSAL, self.reversal, 2, 1)?,
            FactorSpec::indexed(AUGMENT, FactorKind::Invariant, world.n_augmentations, self.augment_k)?,
        ])
        .map_err(|e| GdtError::Config(format!("preset `{}`: {e}", self.name)))
    }
}

/// All built-in presets in grid order.
pub fn builtin_presets() -> Vec<ExperimentPreset> {
    use FactorRole::{Distinctive as D, Invariant as I, Off as O};
    use Modality::{A, T, V};
    let rows = [
        ("a", O, O),
        ("b", I, O),
        ("c", O, I),
        ("d", I, I),
    ];
    let cross = [
        ("e", O, O),
        ("f", I, O),
        ("g", O, I),
        ("h", I, I),
        ("i", D, O),
        ("j", O, D),
        ("k", D, I),
        ("l", I, D),
        ("m", D, D),
    ];
    let text = [("a", O, O), ("b", I, O), ("c", O, I), ("d", I, I), ("e", D, O), ("f", O, D), ("g", I, D)];
    let mut out = Vec::new();
    for (r, tr, ts) in rows {
        out.push(ExperimentPreset::grid(&format!("row_{r}"), tr, ts, &[V]));
    }
    for (r, tr, ts) in cross {
        out.push(ExperimentPreset::grid(&format!("row_{r}"), tr, ts, &[V, A]));
    }
    for (r, tr, ts) in text {
        out.push(ExperimentPreset::grid(&format!("t2_{r}"), tr, ts, &[V, T]));
    }
    out
}
