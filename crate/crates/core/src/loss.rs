//! The generalized noise-contrastive objective and its gradient.
//!
//! For a batch of `K` embeddings `e_a`, a contrast mask `C` and a weight
//! mask `W`,
//!
//! ```text
//! L = −Σ_{a,b} C_ab W_ab · log( exp(s_ab) / Σ_c W_ac exp(s_ac) ),   s_ab = ⟨e_a, e_b⟩ / ρ
//! ```
//!
//! Sums run over ordered pairs. All accumulation is serial in index order.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{GdtError, Result};
use crate::sampler::Batch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// `w = δ[T ≠ T']`.
    SimClr,
    /// `w = δ[m ≠ m']`.
    CrossModal,
    /// `w = δ[T ≠ T'] · δ[m ≠ m']`.
    CrossModalStrict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Similarities are divided by this value.
    pub temperature: f64,
    pub weight_scheme: WeightScheme,
    /// Subtract the row maximum before exponentiating.
    #[serde(default = "default_true")]
    pub stabilize: bool,
}

fn default_true() -> bool {
    true
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { temperature: 0.07, weight_scheme: WeightScheme::SimClr, stabilize: true }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(GdtError::Config(format!(
                "temperature must be positive and finite, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Contrast and weight masks over a batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairMask {
    pub contrast: Array2<bool>,
    pub weight: Array2<bool>,
}

impl PairMask {
    pub fn new(contrast: Array2<bool>, weight: Array2<bool>) -> Result<Self> {
        let (r, c) = contrast.dim();
        if r != c || weight.dim() != (r, c) {
            return Err(GdtError::domain(format!(
                "mask shapes {:?} and {:?} are not matching squares",
                contrast.dim(),
                weight.dim()
            )));
        }
        Ok(Self { contrast, weight })
    }

    pub fn size(&self) -> usize {
        self.contrast.nrows()
    }

    /// Ordered pairs that carry a log-softmax term.
    pub fn weighted_positives(&self) -> usize {
        self.contrast.iter().zip(&self.weight).filter(|(&c, &w)| c && w).count()
    }

    /// The same masks with rows and columns reordered by `perm`
    /// (`new[i] = old[perm[i]]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.size();
        let pick = |m: &Array2<bool>| Array2::from_shape_fn((k, k), |(i, j)| m[[perm[i], perm[j]]]);
        Self { contrast: pick(&self.contrast), weight: pick(&self.weight) }
    }
}

pub const MODALITY_FACTOR: &str = "modality";

pub fn build_pair_mask(batch: &Batch, cfg: &LossConfig) -> Result<PairMask> {
    let k = batch.len();
    let ts = batch.transformations();
    let contrast = Array2::from_shape_fn((k, k), |(a, b)| batch.contrast(a, b));
    let weight = match cfg.weight_scheme {
        WeightScheme::SimClr => Array2::from_shape_fn((k, k), |(a, b)| ts[a] != ts[b]),
        scheme @ (WeightScheme::CrossModal | WeightScheme::CrossModalStrict) => {
            let m = batch.plan().position(MODALITY_FACTOR).ok_or_else(|| {
                GdtError::Config(format!(
                    "{scheme:?} weights need a factor named `{MODALITY_FACTOR}`"
                ))
            })?;
            let strict = scheme == WeightScheme::CrossModalStrict;
            Array2::from_shape_fn((k, k), |(a, b)| {
                ts[a].0[m] != ts[b].0[m] && (!strict || ts[a] != ts[b])
            })
        }
    };
    PairMask::new(contrast, weight)
}

fn check_shapes(emb: ArrayView2<f64>, mask: &PairMask, cfg: &LossConfig) -> Result<()> {
    cfg.validate()?;
    if emb.nrows() != mask.size() {
        return Err(GdtError::domain(format!(
            "{} embeddings for a {}×{} mask",
            emb.nrows(),
            mask.size(),
            mask.size()
        )));
    }
    Ok(())
}

/// Per-anchor pieces shared by the loss and the gradient.
struct AnchorTerms {
    /// `s_ab`.
    sim: Array2<f64>,
    /// `log Σ_c W_ac exp(s_ac)` (unused when the row has no weight).
    lse: Vec<f64>,
    /// `Σ_b C_ab W_ab`.
    n_pos: Vec<f64>,
}

fn anchor_terms(emb: ArrayView2<f64>, mask: &PairMask, cfg: &LossConfig) -> Result<AnchorTerms> {
    check_shapes(emb, mask, cfg)?;
    let k = emb.nrows();
    let sim = emb.dot(&emb.t()) / cfg.temperature;
    let mut lse = vec![f64::NEG_INFINITY; k];
    let mut n_pos = vec![0.0; k];
    for a in 0..k {
        let row_w = mask.weight.row(a);
        let row_c = mask.contrast.row(a);
        n_pos[a] = (0..k).filter(|&b| row_c[b] && row_w[b]).count() as f64;
        let shift = if cfg.stabilize {
            (0..k).filter(|&c| row_w[c]).map(|c| sim[[a, c]]).fold(f64::NEG_INFINITY, f64::max)
        } else {
            0.0
        };
        let has_weight = row_w.iter().any(|&w| w);
        if !has_weight {
            if n_pos[a] > 0.0 {
                return Err(GdtError::DegenerateObjective { anchor: a });
            }
            continue;
        }
        let mut acc = 0.0;
        for c in 0..k {
            if row_w[c] {
                acc += (sim[[a, c]] - shift).exp();
            }
        }
        lse[a] = shift + acc.ln();
    }
    Ok(AnchorTerms { sim, lse, n_pos })
}

/// Contribution of each anchor row to the loss.
pub fn anchor_losses(emb: ArrayView2<f64>, mask: &PairMask, cfg: &LossConfig) -> Result<Vec<f64>> {
    let t = anchor_terms(emb, mask, cfg)?;
    let k = emb.nrows();
    Ok((0..k)
        .map(|a| {
            let mut acc = 0.0;
            for b in 0..k {
                if mask.contrast[[a, b]] && mask.weight[[a, b]] {
                    acc += t.lse[a] - t.sim[[a, b]];
                }
            }
            acc
        })
        .collect())
}

pub fn gdt_nce_loss(emb: ArrayView2<f64>, mask: &PairMask, cfg: &LossConfig) -> Result<f64> {
    Ok(anchor_losses(emb, mask, cfg)?.into_iter().sum())
}

/// Loss and its gradient with respect to every embedding entry.
///
/// With `G_ab = n_a · softmax_a(b) − C_ab W_ab`, where `softmax_a` is the
/// `W`-restricted softmax of row `a`, the gradient is
/// `∂L/∂e_x = (Σ_b G_xb e_b + Σ_a G_ax e_a) / ρ`.
pub fn gdt_nce_loss_and_grad(
    emb: ArrayView2<f64>,
    mask: &PairMask,
    cfg: &LossConfig,
) -> Result<(f64, Array2<f64>)> {
    let t = anchor_terms(emb, mask, cfg)?;
    let k = emb.nrows();
    let mut loss = 0.0;
    let mut g = Array2::<f64>::zeros((k, k));
    for a in 0..k {
        for b in 0..k {
            let p = mask.contrast[[a, b]] && mask.weight[[a, b]];
            if p {
                loss += t.lse[a] - t.sim[[a, b]];
            }
            let soft = if mask.weight[[a, b]] && t.n_pos[a] > 0.0 {
                t.n_pos[a] * (t.sim[[a, b]] - t.lse[a]).exp()
            } else {
                0.0
            };
            g[[a, b]] = soft - if p { 1.0 } else { 0.0 };
        }
    }
    let sym = &g + &g.t();
    let grad = sym.dot(&emb) / cfg.temperature;
    Ok((loss, grad))
}

pub fn gdt_nce_grad(emb: ArrayView2<f64>, mask: &PairMask, cfg: &LossConfig) -> Result<Array2<f64>> {
    Ok(gdt_nce_loss_and_grad(emb, mask, cfg)?.1)
}

/// Row norms kept from [`normalize_rows`] for the backward pass.
#[derive(Debug, Clone)]
pub struct RowNormalization {
    normalized: Array2<f64>,
    norms: Vec<f64>,
}

impl RowNormalization {
    pub fn output(&self) -> &Array2<f64> {
        &self.normalized
    }

    pub fn into_output(self) -> Array2<f64> {
        self.normalized
    }

    /// Maps `∂L/∂y` to `∂L/∂x` for `y = x / |x|`:
    /// `(g − y ⟨y, g⟩) / |x|`, the tangent-space projection per row.
    pub fn backward(&self, upstream: ArrayView2<f64>) -> Array2<f64> {
        let mut out = upstream.to_owned();
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let y = self.normalized.row(i);
            let dot = y.dot(&row);
            row.scaled_add(-dot, &y);
            row /= self.norms[i];
        }
        out
    }
}

pub fn normalize_rows(emb: ArrayView2<f64>) -> Result<RowNormalization> {
    let mut normalized = emb.to_owned();
    let mut norms = Vec::with_capacity(emb.nrows());
    for (i, mut row) in normalized.axis_iter_mut(Axis(0)).enumerate() {
        let n = row.dot(&row).sqrt();
        if !(n > 0.0) {
            return Err(GdtError::domain(format!("row {i} has zero norm")));
        }
        row /= n;
        norms.push(n);
    }
    Ok(RowNormalization { normalized, norms })
}
