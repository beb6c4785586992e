//! Per-modality two-layer encoders with L2-normalised outputs.
//!
//! `y = normalize(W2 · tanh(W1 · x + b1) + b2)`, with one parameter block
//! per modality. The backward pass is exact.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{GdtError, Result};
use crate::loss::{normalize_rows, RowNormalization};
use crate::rng::keyed_rng;
use crate::world::{Modality, SyntheticView};

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

const PARAMS_HEADER: &str = "# gdt-encoder-params v1";

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl EncoderBlock {
    fn zeros(obs: usize, hidden: usize, embed: usize) -> Self {
        Self {
            w1: Array2::zeros((hidden, obs)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((embed, hidden)),
            b2: Array1::zeros(embed),
        }
    }

    fn tensors(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// Parameters (or gradients, which share the layout) for every modality.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub obs_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    /// Indexed by [`Modality::index`].
    pub blocks: Vec<EncoderBlock>,
}

/// Intermediate values kept by [`EncoderParams::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    modalities: Vec<Modality>,
    inputs: Array2<f64>,
    hidden: Array2<f64>,
    norm: RowNormalization,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.modalities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modalities.is_empty()
    }
}

impl EncoderParams {
    pub fn zeros(obs_dim: usize, hidden_dim: usize, embed_dim: usize) -> Self {
        Self {
            obs_dim,
            hidden_dim,
            embed_dim,
            blocks: Modality::ALL.iter().map(|_| EncoderBlock::zeros(obs_dim, hidden_dim, embed_dim)).collect(),
        }
    }

    /// Gaussian weights scaled by `1/√fan_in`, zero biases.
    pub fn init(obs_dim: usize, hidden_dim: usize, embed_dim: usize, seed: u64) -> Result<Self> {
        if obs_dim == 0 || hidden_dim == 0 || embed_dim == 0 {
            return Err(GdtError::Config("encoder dimensions must be at least 1".into()));
        }
        let mut p = Self::zeros(obs_dim, hidden_dim, embed_dim);
        for (m, block) in p.blocks.iter_mut().enumerate() {
            let mut rng = keyed_rng(seed, &[m as u64]);
            let s1 = 1.0 / (obs_dim as f64).sqrt();
            let s2 = 1.0 / (hidden_dim as f64).sqrt();
            block.w1.iter_mut().for_each(|w| *w = s1 * normal(&mut rng));
            block.w2.iter_mut().for_each(|w| *w = s2 * normal(&mut rng));
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.obs_dim, self.hidden_dim, self.embed_dim)
    }

    pub fn num_params(&self) -> usize {
        self.blocks.iter().map(|b| b.tensors().iter().map(|t| t.len()).sum::<usize>()).sum()
    }

    /// All parameters in a fixed order: per modality `w1, b1, w2, b2`, row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.tensors().into_iter().flatten().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(GdtError::domain(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut it = flat.iter();
        for b in &mut self.blocks {
            for t in b.tensors_mut() {
                t.iter_mut().for_each(|x| *x = *it.next().expect("length checked"));
            }
        }
        Ok(())
    }

    /// `self += alpha · other`.
    pub fn scaled_add(&mut self, alpha: f64, other: &Self) {
        for (b, o) in self.blocks.iter_mut().zip(&other.blocks) {
            b.w1.scaled_add(alpha, &o.w1);
            b.b1.scaled_add(alpha, &o.b1);
            b.w2.scaled_add(alpha, &o.w2);
            b.b2.scaled_add(alpha, &o.b2);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for b in &mut self.blocks {
            b.w1 *= alpha;
            b.b1 *= alpha;
            b.w2 *= alpha;
            b.b2 *= alpha;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.tensors().iter().all(|t| t.iter().all(|x| x.is_finite())))
    }

    fn stack_inputs(&self, views: &[SyntheticView]) -> Result<Array2<f64>> {
        let mut x = Array2::zeros((views.len(), self.obs_dim));
        for (r, v) in views.iter().enumerate() {
            if v.observation.len() != self.obs_dim {
                return Err(GdtError::domain(format!(
                    "view {r} has {} features, encoder expects {}",
                    v.observation.len(),
                    self.obs_dim
                )));
            }
            x.row_mut(r).assign(&v.observation);
        }
        Ok(x)
    }

    /// Embeds `views`; each row uses the block of its own modality.
    pub fn forward(&self, views: &[SyntheticView]) -> Result<(Array2<f64>, ForwardCache)> {
        let inputs = self.stack_inputs(views)?;
        let modalities: Vec<Modality> = views.iter().map(|v| v.latent.modality).collect();
        let k = views.len();
        let mut hidden = Array2::zeros((k, self.hidden_dim));
        let mut pre = Array2::zeros((k, self.embed_dim));
        for m in Modality::ALL {
            let rows: Vec<usize> = (0..k).filter(|&r| modalities[r] == m).collect();
            if rows.is_empty() {
                continue;
            }
            let b = &self.blocks[m.index()];
            let x = inputs.select(Axis(0), &rows);
            let h = (x.dot(&b.w1.t()) + &b.b1).mapv(f64::tanh);
            let z = h.dot(&b.w2.t()) + &b.b2;
            for (j, &r) in rows.iter().enumerate() {
                hidden.row_mut(r).assign(&h.row(j));
                pre.row_mut(r).assign(&z.row(j));
            }
        }
        let norm = normalize_rows(pre.view())?;
        let out = norm.output().clone();
        Ok((out, ForwardCache { modalities, inputs, hidden, norm }))
    }

    pub fn embed(&self, views: &[SyntheticView]) -> Result<Array2<f64>> {
        Ok(self.forward(views)?.0)
    }

    /// Parameter gradient given `∂L/∂y` for the rows of `cache`.
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView2<f64>) -> Result<EncoderParams> {
        if upstream.dim() != (cache.len(), self.embed_dim)
            || cache.inputs.ncols() != self.obs_dim
            || cache.hidden.ncols() != self.hidden_dim
        {
            return Err(GdtError::Usage(format!(
                "backward called with a {}×{} upstream gradient and a cache for {} rows of a different encoder shape",
                upstream.nrows(),
                upstream.ncols(),
                cache.len()
            )));
        }
        let dz = cache.norm.backward(upstream);
        let mut grads = self.zeros_like();
        for m in Modality::ALL {
            let rows: Vec<usize> = (0..cache.len()).filter(|&r| cache.modalities[r] == m).collect();
            if rows.is_empty() {
                continue;
            }
            let b = &self.blocks[m.index()];
            let g = &mut grads.blocks[m.index()];
            let x = cache.inputs.select(Axis(0), &rows);
            let h = cache.hidden.select(Axis(0), &rows);
            let dz_m = dz.select(Axis(0), &rows);
            g.w2 = dz_m.t().dot(&h);
            g.b2 = dz_m.sum_axis(Axis(0));
            let da = dz_m.dot(&b.w2) * h.mapv(|v| 1.0 - v * v);
            g.w1 = da.t().dot(&x);
            g.b1 = da.sum_axis(Axis(0));
        }
        Ok(grads)
    }

    /// Text form with a versioned header; floats use the shortest exact
    /// representation, so the file round-trips bit for bit.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{PARAMS_HEADER}");
        let _ = writeln!(s, "obs_dim {} hidden_dim {} embed_dim {}", self.obs_dim, self.hidden_dim, self.embed_dim);
        for (m, b) in Modality::ALL.iter().zip(&self.blocks) {
            for (name, t) in ["w1", "b1", "w2", "b2"].iter().zip(b.tensors()) {
                let _ = write!(s, "{}.{name}", m.label());
                for x in t {
                    let _ = write!(s, " {x:?}");
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(PARAMS_HEADER) {
            return Err(GdtError::Parse(format!("missing header `{PARAMS_HEADER}`")));
        }
        let dims: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
        let dim = |i: usize, key: &str| -> Result<usize> {
            if dims.get(2 * i) != Some(&key) {
                return Err(GdtError::Parse(format!("expected `{key}` in the dimension line")));
            }
            dims.get(2 * i + 1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| GdtError::Parse(format!("bad value for `{key}`")))
        };
        let mut p = Self::zeros(dim(0, "obs_dim")?, dim(1, "hidden_dim")?, dim(2, "embed_dim")?);
        let mut flat = Vec::with_capacity(p.num_params());
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let mut parts = line.split_whitespace();
            parts.next();
            for tok in parts {
                flat.push(tok.parse::<f64>().map_err(|e| GdtError::Parse(format!("`{tok}`: {e}")))?);
            }
        }
        p.set_flat(&flat).map_err(|e| GdtError::Parse(e.to_string()))?;
        Ok(p)
    }
}
