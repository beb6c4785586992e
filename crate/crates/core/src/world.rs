//! A synthetic multimodal video world.
//!
//! Each clip is identified by a latent `(identity, shift, reversal,
//! modality)`. Its observation is
//!
//! ```text
//! x = G_m · [ g_id·code(i) ⊕ g_shift·code(τ) ⊕ g_rev·code(r) ⊕ g_priv·code(i, τ, m) ] + ε
//! ```
//!
//! The identity, shift and reversal codes are shared by all modalities, so
//! they can be recovered from any of them. `code(i, τ, m)` is a
//! modality-private nuisance that differs between the two sides of a
//! cross-modal pair. `G_m` is a fixed per-modality mixing map and `ε` is
//! Gaussian augmentation noise keyed on the full transformation, including
//! the augmentation draw.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GdtError, Result};
use crate::rng::{derive_key, keyed_rng};
use crate::sampler::{Batch, SamplingPlan};
use crate::transform::GDTransformation;

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Factor names understood by the world.
pub const IDENTITY: &str = "identity";
pub const SHIFT: &str = "shift";
pub const MODALITY: &str = "modality";
pub const REVERSAL: &str = "reversal";
pub const AUGMENT: &str = "augment";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    /// Visual.
    V,
    /// Audio.
    A,
    /// Text stand-in.
    T,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::V, Modality::A, Modality::T];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Modality::V => "v",
            Modality::A => "a",
            Modality::T => "t",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.label() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorGains {
    pub identity: f64,
    pub shift: f64,
    pub reversal: f64,
    /// Strength of the modality-private nuisance code.
    pub private: f64,
}

impl Default for FactorGains {
    fn default() -> Self {
        Self { identity: 1.0, shift: 0.8, reversal: 0.6, private: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub n_identities: usize,
    pub n_shifts: usize,
    /// Number of distinct augmentation draws (values of `g`).
    pub n_augmentations: usize,
    pub obs_dim: usize,
    pub identity_code_dim: usize,
    pub shift_code_dim: usize,
    pub reversal_code_dim: usize,
    pub private_code_dim: usize,
    pub noise_sigma: f64,
    pub factor_gains: FactorGains,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_identities: 64,
            n_shifts: 8,
            n_augmentations: 256,
            obs_dim: 32,
            identity_code_dim: 8,
            shift_code_dim: 4,
            reversal_code_dim: 2,
            private_code_dim: 8,
            noise_sigma: 0.3,
            factor_gains: FactorGains::default(),
            seed: 7,
        }
    }
}

impl WorldConfig {
    pub fn latent_dim(&self) -> usize {
        self.identity_code_dim + self.shift_code_dim + self.reversal_code_dim + self.private_code_dim
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_identities", self.n_identities),
            ("n_shifts", self.n_shifts),
            ("n_augmentations", self.n_augmentations),
            ("obs_dim", self.obs_dim),
            ("identity_code_dim", self.identity_code_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(GdtError::Config(format!("world.{name} must be at least 1")));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(GdtError::Config(format!(
                "world.noise_sigma must be a finite non-negative number, got {}",
                self.noise_sigma
            )));
        }
        let g = self.factor_gains;
        if ![g.identity, g.shift, g.reversal, g.private].iter().all(|x| x.is_finite()) {
            return Err(GdtError::Config("world.factor_gains must be finite".into()));
        }
        Ok(())
    }
}

/// The latent content of one clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Latent {
    pub identity: usize,
    pub shift: usize,
    pub reversed: bool,
    pub modality: Modality,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticView {
    pub latent: Latent,
    pub observation: Array1<f64>,
}

/// Seeded codes and mixing maps; views are pure functions of
/// `(config, latent, augmentation draw)`.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    cfg: WorldConfig,
    identity_codes: Array2<f64>,
    shift_codes: Array2<f64>,
    reversal_codes: Array2<f64>,
    mixing: Vec<Array2<f64>>,
}

fn unit_codes(n: usize, dim: usize, seed: u64, tag: u64) -> Array2<f64> {
    let mut rng = keyed_rng(seed, &[tag]);
    let mut codes = Array2::<f64>::zeros((n, dim));
    for mut row in codes.rows_mut() {
        row.iter_mut().for_each(|x| *x = normal(&mut rng));
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
    codes
}

impl SyntheticWorld {
    pub fn new(cfg: WorldConfig) -> Result<Self> {
        cfg.validate()?;
        let identity_codes = unit_codes(cfg.n_identities, cfg.identity_code_dim, cfg.seed, 1);
        let shift_codes = unit_codes(cfg.n_shifts, cfg.shift_code_dim, cfg.seed, 2);
        let reversal_codes = unit_codes(2, cfg.reversal_code_dim, cfg.seed, 3);
        let latent = cfg.latent_dim();
        let scale = 1.0 / (latent as f64).sqrt();
        let mixing = Modality::ALL
            .iter()
            .map(|m| {
                let mut rng = keyed_rng(cfg.seed, &[4, m.index() as u64]);
                Array2::from_shape_simple_fn((cfg.obs_dim, latent), || {
                    scale * normal(&mut rng)
                })
            })
            .collect();
        Ok(Self { cfg, identity_codes, shift_codes, reversal_codes, mixing })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn mixing(&self, m: Modality) -> &Array2<f64> {
        &self.mixing[m.index()]
    }

    pub fn identity_code(&self, i: usize) -> Array1<f64> {
        self.identity_codes.row(i).to_owned()
    }

    fn private_code(&self, l: &Latent) -> Array1<f64> {
        let key = derive_key(self.cfg.seed, &[5, l.identity as u64, l.shift as u64, l.modality.index() as u64]);
        let mut rng = keyed_rng(key, &[]);
        let dim = self.cfg.private_code_dim;
        let mut c = Array1::from_shape_simple_fn(dim, || normal(&mut rng));
        let n = c.dot(&c).sqrt();
        if n > 0.0 {
            c /= n;
        }
        c
    }

    fn check_latent(&self, l: &Latent) -> Result<()> {
        if l.identity >= self.cfg.n_identities {
            return Err(GdtError::domain(format!(
                "identity {} out of range 0..{}",
                l.identity, self.cfg.n_identities
            )));
        }
        if l.shift >= self.cfg.n_shifts {
            return Err(GdtError::domain(format!(
                "shift {} out of range 0..{}",
                l.shift, self.cfg.n_shifts
            )));
        }
        Ok(())
    }

    /// The noiseless latent vector before mixing.
    pub fn latent_vector(&self, l: &Latent) -> Result<Array1<f64>> {
        self.check_latent(l)?;
        let g = self.cfg.factor_gains;
        let mut z = Vec::with_capacity(self.cfg.latent_dim());
        z.extend(self.identity_codes.row(l.identity).iter().map(|x| g.identity * x));
        z.extend(self.shift_codes.row(l.shift).iter().map(|x| g.shift * x));
        z.extend(self.reversal_codes.row(l.reversed as usize).iter().map(|x| g.reversal * x));
        z.extend(self.private_code(l).iter().map(|x| g.private * x));
        Ok(Array1::from(z))
    }

    /// Observation without augmentation noise.
    pub fn clean_view(&self, l: Latent) -> Result<SyntheticView> {
        let z = self.latent_vector(&l)?;
        Ok(SyntheticView { latent: l, observation: self.mixing[l.modality.index()].dot(&z) })
    }

    /// Observation under augmentation draw `draw`.
    pub fn view(&self, l: Latent, draw: u64) -> Result<SyntheticView> {
        if draw >= self.cfg.n_augmentations as u64 {
            return Err(GdtError::domain(format!(
                "augmentation draw {draw} out of range 0..{}",
                self.cfg.n_augmentations
            )));
        }
        let mut v = self.clean_view(l)?;
        if self.cfg.noise_sigma > 0.0 {
            let key = derive_key(
                self.cfg.seed,
                &[6, l.identity as u64, l.shift as u64, l.reversed as u64, l.modality.index() as u64, draw],
            );
            let mut rng = keyed_rng(key, &[]);
            let s = self.cfg.noise_sigma;
            v.observation.iter_mut().for_each(|x| {
                let e: f64 = normal(&mut rng);
                *x += s * e;
            });
        }
        Ok(v)
    }

    /// Checks that a plan only uses factors the world knows, with value sets
    /// that the world can realise, and returns the per-factor decoder.
    pub fn bind(&self, plan: &SamplingPlan) -> Result<PlanBinding> {
        let mut binding = PlanBinding::default();
        for (pos, spec) in plan.specs().iter().enumerate() {
            let parse_usize = |label: &str, n: usize| -> Result<usize> {
                label.parse::<usize>().ok().filter(|&v| v < n).ok_or_else(|| {
                    GdtError::Config(format!(
                        "factor `{}` value `{label}` is not in 0..{n}",
                        spec.name()
                    ))
                })
            };
            let decoded: Vec<u64> = match spec.name() {
                IDENTITY => spec
                    .values()
                    .iter()
                    .map(|l| parse_usize(l, self.cfg.n_identities).map(|v| v as u64))
                    .collect::<Result<_>>()?,
                SHIFT => spec
                    .values()
                    .iter()
                    .map(|l| parse_usize(l, self.cfg.n_shifts).map(|v| v as u64))
                    .collect::<Result<_>>()?,
                AUGMENT => spec
                    .values()
                    .iter()
                    .map(|l| parse_usize(l, self.cfg.n_augmentations).map(|v| v as u64))
                    .collect::<Result<_>>()?,
                REVERSAL => spec
                    .values()
                    .iter()
                    .map(|l| parse_usize(l, 2).map(|v| v as u64))
                    .collect::<Result<_>>()?,
                MODALITY => spec
                    .values()
                    .iter()
                    .map(|l| {
                        Modality::from_label(l).map(|m| m.index() as u64).ok_or_else(|| {
                            GdtError::Config(format!("unknown modality `{l}`"))
                        })
                    })
                    .collect::<Result<_>>()?,
                other => {
                    return Err(GdtError::Config(format!(
                        "plan factor `{other}` is not a world factor"
                    )))
                }
            };
            binding.slots.push((spec.name().to_string(), pos, decoded));
        }
        Ok(binding)
    }

    /// Materialises every transformation of a batch.
    pub fn batch_views(&self, binding: &PlanBinding, batch: &Batch) -> Result<Vec<SyntheticView>> {
        batch.transformations().iter().map(|t| self.transformation_view(binding, t)).collect()
    }

    pub fn transformation_view(
        &self,
        binding: &PlanBinding,
        t: &GDTransformation,
    ) -> Result<SyntheticView> {
        let mut l = Latent { identity: 0, shift: 0, reversed: false, modality: Modality::V };
        let mut draw = 0;
        for (name, pos, decoded) in &binding.slots {
            let idx = *t.factors().get(*pos).ok_or_else(|| {
                GdtError::domain(format!("transformation {t} has no factor {pos}"))
            })?;
            let v = *decoded.get(idx).ok_or_else(|| {
                GdtError::domain(format!("value index {idx} out of range for `{name}`"))
            })?;
            match name.as_str() {
                IDENTITY => l.identity = v as usize,
                SHIFT => l.shift = v as usize,
                REVERSAL => l.reversed = v == 1,
                MODALITY => l.modality = Modality::ALL[v as usize],
                AUGMENT => draw = v,
                _ => unreachable!("bind() only admits world factors"),
            }
        }
        self.view(l, draw)
    }
}

/// Maps plan factor positions onto world latents.
#[derive(Debug, Clone, Default)]
pub struct PlanBinding {
    slots: Vec<(String, usize, Vec<u64>)>,
}
