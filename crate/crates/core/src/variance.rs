//! Stratified versus naive estimation of a pairwise objective.
//!
//! A [`FiniteLossWorld`] is a bounded loss `ℓ` over ordered pairs of
//! transformations `(T^I, T^V)`, split into an invariant part and a
//! distinctive part. The GDT estimator draws `K_I` invariant and `K_V`
//! distinctive values and reuses them for both sides of every pair; the
//! naive estimator draws `K_I² K_V²` independent pairs. Strata are the
//! ordered pairs `(j, j')` of drawn distinctive values.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GdtError, Result};
use crate::rng::{derive_key, keyed_rng, sample_without_replacement};

/// A loss table over `((I, V), (I', V'))`, dense.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteLossWorld {
    n_invariant: usize,
    n_distinctive: usize,
    table: Vec<f64>,
}

impl FiniteLossWorld {
    pub fn from_fn(
        n_invariant: usize,
        n_distinctive: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        if n_invariant < 1 || n_distinctive < 1 {
            return Err(GdtError::domain("a loss world needs nonempty factor spaces"));
        }
        let n = n_invariant * n_distinctive;
        let mut table = Vec::with_capacity(n * n);
        for x in 0..n {
            let (i, v) = (x / n_distinctive, x % n_distinctive);
            for y in 0..n {
                let (i2, v2) = (y / n_distinctive, y % n_distinctive);
                let l = f(i, v, i2, v2);
                if !l.is_finite() {
                    return Err(GdtError::domain(format!(
                        "loss at (({i},{v}),({i2},{v2})) is not finite"
                    )));
                }
                table.push(l);
            }
        }
        Ok(Self { n_invariant, n_distinctive, table })
    }

    pub fn constant(n_invariant: usize, n_distinctive: usize, value: f64) -> Result<Self> {
        Self::from_fn(n_invariant, n_distinctive, |_, _, _, _| value)
    }

    /// Independent uniform `[0, 10]` entries.
    pub fn random_table(n_invariant: usize, n_distinctive: usize, seed: u64) -> Result<Self> {
        let mut rng = keyed_rng(seed, &[0x7ab1e]);
        Self::from_fn(n_invariant, n_distinctive, |_, _, _, _| rng.random_range(0.0..10.0))
    }

    /// A world with strongly separated stratum means and within-stratum
    /// noise shaped so that the `K_I` reused invariant draws behave, in
    /// variance, like `K_I²` independent pair draws.
    ///
    /// Stratum means lie in `[3, 7]` with the diagonal (`V = V'`) mean equal
    /// to the off-diagonal mean. Off-diagonal strata `(p, q)` carry noise
    /// `x(I) + x(I') + y(I, I')` with `x` zero-mean, `y` antisymmetric and
    /// `E[y²] = (4 K (n − K) / (n − 1) − 2) E[x²]`; the `x` of `(p, q)` is
    /// orthogonal to the `x` of `(q, p)`. Diagonal strata are noise free.
    /// Under these constraints the stratified variance equals
    /// `Σ σ²_jj' / (K_V⁴ K_I²)` exactly for `K_I = target_k_invariant`.
    pub fn stratified(
        n_invariant: usize,
        n_distinctive: usize,
        target_k_invariant: usize,
        noise_amplitude: f64,
        seed: u64,
    ) -> Result<Self> {
        let (n, k) = (n_invariant as f64, target_k_invariant as f64);
        if n_invariant < 2 || target_k_invariant < 1 || target_k_invariant >= n_invariant {
            return Err(GdtError::domain(format!(
                "stratified world needs 1 ≤ K_I < |T_I|, got K_I = {target_k_invariant}, |T_I| = {n_invariant}"
            )));
        }
        let ratio = 4.0 * k * (n - k) / (n - 1.0) - 2.0;
        if ratio <= 0.0 {
            return Err(GdtError::domain(format!(
                "no antisymmetric share balances K_I = {target_k_invariant} of {n_invariant}"
            )));
        }
        let mut rng = keyed_rng(seed, &[0x57_7a7]);
        let nv = n_distinctive;
        let mut mu: Vec<f64> = (0..nv * nv).map(|_| rng.random_range(3.0..7.0)).collect();
        let off_mean = (0..nv * nv).filter(|x| x / nv != x % nv).map(|x| mu[x]).sum::<f64>()
            / (nv * nv - nv).max(1) as f64;
        let diag_mean = (0..nv).map(|p| mu[p * nv + p]).sum::<f64>() / nv as f64;
        for p in 0..nv {
            mu[p * nv + p] += off_mean - diag_mean;
        }

        let ni = n_invariant;
        let mut x_of: Vec<Option<Vec<f64>>> = vec![None; nv * nv];
        let mut noise: Vec<Vec<f64>> = vec![vec![0.0; ni * ni]; nv * nv];
        for p in 0..nv {
            for q in 0..nv {
                if p == q {
                    continue;
                }
                let mut x: Vec<f64> = (0..ni).map(|_| StandardNormal.sample(&mut rng)).collect();
                center(&mut x);
                if let Some(other) = &x_of[q * nv + p] {
                    let proj = dot(&x, other) / dot(other, other);
                    x.iter_mut().zip(other).for_each(|(a, b)| *a -= proj * b);
                }
                let v = dot(&x, &x) / ni as f64;
                let z: Vec<f64> = (0..ni * ni).map(|_| StandardNormal.sample(&mut rng)).collect();
                let mut y: Vec<f64> = (0..ni * ni)
                    .map(|c| {
                        let (a, b) = (c / ni, c % ni);
                        z[a * ni + b] - z[b * ni + a]
                    })
                    .collect();
                let y2 = dot(&y, &y) / (ni * ni) as f64;
                let scale = (ratio * v / y2).sqrt();
                y.iter_mut().for_each(|e| *e *= scale);
                let mut g: Vec<f64> =
                    (0..ni * ni).map(|c| x[c / ni] + x[c % ni] + y[c]).collect();
                let peak = g.iter().fold(0.0f64, |m, e| m.max(e.abs()));
                g.iter_mut().for_each(|e| *e *= noise_amplitude / peak);
                noise[p * nv + q] = g;
                x_of[p * nv + q] = Some(x);
            }
        }
        Self::from_fn(n_invariant, n_distinctive, |i, v, i2, v2| {
            mu[v * nv + v2] + noise[v * nv + v2][i * ni + i2]
        })
    }

    /// The contrastive log-softmax term on a small embedding set:
    /// `ℓ(x, y) = log Σ_z exp(s_xz) − s_xy` with `s = ⟨e_x, e_z⟩ / ρ`, the
    /// sum running over every point of the world. `e(I, V)` is a unit vector
    /// near a per-`V` centre. The per-anchor term comes from [`anchor_losses`].
    ///
    /// [`anchor_losses`]: crate::loss::anchor_losses
    pub fn embedding_nce(
        n_invariant: usize,
        n_distinctive: usize,
        dim: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<Self> {
        use crate::loss::{anchor_losses, LossConfig, PairMask};
        use ndarray::Array2;

        let n = n_invariant * n_distinctive;
        let mut rng = keyed_rng(seed, &[0xe3b]);
        let centres: Vec<Vec<f64>> = (0..n_distinctive)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let mut emb = Array2::<f64>::zeros((n, dim));
        for x in 0..n {
            let v = x % n_distinctive;
            for d in 0..dim {
                let e: f64 = StandardNormal.sample(&mut rng);
                emb[[x, d]] = centres[v][d] + 0.5 * e;
            }
        }
        let emb = crate::loss::normalize_rows(emb.view())?.into_output();
        let cfg = LossConfig { temperature, ..LossConfig::default() };
        // With C = I and W = 1 the anchor term is `lse_x − s_xx`.
        let mask = PairMask::new(Array2::from_shape_fn((n, n), |(a, b)| a == b), Array2::from_elem((n, n), true))?;
        let self_terms = anchor_losses(emb.view(), &mask, &cfg)?;
        let sim = emb.dot(&emb.t()) / temperature;
        Self::from_fn(n_invariant, n_distinctive, |i, v, i2, v2| {
            let (x, y) = (i * n_distinctive + v, i2 * n_distinctive + v2);
            self_terms[x] + sim[[x, x]] - sim[[x, y]]
        })
    }

    /// `ℓ = δ[V = V']`.
    pub fn distinctive_indicator(n_invariant: usize, n_distinctive: usize) -> Result<Self> {
        Self::from_fn(n_invariant, n_distinctive, |_, v, _, v2| if v == v2 { 1.0 } else { 0.0 })
    }

    pub fn n_invariant(&self) -> usize {
        self.n_invariant
    }

    pub fn n_distinctive(&self) -> usize {
        self.n_distinctive
    }

    pub fn loss(&self, i: usize, v: usize, i2: usize, v2: usize) -> f64 {
        let n = self.n_invariant * self.n_distinctive;
        let x = i * self.n_distinctive + v;
        let y = i2 * self.n_distinctive + v2;
        self.table[x * n + y]
    }

    /// The world seen through a subset of distinctive values, relabelled
    /// `0..subset.len()` in the given order.
    pub fn restrict_distinctive(&self, subset: &[usize]) -> Result<Self> {
        check_distinct(subset, self.n_distinctive)?;
        Self::from_fn(self.n_invariant, subset.len(), |i, v, i2, v2| {
            self.loss(i, subset[v], i2, subset[v2])
        })
    }

    fn check_k(&self, k_i: usize, k_v: usize) -> Result<()> {
        if k_i == 0 || k_v == 0 || k_i > self.n_invariant || k_v > self.n_distinctive {
            return Err(GdtError::domain(format!(
                "K_I = {k_i}, K_V = {k_v} do not fit spaces of size {} and {}",
                self.n_invariant, self.n_distinctive
            )));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn center(x: &mut [f64]) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|e| *e -= m);
}

fn check_distinct(values: &[usize], n: usize) -> Result<()> {
    for (a, &v) in values.iter().enumerate() {
        if v >= n {
            return Err(GdtError::domain(format!("distinctive value {v} out of range 0..{n}")));
        }
        if values[..a].contains(&v) {
            return Err(GdtError::domain(format!("distinctive value {v} listed twice")));
        }
    }
    Ok(())
}

/// Mean of `ℓ` over all ordered pairs.
pub fn exact_loss(world: &FiniteLossWorld) -> f64 {
    world.table.iter().sum::<f64>() / world.table.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumStats {
    /// `L_jj'`, `K_V × K_V`.
    pub means: Vec<Vec<f64>>,
    /// `σ²_jj'` (population variance over all `|T_I|²` invariant pairs).
    pub variances: Vec<Vec<f64>>,
    /// `L`, the average of the stratum means.
    pub grand_mean: f64,
}

impl StratumStats {
    pub fn k_v(&self) -> usize {
        self.means.len()
    }

    pub fn sum_variances(&self) -> f64 {
        self.variances.iter().flatten().sum()
    }

    /// `Σ (L_jj' − L)²`.
    pub fn sum_mean_spread(&self) -> f64 {
        self.means.iter().flatten().map(|m| (m - self.grand_mean).powi(2)).sum()
    }
}

pub fn stratum_stats(world: &FiniteLossWorld, distinct_sample: &[usize]) -> Result<StratumStats> {
    check_distinct(distinct_sample, world.n_distinctive)?;
    if distinct_sample.is_empty() {
        return Err(GdtError::domain("empty distinctive sample"));
    }
    let ni = world.n_invariant;
    let count = (ni * ni) as f64;
    let kv = distinct_sample.len();
    let mut means = vec![vec![0.0; kv]; kv];
    let mut variances = vec![vec![0.0; kv]; kv];
    for (j, &v) in distinct_sample.iter().enumerate() {
        for (j2, &v2) in distinct_sample.iter().enumerate() {
            let mut acc = RunningMoments::default();
            for i in 0..ni {
                for i2 in 0..ni {
                    acc.push(world.loss(i, v, i2, v2));
                }
            }
            means[j][j2] = acc.mean;
            variances[j][j2] = acc.m2 / count;
        }
    }
    let grand_mean = means.iter().flatten().sum::<f64>() / (kv * kv) as f64;
    Ok(StratumStats { means, variances, grand_mean })
}

fn gdt_with<R: Rng + ?Sized>(world: &FiniteLossWorld, k_i: usize, k_v: usize, rng: &mut R) -> f64 {
    let is = sample_without_replacement(rng, world.n_invariant, k_i);
    let vs = sample_without_replacement(rng, world.n_distinctive, k_v);
    gdt_sum(world, &is, &vs)
}

fn gdt_sum(world: &FiniteLossWorld, is: &[usize], vs: &[usize]) -> f64 {
    let mut acc = 0.0;
    for &v in vs {
        for &v2 in vs {
            for &i in is {
                for &i2 in is {
                    acc += world.loss(i, v, i2, v2);
                }
            }
        }
    }
    acc / (is.len() * is.len() * vs.len() * vs.len()) as f64
}

fn naive_with<R: Rng + ?Sized>(world: &FiniteLossWorld, k_i: usize, k_v: usize, rng: &mut R) -> f64 {
    let n = k_i * k_i * k_v * k_v;
    let mut acc = 0.0;
    for _ in 0..n {
        let i = rng.random_range(0..world.n_invariant);
        let v = rng.random_range(0..world.n_distinctive);
        let i2 = rng.random_range(0..world.n_invariant);
        let v2 = rng.random_range(0..world.n_distinctive);
        acc += world.loss(i, v, i2, v2);
    }
    acc / n as f64
}

/// The stratified estimate: all `K_I² K_V²` pairs formed from one draw of
/// `K_I` invariant and `K_V` distinctive values.
pub fn gdt_estimate(world: &FiniteLossWorld, k_i: usize, k_v: usize, seed: u64) -> Result<f64> {
    world.check_k(k_i, k_v)?;
    Ok(gdt_with(world, k_i, k_v, &mut keyed_rng(seed, &[])))
}

/// The direct estimate: the mean of `K_I² K_V²` independently drawn pairs.
pub fn naive_estimate(world: &FiniteLossWorld, k_i: usize, k_v: usize, seed: u64) -> Result<f64> {
    world.check_k(k_i, k_v)?;
    Ok(naive_with(world, k_i, k_v, &mut keyed_rng(seed, &[])))
}

/// Exact mean and variance of the stratified estimate, by enumerating every
/// `K_I`-subset and `K_V`-subset (the estimate does not depend on order).
pub fn gdt_moments_by_enumeration(
    world: &FiniteLossWorld,
    k_i: usize,
    k_v: usize,
) -> Result<(f64, f64)> {
    world.check_k(k_i, k_v)?;
    let is = combinations(world.n_invariant, k_i);
    let vs = combinations(world.n_distinctive, k_v);
    let mut acc = RunningMoments::default();
    for a in &is {
        for b in &vs {
            acc.push(gdt_sum(world, a, b));
        }
    }
    Ok((acc.mean, acc.m2 / acc.n as f64))
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for v in start..n {
            cur.push(v);
            rec(v + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Welford accumulator with Chan's parallel merge.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningMoments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningMoments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&self, other: &Self) -> Self {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let mean = self.mean + d * other.n as f64 / n as f64;
        let m2 = self.m2 + other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        Self { n, mean, m2 }
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn standard_error(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }
}

const CHUNK: usize = 1024;

/// Runs `trial(t)` for `t in 0..n` and reduces in a fixed order: fixed-size
/// chunks accumulated serially, then merged pairwise left to right.
fn monte_carlo(n: usize, trial: impl Fn(u64) -> f64 + Sync) -> RunningMoments {
    let chunks: Vec<RunningMoments> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = RunningMoments::default();
            for t in c * CHUNK..((c + 1) * CHUNK).min(n) {
                acc.push(trial(t as u64));
            }
            acc
        })
        .collect();
    pairwise_merge(&chunks)
}

fn pairwise_merge(parts: &[RunningMoments]) -> RunningMoments {
    match parts {
        [] => RunningMoments::default(),
        [one] => *one,
        _ => {
            let mid = parts.len() / 2;
            pairwise_merge(&parts[..mid]).merge(&pairwise_merge(&parts[mid..]))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub mean: f64,
    pub variance: f64,
    pub standard_error: f64,
}

impl From<RunningMoments> for EstimatorSummary {
    fn from(m: RunningMoments) -> Self {
        Self { mean: m.mean, variance: m.variance(), standard_error: m.standard_error() }
    }
}

/// Which closed form of the naive variance the simulation agreed with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NaiveFormMatch {
    /// `Σ σ² / (K_V² K_I²) + Σ (L_jj' − L)² / K_V²`.
    Separate,
    /// `Σ (σ² + (L_jj' − L)²) / (K_V⁴ K_I²)`.
    Pooled,
    Both,
    Neither,
}

/// Relative tolerance for comparing empirical and closed-form variances.
pub const VARIANCE_REL_TOL: f64 = 0.05;
/// Standard errors allowed between an estimator mean and its target.
pub const MEAN_SE_TOL: f64 = 3.0;
pub const MIN_TRIALS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub k_invariant: usize,
    pub k_distinctive: usize,
    pub trial_count: usize,
    /// `L` over the full world.
    pub exact_l: f64,
    /// Distinctive values that define the strata, in draw order.
    pub distinct_sample: Vec<usize>,
    pub strata: StratumStats,
    /// Both estimators over the full world (all factors redrawn per trial).
    pub gdt_full: EstimatorSummary,
    pub naive_full: EstimatorSummary,
    /// Both estimators with the distinctive sample held fixed.
    pub gdt: EstimatorSummary,
    pub naive: EstimatorSummary,
    /// `Σ σ²_jj' / (K_V⁴ K_I²)` for the fixed sample.
    pub predicted_var_gdt: f64,
    /// The same closed form averaged over every possible distinctive sample.
    pub predicted_var_gdt_averaged: f64,
    /// Exact stratified variance for the fixed sample, by enumeration.
    pub exact_var_gdt: f64,
    /// `Σ σ² / (K_V² K_I²) + Σ (L_jj' − L)² / K_V²`.
    pub predicted_var_naive_separate: f64,
    /// `Σ (σ² + (L_jj' − L)²) / (K_V⁴ K_I²)`.
    pub predicted_var_naive_pooled: f64,
    pub naive_form_match: NaiveFormMatch,
    pub checks: VarianceChecks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarianceChecks {
    pub gdt_unbiased: bool,
    pub naive_unbiased: bool,
    pub gdt_variance_matches_closed_form: bool,
    pub naive_not_below_gdt: bool,
    /// `None` when the stratum means are all equal (no strict gap predicted).
    pub naive_strictly_above_gdt: Option<bool>,
}

impl VarianceChecks {
    pub fn all_pass(&self) -> bool {
        self.gdt_unbiased
            && self.naive_unbiased
            && self.gdt_variance_matches_closed_form
            && self.naive_not_below_gdt
            && self.naive_strictly_above_gdt.unwrap_or(true)
    }
}

fn within_rel(observed: f64, expected: f64, tol: f64) -> bool {
    if expected == 0.0 {
        observed.abs() <= f64::EPSILON
    } else {
        ((observed - expected) / expected).abs() <= tol
    }
}

fn within_se(m: &EstimatorSummary, target: f64) -> bool {
    let diff = (m.mean - target).abs();
    diff <= MEAN_SE_TOL * m.standard_error || diff <= 1e-12 * target.abs().max(1.0)
}

/// Runs both estimators `n_trials` times, on the full world and with the
/// distinctive sample held fixed, and compares against the closed forms.
pub fn run_variance_experiment(
    world: &FiniteLossWorld,
    k_i: usize,
    k_v: usize,
    n_trials: usize,
    seed: u64,
) -> Result<VarianceReport> {
    world.check_k(k_i, k_v)?;
    if n_trials < MIN_TRIALS {
        return Err(GdtError::domain(format!(
            "need at least {MIN_TRIALS} trials, got {n_trials}"
        )));
    }
    let distinct_sample =
        sample_without_replacement(&mut keyed_rng(seed, &[0]), world.n_distinctive, k_v);
    let strata = stratum_stats(world, &distinct_sample)?;
    let restricted = world.restrict_distinctive(&distinct_sample)?;

    let stream = |tag: u64| move |t: u64| derive_key(seed, &[tag, t]);
    let (s1, s2, s3, s4) = (stream(1), stream(2), stream(3), stream(4));
    let gdt_full: EstimatorSummary =
        monte_carlo(n_trials, |t| gdt_with(world, k_i, k_v, &mut keyed_rng(s1(t), &[]))).into();
    let naive_full: EstimatorSummary =
        monte_carlo(n_trials, |t| naive_with(world, k_i, k_v, &mut keyed_rng(s2(t), &[]))).into();
    let gdt: EstimatorSummary = monte_carlo(n_trials, |t| {
        gdt_with(&restricted, k_i, k_v, &mut keyed_rng(s3(t), &[]))
    })
    .into();
    let naive: EstimatorSummary = monte_carlo(n_trials, |t| {
        naive_with(&restricted, k_i, k_v, &mut keyed_rng(s4(t), &[]))
    })
    .into();

    let (kv, ki) = (k_v as f64, k_i as f64);
    let sum_var = strata.sum_variances();
    let spread = strata.sum_mean_spread();
    let predicted_var_gdt = sum_var / (kv.powi(4) * ki * ki);
    let predicted_var_naive_separate = sum_var / (kv * kv * ki * ki) + spread / (kv * kv);
    let predicted_var_naive_pooled = (sum_var + spread) / (kv.powi(4) * ki * ki);

    let subsets = combinations(world.n_distinctive, k_v);
    let mut averaged = 0.0;
    for s in &subsets {
        averaged += stratum_stats(world, s)?.sum_variances() / (kv.powi(4) * ki * ki);
    }
    let predicted_var_gdt_averaged = averaged / subsets.len() as f64;
    let (_, exact_var_gdt) = gdt_moments_by_enumeration(&restricted, k_i, k_v)?;

    let separate_ok = within_rel(naive.variance, predicted_var_naive_separate, VARIANCE_REL_TOL);
    let pooled_ok = within_rel(naive.variance, predicted_var_naive_pooled, VARIANCE_REL_TOL);
    let naive_form_match = match (separate_ok, pooled_ok) {
        (true, true) => NaiveFormMatch::Both,
        (true, false) => NaiveFormMatch::Separate,
        (false, true) => NaiveFormMatch::Pooled,
        (false, false) => NaiveFormMatch::Neither,
    };

    let exact_l = exact_loss(world);
    let checks = VarianceChecks {
        gdt_unbiased: within_se(&gdt_full, exact_l) && within_se(&gdt, strata.grand_mean),
        naive_unbiased: within_se(&naive_full, exact_l) && within_se(&naive, strata.grand_mean),
        gdt_variance_matches_closed_form: within_rel(
            gdt.variance,
            predicted_var_gdt,
            VARIANCE_REL_TOL,
        ),
        naive_not_below_gdt: naive.variance >= gdt.variance,
        naive_strictly_above_gdt: (spread > 0.0).then_some(naive.variance > gdt.variance),
    };

    Ok(VarianceReport {
        k_invariant: k_i,
        k_distinctive: k_v,
        trial_count: n_trials,
        exact_l,
        distinct_sample,
        strata,
        gdt_full,
        naive_full,
        gdt,
        naive,
        predicted_var_gdt,
        predicted_var_gdt_averaged,
        exact_var_gdt,
        predicted_var_naive_separate,
        predicted_var_naive_pooled,
        naive_form_match,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_world() {
        let w = FiniteLossWorld::constant(4, 3, 7.0).unwrap();
        assert_eq!(exact_loss(&w), 7.0);
        for seed in 0..20 {
            assert_eq!(gdt_estimate(&w, 2, 2, seed).unwrap(), 7.0);
            assert_eq!(naive_estimate(&w, 2, 2, seed).unwrap(), 7.0);
        }
        let s = stratum_stats(&w, &[0, 2]).unwrap();
        assert!(s.variances.iter().flatten().all(|&v| v == 0.0));
        let r = run_variance_experiment(&w, 2, 2, 1000, 1).unwrap();
        assert_eq!(r.gdt.variance, 0.0);
        assert_eq!(r.naive.variance, 0.0);
        assert_eq!(r.predicted_var_gdt, 0.0);
        assert_eq!(r.gdt.mean, 7.0);
    }

    #[test]
    fn indicator_world_exact_loss_is_quarter() {
        let w = FiniteLossWorld::distinctive_indicator(3, 4).unwrap();
        assert!((exact_loss(&w) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn up_weighted_stratum_matches_decomposition() {
        // ℓ = 1 everywhere except stratum (V, V') = (1, 2) which holds 9
        let w = FiniteLossWorld::from_fn(3, 3, |_, v, _, v2| {
            if (v, v2) == (1, 2) {
                9.0
            } else {
                1.0
            }
        })
        .unwrap();
        // one of nine strata at 9, the rest at 1
        let by_strata = (8.0 * 1.0 + 9.0) / 9.0;
        assert!((exact_loss(&w) - by_strata).abs() < 1e-14);
        let all = stratum_stats(&w, &[0, 1, 2]).unwrap();
        assert!((all.grand_mean - by_strata).abs() < 1e-14);
    }

    #[test]
    fn stratum_only_loss_has_no_within_variance() {
        let w = FiniteLossWorld::from_fn(5, 4, |_, v, _, v2| (v * 4 + v2) as f64).unwrap();
        let s = stratum_stats(&w, &[3, 1]).unwrap();
        assert!(s.variances.iter().flatten().all(|&v| v.abs() < 1e-24));
        assert_eq!(s.means[0][1], 13.0);
        assert_eq!(s.means[1][0], 7.0);
    }

    #[test]
    fn stratum_stats_match_two_pass() {
        let w = FiniteLossWorld::random_table(5, 4, 9).unwrap();
        let sample = [2, 0, 3];
        let s = stratum_stats(&w, &sample).unwrap();
        for (j, &v) in sample.iter().enumerate() {
            for (j2, &v2) in sample.iter().enumerate() {
                let vals: Vec<f64> =
                    (0..5).flat_map(|i| (0..5).map(move |i2| (i, i2))).map(|(i, i2)| w.loss(i, v, i2, v2)).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / vals.len() as f64;
                assert!((s.means[j][j2] - mean).abs() < 1e-12);
                assert!((s.variances[j][j2] - var).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duplicate_distinctive_values_rejected() {
        let w = FiniteLossWorld::constant(3, 3, 1.0).unwrap();
        assert!(stratum_stats(&w, &[1, 1]).is_err());
        assert!(gdt_estimate(&w, 4, 2, 0).is_err());
        assert!(naive_estimate(&w, 2, 4, 0).is_err());
        assert!(run_variance_experiment(&w, 2, 2, 10, 0).is_err());
    }

    #[test]
    fn exhaustive_gdt_is_exact() {
        let w = FiniteLossWorld::random_table(4, 3, 2).unwrap();
        let l = exact_loss(&w);
        for seed in 0..10 {
            assert!((gdt_estimate(&w, 4, 3, seed).unwrap() - l).abs() < 1e-12);
        }
    }

    #[test]
    fn stratified_world_closed_form_is_exact_by_enumeration() {
        let w = FiniteLossWorld::stratified(6, 6, 2, 1.5, 4).unwrap();
        for sample in [[0usize, 1], [4, 2], [5, 3]] {
            let r = w.restrict_distinctive(&sample).unwrap();
            let s = stratum_stats(&w, &sample).unwrap();
            let (mean, var) = gdt_moments_by_enumeration(&r, 2, 2).unwrap();
            let predicted = s.sum_variances() / 64.0;
            assert!((mean - s.grand_mean).abs() < 1e-12);
            assert!(((var - predicted) / predicted).abs() < 1e-9, "{var} vs {predicted}");
        }
        // unbiased over the full world as well
        let (mean, _) = gdt_moments_by_enumeration(&w, 2, 2).unwrap();
        assert!((mean - exact_loss(&w)).abs() < 1e-12);
    }

    #[test]
    fn stratified_world_is_bounded() {
        let w = FiniteLossWorld::stratified(6, 6, 2, 1.5, 8).unwrap();
        assert!(w.table.iter().all(|&l| (0.0..=10.0).contains(&l)));
    }

    #[test]
    fn chan_merge_matches_serial() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37 % 101) as f64).sqrt()).collect();
        let mut serial = RunningMoments::default();
        xs.iter().for_each(|&x| serial.push(x));
        let mut a = RunningMoments::default();
        let mut b = RunningMoments::default();
        xs[..377].iter().for_each(|&x| a.push(x));
        xs[377..].iter().for_each(|&x| b.push(x));
        let merged = a.merge(&b);
        assert_eq!(merged.n, serial.n);
        assert!((merged.mean - serial.mean).abs() < 1e-12);
        assert!((merged.variance() - serial.variance()).abs() < 1e-10);
    }

    #[test]
    fn experiment_is_deterministic() {
        let w = FiniteLossWorld::random_table(5, 5, 1).unwrap();
        let a = run_variance_experiment(&w, 2, 2, 2000, 3).unwrap();
        let b = run_variance_experiment(&w, 2, 2, 2000, 3).unwrap();
        assert_eq!(a, b);
    }
}
