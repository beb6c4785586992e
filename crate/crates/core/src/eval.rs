//! Retrieval, few-shot classification and embedding dispersion.
//!
//! All similarities are inner products of unit vectors. Ranking ties are
//! broken by ascending gallery index.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView2, Axis};
use serde::Serialize;

use crate::encoder::EncoderParams;
use crate::error::{GdtError, Result};
use crate::world::{Latent, Modality, SyntheticWorld};

const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbeddings {
    embeddings: Array2<f64>,
    labels: Vec<usize>,
}

impl LabeledEmbeddings {
    pub fn new(embeddings: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if embeddings.nrows() != labels.len() {
            return Err(GdtError::domain(format!(
                "{} embeddings with {} labels",
                embeddings.nrows(),
                labels.len()
            )));
        }
        for (i, r) in embeddings.rows().into_iter().enumerate() {
            let n = r.dot(&r).sqrt();
            if !((n - 1.0).abs() <= UNIT_TOL) {
                return Err(GdtError::domain(format!("embedding {i} has norm {n}, expected 1")));
            }
        }
        Ok(Self { embeddings, labels })
    }

    pub fn embeddings(&self) -> ArrayView2<'_, f64> {
        self.embeddings.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn check_dims(a: &LabeledEmbeddings, b: &LabeledEmbeddings) -> Result<()> {
    if a.embeddings.ncols() != b.embeddings.ncols() {
        return Err(GdtError::domain(format!(
            "embedding widths differ: {} vs {}",
            a.embeddings.ncols(),
            b.embeddings.ncols()
        )));
    }
    Ok(())
}

/// Gallery indices ordered by decreasing similarity, ties by index.
fn ranking(sims: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..sims.len()).collect();
    idx.sort_by(|&x, &y| sims[y].partial_cmp(&sims[x]).unwrap_or(Ordering::Equal).then(x.cmp(&y)));
    idx
}

fn rankings(queries: &LabeledEmbeddings, gallery: &LabeledEmbeddings) -> Vec<Vec<usize>> {
    let sims = queries.embeddings.dot(&gallery.embeddings.t());
    sims.axis_iter(Axis(0)).map(|row| ranking(&row.to_vec())).collect()
}

/// Fraction of queries whose `k` nearest gallery items include one with the
/// query's label.
pub fn recall_at_k(queries: &LabeledEmbeddings, gallery: &LabeledEmbeddings, k: usize) -> Result<f64> {
    check_dims(queries, gallery)?;
    if k == 0 || k > gallery.len() {
        return Err(GdtError::domain(format!("k = {k} with a gallery of {}", gallery.len())));
    }
    if queries.is_empty() {
        return Err(GdtError::domain("no queries"));
    }
    let hits = rankings(queries, gallery)
        .iter()
        .zip(&queries.labels)
        .filter(|(rank, &q)| rank[..k].iter().any(|&g| gallery.labels[g] == q))
        .count();
    Ok(hits as f64 / queries.len() as f64)
}

/// Majority vote of the `k` nearest training items. A tied vote goes to the
/// tied label whose nearest member ranks first.
pub fn knn_classify(train: &LabeledEmbeddings, test: &LabeledEmbeddings, k: usize) -> Result<Vec<usize>> {
    check_dims(train, test)?;
    if k == 0 || k > train.len() {
        return Err(GdtError::domain(format!("k = {k} with {} training items", train.len())));
    }
    Ok(rankings(test, train)
        .iter()
        .map(|rank| {
            let top = &rank[..k];
            let mut best: Option<(usize, usize, usize)> = None;
            for (pos, &g) in top.iter().enumerate() {
                let label = train.labels[g];
                if top[..pos].iter().any(|&h| train.labels[h] == label) {
                    continue;
                }
                let votes = top.iter().filter(|&&h| train.labels[h] == label).count();
                let better = match best {
                    None => true,
                    Some((_, v, _)) => votes > v,
                };
                if better {
                    best = Some((label, votes, pos));
                }
            }
            best.expect("k ≥ 1").0
        })
        .collect())
}

pub fn knn_accuracy(train: &LabeledEmbeddings, test: &LabeledEmbeddings, k: usize) -> Result<f64> {
    let pred = knn_classify(train, test, k)?;
    if test.is_empty() {
        return Err(GdtError::domain("no test items"));
    }
    let correct = pred.iter().zip(&test.labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / test.len() as f64)
}

/// Mean over groups of the mean per-dimension (population) standard
/// deviation across each group's rows.
pub fn dispersion_of_groups(groups: &[Array2<f64>]) -> Result<f64> {
    if groups.is_empty() {
        return Err(GdtError::domain("no groups"));
    }
    let mut total = 0.0;
    for (i, g) in groups.iter().enumerate() {
        if g.nrows() == 0 || g.ncols() == 0 {
            return Err(GdtError::domain(format!("group {i} is empty")));
        }
        // Pairwise form of the population variance: exactly zero for equal rows.
        let n = g.nrows() as f64;
        let mut var = ndarray::Array1::<f64>::zeros(g.ncols());
        for a in g.rows() {
            for b in g.rows() {
                var.zip_mut_with(&(&a - &b), |v, d| *v += d * d);
            }
        }
        var /= 2.0 * n * n;
        total += var.mapv(f64::sqrt).mean().expect("non-empty");
    }
    Ok(total / groups.len() as f64)
}

/// Dispersion of clean visual embeddings of the first `n_videos` identities
/// across shifts `0..n_shifts`.
pub fn dispersion_across_shifts(
    params: &EncoderParams,
    world: &SyntheticWorld,
    n_videos: usize,
    n_shifts: usize,
) -> Result<f64> {
    let cfg = world.config();
    if n_videos == 0 || n_videos > cfg.n_identities || n_shifts < 2 || n_shifts > cfg.n_shifts {
        return Err(GdtError::domain(format!(
            "dispersion over {n_videos} videos × {n_shifts} shifts in a {}×{} world",
            cfg.n_identities, cfg.n_shifts
        )));
    }
    let groups = (0..n_videos)
        .map(|i| {
            let views = (0..n_shifts)
                .map(|s| world.clean_view(Latent { identity: i, shift: s, reversed: false, modality: Modality::V }))
                .collect::<Result<Vec<_>>>()?;
            params.embed(&views)
        })
        .collect::<Result<Vec<_>>>()?;
    dispersion_of_groups(&groups)
}

/// Held-out evaluation of a trained encoder on the visual modality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub knn_accuracy: f64,
    pub dispersion: f64,
}

/// Embeds `(identity, shift)` pairs as visual views with augmentation draw
/// `draw`, labelled by identity.
pub fn embed_clips(
    params: &EncoderParams,
    world: &SyntheticWorld,
    clips: &[(usize, usize)],
    draw: u64,
) -> Result<LabeledEmbeddings> {
    let views = clips
        .iter()
        .map(|&(i, s)| world.view(Latent { identity: i, shift: s, reversed: false, modality: Modality::V }, draw))
        .collect::<Result<Vec<_>>>()?;
    LabeledEmbeddings::new(params.embed(&views)?, clips.iter().map(|c| c.0).collect())
}

/// Queries are odd shifts, the gallery even shifts; every identity appears
/// equally often, so chance recall@1 is `1 / n_identities`. The few-shot
/// classifier sees one clip per identity at shift 0.
pub fn evaluate(params: &EncoderParams, world: &SyntheticWorld) -> Result<EvalMetrics> {
    let cfg = world.config();
    if cfg.n_shifts < 2 {
        return Err(GdtError::domain("evaluation needs at least two shifts"));
    }
    let n = cfg.n_identities;
    let pairs = |parity: usize| -> Vec<(usize, usize)> {
        (0..n).flat_map(|i| (0..cfg.n_shifts).filter(move |s| s % 2 == parity).map(move |s| (i, s))).collect()
    };
    let draws = cfg.n_augmentations as u64;
    let gallery = embed_clips(params, world, &pairs(0), 0)?;
    let queries = embed_clips(params, world, &pairs(1), 1 % draws)?;
    let shots: Vec<(usize, usize)> = (0..n).map(|i| (i, 0)).collect();
    let support = embed_clips(params, world, &shots, 2 % draws)?;
    Ok(EvalMetrics {
        recall_at_1: recall_at_k(&queries, &gallery, 1)?,
        recall_at_5: recall_at_k(&queries, &gallery, 5.min(gallery.len()))?,
        knn_accuracy: knn_accuracy(&support, &queries, 1)?,
        dispersion: dispersion_across_shifts(params, world, n.min(32), cfg.n_shifts)?,
    })
}
