//! Training objectives and their analytic gradients.
//!
//! All objectives act on a table over the joint node space. Only the first
//! `trainable_dim` columns receive gradient; the remaining columns hold the
//! frozen pre-trained half of a concatenated table.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::config::{AlphaMode, LossVariant, TrainConfig};
use super::embedding::EmbeddingTable;
use crate::coefficients::BlockMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Added to every contrastive denominator.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Candidates of the contrastive denominator for one mini-batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CandidatePool {
    All,
    Subset(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    pub loss: T,
    /// Gradient with the table's shape; frozen columns are exactly zero.
    pub grad: Option<EmbeddingTable<T>>,
    /// Rows with zero norm, whose cosines were taken as 0.
    pub zero_norm_rows: usize,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn axpy<T: Scalar>(out: &mut [T], k: T, x: &[T]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += k * v;
    }
}

/// Unit rows and norms; zero rows stay zero.
fn normalize<T: Scalar>(e: &EmbeddingTable<T>) -> (Vec<T>, Vec<T>, usize) {
    let d = e.dim();
    let mut unit = e.as_slice().to_vec();
    let mut norms = Vec::with_capacity(e.rows());
    let mut zeros = 0;
    for row in unit.chunks_mut(d) {
        let n = dot(row, row).sqrt();
        if n > T::zero() {
            row.iter_mut().for_each(|v| *v /= n);
        } else {
            zeros += 1;
        }
        norms.push(n);
    }
    (unit, norms, zeros)
}

/// Cosine similarity; 0 when either row has zero norm.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> T {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == T::zero() || nb == T::zero() {
        T::zero()
    } else {
        dot(a, b) / (na * nb)
    }
}

fn check_shapes<T: Scalar>(blocks: &BlockMatrix<T>, e: &EmbeddingTable<T>, trainable_dim: usize) -> Result<()> {
    if blocks.node_count() != e.rows() {
        return Err(Error::Shape(format!(
            "blocks cover {} nodes, embeddings have {} rows",
            blocks.node_count(),
            e.rows()
        )));
    }
    if trainable_dim > e.dim() {
        return Err(Error::Shape(format!(
            "trainable width {trainable_dim} exceeds embedding dim {}",
            e.dim()
        )));
    }
    Ok(())
}

fn check_pair(n: usize, (v1, v2): (usize, usize)) -> Result<()> {
    if v1 >= n || v2 >= n {
        return Err(Error::Shape(format!("pair ({v1}, {v2}) out of range for {n} nodes")));
    }
    if v1 == v2 {
        return Err(Error::Train(format!("self-pair ({v1}, {v1}) in batch")));
    }
    Ok(())
}

struct AnchorTerm<T> {
    anchor: usize,
    loss: T,
    /// ∂loss/∂cos(anchor, candidate[j]), aligned with the candidate list.
    cand_coef: Vec<T>,
    /// ∂loss/∂cos(anchor, positive) from the numerators.
    pos_coef: Vec<(usize, T)>,
}

/// Contrastive objective (batch mean). Per pair `(v1, v2)` with
/// `D = Σ_{c ≠ v1} β[v1,c] exp(cos(v1,c)/τ) + floor`:
/// Weight mode gives `α (log D - cos(v1,v2)/τ)`, Literal mode
/// `log D - cos(v1,v2)/τ - log α`.
fn contrastive<T: Scalar>(
    batch: &[(usize, usize)],
    blocks: &BlockMatrix<T>,
    e: &EmbeddingTable<T>,
    trainable_dim: usize,
    cfg: &TrainConfig<T>,
    pool: &CandidatePool,
    want_grad: bool,
) -> Result<Evaluation<T>> {
    check_shapes(blocks, e, trainable_dim)?;
    if batch.is_empty() {
        return Err(Error::Train("empty batch".into()));
    }
    let n = e.rows();
    let d = e.dim();
    let tau = cfg.tau;
    let floor = T::of(DENOMINATOR_FLOOR);

    let mut by_anchor: BTreeMap<usize, Vec<(usize, T)>> = BTreeMap::new();
    for &pair in batch {
        check_pair(n, pair)?;
        let alpha = blocks.alpha(pair.0, pair.1);
        if alpha <= T::zero() {
            return Err(Error::Train(format!(
                "pair ({}, {}) has no positive consistency",
                pair.0, pair.1
            )));
        }
        by_anchor.entry(pair.0).or_default().push((pair.1, alpha));
    }

    let candidates: Vec<usize> = match pool {
        CandidatePool::All => (0..n).collect(),
        CandidatePool::Subset(c) => {
            if let Some(&bad) = c.iter().find(|&&c| c >= n) {
                return Err(Error::Shape(format!("candidate {bad} out of range")));
            }
            c.clone()
        }
    };
    let (unit, norms, zero_rows) = normalize(e);
    let urow = |v: usize| &unit[v * d..(v + 1) * d];

    let anchors: Vec<(usize, Vec<(usize, T)>)> = by_anchor.into_iter().collect();
    let terms: Vec<AnchorTerm<T>> = anchors
        .par_iter()
        .map_init(
            || vec![T::zero(); n],
            |beta, (anchor, positives)| {
                let a = *anchor;
                blocks.beta_row_into(a, beta);
                let ua = urow(a);
                let logits: Vec<T> = candidates
                    .iter()
                    .map(|&c| if c == a { T::neg_infinity() } else { dot(ua, urow(c)) / tau })
                    .collect();
                if candidates.iter().all(|&c| c == a) {
                    return Err(Error::Train(format!("empty candidate pool for anchor {a}")));
                }
                // log-sum-exp over β-weighted candidates, shifted by the largest logit
                let shift = logits.iter().copied().fold(T::neg_infinity(), T::max);
                let mut weights: Vec<T> = candidates
                    .iter()
                    .zip(&logits)
                    .map(|(&c, &x)| if c == a { T::zero() } else { beta[c] * (x - shift).exp() })
                    .collect();
                let total = weights.iter().copied().sum::<T>() + floor * (-shift).exp();
                let log_d = shift + total.ln();

                let mut loss = T::zero();
                let mut weight_sum = T::zero();
                let mut pos_coef = Vec::with_capacity(positives.len());
                for &(v2, alpha) in positives {
                    let s = dot(ua, urow(v2));
                    let (w, offset) = match cfg.alpha_mode {
                        AlphaMode::Weight => (alpha, T::zero()),
                        AlphaMode::Literal => (T::one(), -alpha.ln()),
                    };
                    loss += w * (log_d - s / tau) + offset;
                    weight_sum += w;
                    pos_coef.push((v2, -w / tau));
                }
                // softmax weights p_c = β_c exp(x_c) / D, scaled by Σw / τ
                let scale = weight_sum / (tau * total);
                weights.iter_mut().for_each(|p| *p *= scale);
                Ok(AnchorTerm {
                    anchor: a,
                    loss,
                    cand_coef: weights,
                    pos_coef,
                })
            },
        )
        .collect::<Result<Vec<_>>>()?;

    let inv_batch = T::one() / T::of_usize(batch.len());
    let loss = terms.iter().map(|t| t.loss).sum::<T>() * inv_batch;
    if !want_grad {
        return Ok(Evaluation {
            loss,
            grad: None,
            zero_norm_rows: zero_rows,
        });
    }

    // gradient with respect to the unit rows
    let mut g_unit = vec![T::zero(); n * d];
    for t in &terms {
        let mut acc = vec![T::zero(); d];
        for (j, &c) in candidates.iter().enumerate() {
            if t.cand_coef[j] != T::zero() {
                axpy(&mut acc, t.cand_coef[j], urow(c));
            }
        }
        for &(v2, k) in &t.pos_coef {
            axpy(&mut acc, k, urow(v2));
        }
        axpy(&mut g_unit[t.anchor * d..(t.anchor + 1) * d], inv_batch, &acc);
    }
    // candidate side: each candidate row sums over anchors in a fixed order
    let cand_grads: Vec<Vec<T>> = (0..candidates.len())
        .into_par_iter()
        .map(|j| {
            let mut acc = vec![T::zero(); d];
            for t in &terms {
                let k = t.cand_coef[j];
                if k != T::zero() {
                    axpy(&mut acc, k, urow(t.anchor));
                }
            }
            acc
        })
        .collect();
    for (j, &c) in candidates.iter().enumerate() {
        axpy(&mut g_unit[c * d..(c + 1) * d], inv_batch, &cand_grads[j]);
    }
    for t in &terms {
        for &(v2, k) in &t.pos_coef {
            let ua = urow(t.anchor).to_vec();
            axpy(&mut g_unit[v2 * d..(v2 + 1) * d], k * inv_batch, &ua);
        }
    }

    // through the normalisation: ∂/∂e = (g - (g·u)u) / |e|
    let mut grad = EmbeddingTable::zeros(n, d, e.role());
    for v in 0..n {
        if norms[v] == T::zero() {
            continue;
        }
        let g = &g_unit[v * d..(v + 1) * d];
        let u = urow(v);
        let proj = dot(g, u);
        let out = grad.row_mut(v);
        for k in 0..trainable_dim {
            out[k] = (g[k] - proj * u[k]) / norms[v];
        }
    }
    Ok(Evaluation {
        loss,
        grad: Some(grad),
        zero_norm_rows: zero_rows,
    })
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let z = x.exp();
        z / (T::one() + z)
    }
}

/// `ln(1 + exp(x))` without overflow.
fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Pairwise ablation objectives on raw inner products. Origin sums over
/// pairs; MSE and CE average over pairs.
fn ablation<T: Scalar>(
    variant: LossVariant,
    pairs: &[(usize, usize)],
    blocks: &BlockMatrix<T>,
    e: &EmbeddingTable<T>,
    trainable_dim: usize,
    want_grad: bool,
) -> Result<Evaluation<T>> {
    check_shapes(blocks, e, trainable_dim)?;
    if variant == LossVariant::Contrastive {
        return Err(Error::Config("contrastive is not an ablation objective".into()));
    }
    if pairs.is_empty() {
        return Err(Error::Train("empty batch".into()));
    }
    let n = e.rows();
    let scale = match variant {
        LossVariant::Origin => T::one(),
        _ => T::one() / T::of_usize(pairs.len()),
    };
    let mut loss = T::zero();
    let mut grad = want_grad.then(|| EmbeddingTable::zeros(n, e.dim(), e.role()));
    for &(v1, v2) in pairs {
        check_pair(n, (v1, v2))?;
        let (alpha, beta) = (blocks.alpha(v1, v2), blocks.beta(v1, v2));
        let x = dot(e.row(v1), e.row(v2));
        let (value, slope) = match variant {
            LossVariant::Origin => {
                let s = sigmoid(x);
                ((beta - alpha) * s, (beta - alpha) * s * (T::one() - s))
            }
            LossVariant::Mse => {
                let r = x - (alpha - beta);
                (r * r, (T::one() + T::one()) * r)
            }
            LossVariant::CrossEntropy => {
                let s = sigmoid(x);
                (alpha * softplus(-x) + beta * softplus(x), beta * s - alpha * (T::one() - s))
            }
            LossVariant::Contrastive => unreachable!(),
        };
        loss += value * scale;
        if let Some(g) = grad.as_mut() {
            let k = slope * scale;
            let r1 = e.row(v1)[..trainable_dim].to_vec();
            let r2 = e.row(v2)[..trainable_dim].to_vec();
            axpy(&mut g.row_mut(v1)[..trainable_dim], k, &r2);
            axpy(&mut g.row_mut(v2)[..trainable_dim], k, &r1);
        }
    }
    Ok(Evaluation {
        loss,
        grad,
        zero_norm_rows: 0,
    })
}

/// Batch-mean contrastive loss.
pub fn contrastive_loss<T: Scalar>(
    batch: &[(usize, usize)],
    blocks: &BlockMatrix<T>,
    e: &EmbeddingTable<T>,
    cfg: &TrainConfig<T>,
    pool: &CandidatePool,
) -> Result<T> {
    contrastive(batch, blocks, e, e.dim(), cfg, pool, false).map(|ev| ev.loss)
}

/// Ablation loss (`Origin`, `Mse` or `CrossEntropy`) over explicit pairs.
pub fn ablation_loss<T: Scalar>(
    variant: LossVariant,
    pairs: &[(usize, usize)],
    blocks: &BlockMatrix<T>,
    e: &EmbeddingTable<T>,
) -> Result<T> {
    ablation(variant, pairs, blocks, e, e.dim(), false).map(|ev| ev.loss)
}

/// Loss and gradient of the configured objective. Columns at or beyond
/// `trainable_dim` receive zero gradient.
pub fn loss_gradients<T: Scalar>(
    batch: &[(usize, usize)],
    blocks: &BlockMatrix<T>,
    e: &EmbeddingTable<T>,
    trainable_dim: usize,
    cfg: &TrainConfig<T>,
    pool: &CandidatePool,
) -> Result<Evaluation<T>> {
    match cfg.loss_variant {
        LossVariant::Contrastive => contrastive(batch, blocks, e, trainable_dim, cfg, pool, true),
        v => ablation(v, batch, blocks, e, trainable_dim, true),
    }
}

/// Loss of the configured objective without the gradient.
pub fn loss_value<T: Scalar>(
    batch: &[(usize, usize)],
    blocks: &BlockMatrix<T>,
    e: &EmbeddingTable<T>,
    cfg: &TrainConfig<T>,
    pool: &CandidatePool,
) -> Result<T> {
    match cfg.loss_variant {
        LossVariant::Contrastive => contrastive_loss(batch, blocks, e, cfg, pool),
        v => ablation_loss(v, batch, blocks, e),
    }
}
