//! Full-catalog Top-K ranking, accuracy metrics (Recall, Precision, F1, NDCG)
//! and catalog diversity (Entropy, Item Coverage, Gini index).

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::RelationMatrix;
use crate::scalar::Scalar;
use crate::trainer::{score, EmbeddingTable, ScoreFn};

/// Top-K item lists, one per ranked group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankingResult {
    pub k: usize,
    pub groups: Vec<usize>,
    pub lists: Vec<Vec<usize>>,
}

impl RankingResult {
    pub fn list(&self, pos: usize) -> &[usize] {
        &self.lists[pos]
    }
}

/// Orders scored items by descending score, ties by ascending index, and
/// keeps the first `k`.
pub fn top_k_of(scores: &[(usize, f64)], k: usize) -> Vec<usize> {
    let mut order: Vec<(usize, f64)> = scores.to_vec();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order.into_iter().take(k).map(|(i, _)| i).collect()
}

/// Ranks every catalog item for each group. With `mask`, the group's
/// training positives are removed from its candidates.
pub fn rank_topk<T: Scalar>(
    e: &EmbeddingTable<T>,
    n_groups: usize,
    groups: &[usize],
    k: usize,
    mask: Option<&RelationMatrix>,
    how: ScoreFn,
) -> Result<RankingResult> {
    if k == 0 {
        return Err(Error::Eval("K must be at least 1".into()));
    }
    if e.rows() < n_groups {
        return Err(Error::Shape(format!("{} rows cannot hold {n_groups} groups", e.rows())));
    }
    let n_items = e.rows() - n_groups;
    if let Some(&g) = groups.iter().find(|&&g| g >= n_groups) {
        return Err(Error::Shape(format!("group index {g} out of range")));
    }
    if let Some(m) = mask {
        if m.n_heads() > n_groups || m.n_tails() > n_items {
            return Err(Error::Shape("mask relation larger than the embedding table".into()));
        }
    }
    let lists = groups
        .par_iter()
        .map(|&g| {
            let masked: &[usize] = match mask {
                Some(m) if g < m.n_heads() => m.row(g),
                _ => &[],
            };
            let scores: Vec<(usize, f64)> = (0..n_items)
                .filter(|i| masked.binary_search(i).is_err())
                .map(|i| (i, score(e, n_groups, g, i, how).as_f64()))
                .collect();
            top_k_of(&scores, k)
        })
        .collect();
    Ok(RankingResult {
        k,
        groups: groups.to_vec(),
        lists,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyAtK {
    pub k: usize,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub ndcg: f64,
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// Per-K accuracy averaged over ranked groups with at least one test item.
pub fn accuracy_metrics(rankings: &RankingResult, test: &RelationMatrix, ks: &[usize]) -> Result<Vec<AccuracyAtK>> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Eval("K list must be nonempty and positive".into()));
    }
    let mut sums = vec![[0.0f64; 4]; ks.len()];
    let mut counted = 0usize;
    for (pos, &g) in rankings.groups.iter().enumerate() {
        let relevant: &[usize] = if g < test.n_heads() { test.row(g) } else { &[] };
        if relevant.is_empty() {
            continue;
        }
        counted += 1;
        let list = rankings.list(pos);
        for (slot, &k) in ks.iter().enumerate() {
            let mut hits = 0usize;
            let mut dcg = 0.0;
            for (r, item) in list.iter().take(k).enumerate() {
                if relevant.binary_search(item).is_ok() {
                    hits += 1;
                    dcg += discount(r + 1);
                }
            }
            let idcg: f64 = (1..=k.min(relevant.len())).map(discount).sum();
            let recall = hits as f64 / relevant.len() as f64;
            let precision = hits as f64 / k as f64;
            let f1 = if hits == 0 {
                0.0
            } else {
                2.0 * recall * precision / (recall + precision)
            };
            let acc = &mut sums[slot];
            acc[0] += recall;
            acc[1] += precision;
            acc[2] += f1;
            acc[3] += dcg / idcg;
        }
    }
    let denom = counted.max(1) as f64;
    Ok(ks
        .iter()
        .zip(sums)
        .map(|(&k, s)| AccuracyAtK {
            k,
            recall: s[0] / denom,
            precision: s[1] / denom,
            f1: s[2] / denom,
            ndcg: s[3] / denom,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diversity {
    pub entropy: f64,
    pub coverage: f64,
    pub gini: f64,
}

/// Diversity from per-item exposure counts over a catalog of `counts.len()`
/// items. Entropy is taken in the given log base.
pub fn diversity_from_counts(counts: &[usize], log_base: f64) -> Result<Diversity> {
    let n = counts.len();
    let total: usize = counts.iter().sum();
    if n == 0 || total == 0 {
        return Err(Error::Eval("no recommendations to measure".into()));
    }
    let p: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let entropy = -p
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| q * q.log(log_base))
        .sum::<f64>();
    let coverage = counts.iter().filter(|&&c| c > 0).count() as f64 / n as f64;
    let gini = if n == 1 {
        0.0
    } else {
        let mut q = p;
        q.sort_by(f64::total_cmp);
        let nf = n as f64;
        q.iter()
            .enumerate()
            .map(|(j, &v)| (2.0 * (j + 1) as f64 - nf - 1.0) * v)
            .sum::<f64>()
            / (nf - 1.0)
    };
    Ok(Diversity {
        entropy: entropy.max(0.0),
        coverage,
        gini,
    })
}

/// Diversity of the recommended lists: each list counts an item at most once.
pub fn diversity_metrics(rankings: &RankingResult, catalog_size: usize, log_base: f64) -> Result<Diversity> {
    if rankings.lists.is_empty() {
        return Err(Error::Eval("empty rankings".into()));
    }
    let mut counts = vec![0usize; catalog_size];
    for list in &rankings.lists {
        let mut seen: Vec<usize> = list.clone();
        seen.sort_unstable();
        seen.dedup();
        for i in seen {
            if i >= catalog_size {
                return Err(Error::Shape(format!("item {i} outside catalog of {catalog_size}")));
            }
            counts[i] += 1;
        }
    }
    diversity_from_counts(&counts, log_base)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: Vec<AccuracyAtK>,
    /// List length the diversity metrics were measured at.
    pub diversity_k: usize,
    pub diversity: Diversity,
    pub groups_evaluated: usize,
}

impl MetricsReport {
    pub fn ks(&self) -> Vec<usize> {
        self.accuracy.iter().map(|a| a.k).collect()
    }

    /// `metric<TAB>k<TAB>value` records.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for a in &self.accuracy {
            for (name, v) in [("recall", a.recall), ("precision", a.precision), ("f1", a.f1), ("ndcg", a.ndcg)] {
                let _ = writeln!(out, "{name}\t{}\t{v:.10}", a.k);
            }
        }
        let d = &self.diversity;
        for (name, v) in [("entropy", d.entropy), ("item_coverage", d.coverage), ("gini_index", d.gini)] {
            let _ = writeln!(out, "{name}\t{}\t{v:.10}", self.diversity_k);
        }
        let _ = writeln!(out, "groups\t-\t{}", self.groups_evaluated);
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>6} {:>10} {:>10} {:>10} {:>10}", "K", "Recall", "Precision", "F1", "NDCG");
        for a in &self.accuracy {
            let _ = writeln!(
                out,
                "{:>6} {:>10.5} {:>10.5} {:>10.5} {:>10.5}",
                a.k, a.recall, a.precision, a.f1, a.ndcg
            );
        }
        let d = &self.diversity;
        let _ = writeln!(out);
        let _ = writeln!(out, "{:>6} {:>10} {:>10} {:>10}", "K", "Entropy", "Coverage", "Gini");
        let _ = writeln!(
            out,
            "{:>6} {:>10.5} {:>10.5} {:>10.5}",
            self.diversity_k, d.entropy, d.coverage, d.gini
        );
        let _ = writeln!(out, "\ngroups with test items: {}", self.groups_evaluated);
        out
    }
}

/// Ranks all groups at the largest K and computes every metric. Groups
/// without test items count towards diversity only.
pub fn evaluate<T: Scalar>(
    e: &EmbeddingTable<T>,
    n_groups: usize,
    test: &RelationMatrix,
    ks: &[usize],
    mask: Option<&RelationMatrix>,
    how: ScoreFn,
    log_base: f64,
) -> Result<MetricsReport> {
    let k_max = ks.iter().copied().max().ok_or_else(|| Error::Eval("empty K list".into()))?;
    let groups: Vec<usize> = (0..n_groups).collect();
    let rankings = rank_topk(e, n_groups, &groups, k_max, mask, how)?;
    let accuracy = accuracy_metrics(&rankings, test, ks)?;
    let diversity = diversity_metrics(&rankings, e.rows() - n_groups, log_base)?;
    let groups_evaluated = groups
        .iter()
        .filter(|&&g| g < test.n_heads() && !test.row(g).is_empty())
        .count();
    Ok(MetricsReport {
        accuracy,
        diversity_k: k_max,
        diversity,
        groups_evaluated,
    })
}

/// Mean Recall@K over groups with relevant items; used for early stopping.
pub fn recall_at<T: Scalar>(
    e: &EmbeddingTable<T>,
    n_groups: usize,
    relevant: &RelationMatrix,
    k: usize,
    mask: Option<&RelationMatrix>,
    how: ScoreFn,
) -> Result<f64> {
    let groups: Vec<usize> = (0..n_groups.min(relevant.n_heads()))
        .filter(|&g| !relevant.row(g).is_empty())
        .collect();
    if groups.is_empty() {
        return Ok(0.0);
    }
    let rankings = rank_topk(e, n_groups, &groups, k, mask, how)?;
    Ok(accuracy_metrics(&rankings, relevant, &[k])?[0].recall)
}
