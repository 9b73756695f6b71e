#![allow(dead_code)]

use std::collections::HashMap;

use extre::{
    assemble_blocks, BlockMatrix, EmbeddingRole, EmbeddingTable, NodeKind, RankingResult, RelationMatrix, Stage,
    TaskPreset, TripartiteGraph,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const T1_Z: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 1), (1, 2)];
pub const T1_X: [(usize, usize); 5] = [(0, 0), (1, 0), (1, 1), (2, 0), (2, 1)];
/// Group-item edges added to T1 for fine-tuning checks: g1-i1 and g2-i2.
pub const T1_Y: [(usize, usize); 2] = [(0, 0), (1, 1)];

pub fn t1() -> TripartiteGraph {
    TripartiteGraph::from_index_edges(2, 3, 2, &T1_Z, &T1_X, None).unwrap()
}

pub fn t1_with_y() -> TripartiteGraph {
    TripartiteGraph::from_index_edges(2, 3, 2, &T1_Z, &T1_X, Some(&T1_Y)).unwrap()
}

/// Two disconnected communities, so cross-community consistency is zero.
/// Groups 0-1, users 0-2 and items 0-1 form one; groups 2-3, users 3-5 and
/// items 2-3 the other.
pub fn two_communities() -> TripartiteGraph {
    let z = [(0, 0), (0, 1), (1, 1), (1, 2), (2, 3), (2, 4), (3, 4), (3, 5)];
    let x = [(0, 0), (1, 0), (1, 1), (2, 1), (3, 2), (4, 2), (4, 3), (5, 3)];
    let y = [(0, 0), (1, 1), (2, 2), (3, 3)];
    TripartiteGraph::from_index_edges(4, 6, 4, &z, &x, Some(&y)).unwrap()
}

pub fn bernoulli_edges(rng: &mut ChaCha8Rng, nh: usize, nt: usize, p: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for h in 0..nh {
        for t in 0..nt {
            if rng.random::<f64>() < p {
                edges.push((h, t));
            }
        }
    }
    edges
}

/// Random graph with 1..=max_per_type nodes per type and per-relation edge
/// density drawn from `density`.
pub fn random_graph(seed: u64, max_per_type: usize, density: (f64, f64)) -> TripartiteGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ng = rng.random_range(1..=max_per_type);
    let nu = rng.random_range(1..=max_per_type);
    let ni = rng.random_range(1..=max_per_type);
    let mut p = || rng.random_range(density.0..=density.1);
    let (pz, px, py) = (p(), p(), p());
    let z = bernoulli_edges(&mut rng, ng, nu, pz);
    let x = bernoulli_edges(&mut rng, nu, ni, px);
    let mut y = bernoulli_edges(&mut rng, ng, ni, py);
    if y.is_empty() {
        y.push((0, 0));
    }
    TripartiteGraph::from_index_edges(ng, nu, ni, &z, &x, Some(&y)).unwrap()
}

/// Synthetic graph with exact node counts and a single edge density.
pub fn synthetic(seed: u64, ng: usize, nu: usize, ni: usize, p: f64) -> TripartiteGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = bernoulli_edges(&mut rng, ng, nu, p);
    let x = bernoulli_edges(&mut rng, nu, ni, p);
    let y = bernoulli_edges(&mut rng, ng, ni, p);
    TripartiteGraph::from_index_edges(ng, nu, ni, &z, &x, Some(&y)).unwrap()
}

pub fn blocks(graph: &TripartiteGraph, stage: Stage) -> BlockMatrix<f64> {
    assemble_blocks(stage, graph, &TaskPreset::Group.metapaths(stage).unwrap()).unwrap()
}

pub fn random_table(seed: u64, rows: usize, dim: usize) -> EmbeddingTable<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    EmbeddingTable::from_vec(rows, dim, EmbeddingRole::Pretrain, data).unwrap()
}

/// Writes the index-named relations of `graph` as TSV files in `dir`.
pub fn write_graph_files(graph: &TripartiteGraph, dir: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
    let write = |name: &str, rel: &RelationMatrix, hp: &str, tp: &str| {
        let path = dir.join(name);
        let text: String = rel.edges().map(|(h, t)| format!("{hp}{h}\t{tp}{t}\n")).collect();
        std::fs::write(&path, text).unwrap();
        path
    };
    (
        write("z.tsv", &graph.z, "g", "u"),
        write("x.tsv", &graph.x, "u", "i"),
        write("y.tsv", graph.y.as_ref().unwrap(), "g", "i"),
    )
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        d / (na * nb)
    }
}

pub fn cosine_of(e: &EmbeddingTable<f64>, a: usize, b: usize) -> f64 {
    cos(e.row(a), e.row(b))
}

/// Straightforward per-pair contrastive loss from dense α and β lookups, with
/// no shifting, grouping or caching.
pub fn naive_contrastive(
    batch: &[(usize, usize)],
    b: &BlockMatrix<f64>,
    e: &EmbeddingTable<f64>,
    tau: f64,
    literal: bool,
) -> f64 {
    let n = e.rows();
    let mut total = 0.0;
    for &(v1, v2) in batch {
        let mut denom = 1e-12;
        for c in 0..n {
            if c != v1 {
                denom += b.beta(v1, c) * (cos(e.row(v1), e.row(c)) / tau).exp();
            }
        }
        let alpha = b.alpha(v1, v2);
        let num = (cos(e.row(v1), e.row(v2)) / tau).exp();
        total += if literal {
            -(alpha * num / denom).ln()
        } else {
            -alpha * (num / denom).ln()
        };
    }
    total / batch.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaiveAccuracy {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub ndcg: f64,
}

/// Reference accuracy metrics written independently of the library.
pub fn naive_accuracy(lists: &[Vec<usize>], test: &[Vec<usize>], k: usize) -> NaiveAccuracy {
    let mut sum = [0.0; 4];
    let mut groups = 0;
    for (list, relevant) in lists.iter().zip(test) {
        if relevant.is_empty() {
            continue;
        }
        groups += 1;
        let top: Vec<usize> = list.iter().copied().take(k).collect();
        let hits = top.iter().filter(|i| relevant.contains(i)).count() as f64;
        let r = hits / relevant.len() as f64;
        let p = hits / k as f64;
        let f = if r + p > 0.0 { 2.0 * r * p / (r + p) } else { 0.0 };
        let mut dcg = 0.0;
        for (pos, item) in top.iter().enumerate() {
            if relevant.contains(item) {
                dcg += 1.0 / ((pos + 2) as f64).log2();
            }
        }
        let ideal = relevant.len().min(k);
        let idcg: f64 = (0..ideal).map(|pos| 1.0 / ((pos + 2) as f64).log2()).sum();
        for (s, v) in sum.iter_mut().zip([r, p, f, dcg / idcg]) {
            *s += v;
        }
    }
    let g = groups.max(1) as f64;
    NaiveAccuracy {
        recall: sum[0] / g,
        precision: sum[1] / g,
        f1: sum[2] / g,
        ndcg: sum[3] / g,
    }
}

/// Reference diversity: entropy (log2), coverage, and Gini as the mean
/// absolute difference of exposure shares.
pub fn naive_diversity(lists: &[Vec<usize>], catalog: usize) -> (f64, f64, f64) {
    let mut counts: HashMap<usize, f64> = HashMap::new();
    for list in lists {
        let mut seen = list.clone();
        seen.sort();
        seen.dedup();
        for i in seen {
            *counts.entry(i).or_default() += 1.0;
        }
    }
    let total: f64 = counts.values().sum();
    let shares: Vec<f64> = (0..catalog).map(|i| counts.get(&i).copied().unwrap_or(0.0) / total).collect();
    let entropy = -shares.iter().filter(|&&p| p > 0.0).map(|p| p * p.log2()).sum::<f64>();
    let coverage = counts.len() as f64 / catalog as f64;
    let gini = if catalog == 1 {
        0.0
    } else {
        let mut mad = 0.0;
        for a in &shares {
            for b in &shares {
                mad += (a - b).abs();
            }
        }
        mad / (2.0 * (catalog as f64 - 1.0))
    };
    (entropy, coverage, gini)
}

pub fn ranking(lists: Vec<Vec<usize>>) -> RankingResult {
    RankingResult {
        k: lists.iter().map(Vec::len).max().unwrap_or(0),
        groups: (0..lists.len()).collect(),
        lists,
    }
}

pub fn relation(n_groups: usize, n_items: usize, rows: &[Vec<usize>]) -> RelationMatrix {
    let edges = rows.iter().enumerate().flat_map(|(g, r)| r.iter().map(move |&i| (g, i)));
    RelationMatrix::from_edges(NodeKind::Group, NodeKind::Item, n_groups, n_items, edges).unwrap()
}

/// Result of comparing an analytic gradient against central differences.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub worst_rel: f64,
    pub checked: usize,
    pub frozen_nonzero: usize,
}

/// Central differences with step `h` on every trainable coordinate. The
/// relative error of a coordinate is `|a - n| / max(|a|, |n|, floor)`; the
/// floor keeps coordinates with a true derivative of zero, where the
/// difference quotient is pure rounding noise of order `eps * |loss| / h`,
/// from dominating the check.
pub fn grad_check(
    f: &dyn Fn(&EmbeddingTable<f64>) -> f64,
    analytic: &EmbeddingTable<f64>,
    at: &EmbeddingTable<f64>,
    trainable_dim: usize,
    h: f64,
    floor: f64,
) -> GradCheck {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut frozen_nonzero = 0;
    let mut probe = at.clone();
    for v in 0..at.rows() {
        for k in 0..at.dim() {
            let a = analytic.row(v)[k];
            if k >= trainable_dim {
                if a != 0.0 {
                    frozen_nonzero += 1;
                }
                continue;
            }
            let x = at.row(v)[k];
            probe.row_mut(v)[k] = x + h;
            let up = f(&probe);
            probe.row_mut(v)[k] = x - h;
            let down = f(&probe);
            probe.row_mut(v)[k] = x;
            let num = (up - down) / (2.0 * h);
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(floor);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    GradCheck {
        worst_rel: worst,
        checked,
        frozen_nonzero,
    }
}
