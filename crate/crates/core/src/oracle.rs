//! Brute-force coefficient oracle.
//!
//! Enumerates every middle node of a meta-path and classifies it by adjacency
//! to the two endpoints. Degrees are recounted from the raw edge lists and the
//! degree weight is evaluated directly, so nothing here shares code with the
//! sparse extraction in [`crate::coefficients`].

use crate::coefficients::MetaPathSpec;
use crate::error::{Error, Result};
use crate::graph::{NodeKind, RelationMatrix, Stage, TripartiteGraph};

fn weight(d_mid: usize, d_tail: usize) -> f64 {
    if d_mid == 0 {
        return 0.0;
    }
    let (m, t) = (d_mid as f64, d_tail as f64);
    (1.0 / m) * ((m + 1.0) / (t + 1.0)).sqrt()
}

fn dense(rel: &RelationMatrix) -> Vec<Vec<bool>> {
    let mut m = vec![vec![false; rel.n_tails()]; rel.n_heads()];
    for (h, t) in rel.edges() {
        m[h][t] = true;
    }
    m
}

/// Dense adjacency of one stage, rebuilt from the edge lists.
pub struct Oracle {
    stage: Stage,
    counts: [usize; 3],
    // (head kind, tail kind, matrix)
    relations: Vec<(NodeKind, NodeKind, Vec<Vec<bool>>)>,
    degrees: [Vec<usize>; 3],
}

fn slot(k: NodeKind) -> usize {
    match k {
        NodeKind::Group => 0,
        NodeKind::User => 1,
        NodeKind::Item => 2,
    }
}

impl Oracle {
    pub fn new(graph: &TripartiteGraph, stage: Stage) -> Self {
        let relations = match stage {
            Stage::Pretrain => vec![
                (NodeKind::Group, NodeKind::User, dense(&graph.z)),
                (NodeKind::User, NodeKind::Item, dense(&graph.x)),
            ],
            Stage::Finetune => graph
                .y
                .iter()
                .map(|y| (NodeKind::Group, NodeKind::Item, dense(y)))
                .collect(),
        };
        let mut oracle = Oracle {
            stage,
            counts: [graph.groups.len(), graph.users.len(), graph.items.len()],
            relations,
            degrees: Default::default(),
        };
        for k in [NodeKind::Group, NodeKind::User, NodeKind::Item] {
            let d = (0..oracle.counts[slot(k)]).map(|v| oracle.count_neighbors(k, v)).collect();
            oracle.degrees[slot(k)] = d;
        }
        oracle
    }

    fn adjacent(&self, ka: NodeKind, a: usize, kb: NodeKind, b: usize) -> bool {
        self.relations.iter().any(|(h, t, m)| {
            (*h == ka && *t == kb && m[a][b]) || (*h == kb && *t == ka && m[b][a])
        })
    }

    fn degree(&self, k: NodeKind, v: usize) -> usize {
        self.degrees[slot(k)][v]
    }

    fn count_neighbors(&self, k: NodeKind, v: usize) -> usize {
        [NodeKind::Group, NodeKind::User, NodeKind::Item]
            .into_iter()
            .map(|other| (0..self.counts[slot(other)]).filter(|&w| self.adjacent(k, v, other, w)).count())
            .sum()
    }

    /// `(α, β)` of the ordered pair `(v1, v2)` along `spec`.
    pub fn pair(&self, spec: &MetaPathSpec, v1: usize, v2: usize) -> Result<(f64, f64)> {
        if v1 >= self.counts[slot(spec.head)] || v2 >= self.counts[slot(spec.tail)] {
            return Err(Error::Shape(format!("pair ({v1}, {v2}) out of bounds for {spec}")));
        }
        let d_tail = self.degree(spec.tail, v2);
        let Some(middle) = spec.middle else {
            let d_head = self.degree(spec.head, v1);
            let delta = if d_head == 0 || d_tail == 0 {
                0.0
            } else {
                weight(d_head, d_tail)
            };
            let linked = self.adjacent(spec.head, v1, spec.tail, v2);
            return Ok((if linked { delta } else { 0.0 }, delta));
        };
        let (mut alpha, mut beta) = (0.0, 0.0);
        for m in 0..self.counts[slot(middle)] {
            if !self.adjacent(middle, m, spec.tail, v2) {
                continue;
            }
            let w = weight(self.degree(middle, m), d_tail);
            if self.adjacent(spec.head, v1, middle, m) {
                alpha += w;
            } else {
                beta += w;
            }
        }
        Ok((alpha, beta))
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }
}

/// `(α, β)` of the ordered pair `(v1, v2)` along `spec` in `stage`.
pub fn oracle_pair(
    graph: &TripartiteGraph,
    stage: Stage,
    spec: &MetaPathSpec,
    v1: usize,
    v2: usize,
) -> Result<(f64, f64)> {
    Oracle::new(graph, stage).pair(spec, v1, v2)
}
