//! Consistency (α) and discrepancy (β) coefficients between ordered node
//! pairs, extracted over two-hop and one-hop meta-paths.
//!
//! For a two-hop path `head -> middle -> tail` the consistency of `(v1, v2)` sums
//! `δ(d_m, d_v2)` over middle nodes adjacent to both ends; the discrepancy sums
//! the same weight over middle nodes adjacent to `v2` but not `v1`. Both share
//! the per-tail total `S[v2]`, so β is kept implicitly as `S[v2] - α`. One-hop
//! blocks use `δ` itself: α is `δ` on observed edges and β is `δ` everywhere,
//! an outer product of a head vector and a tail vector.

use std::fmt;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{Degrees, NodeKind, Stage, TripartiteGraph};
use crate::scalar::Scalar;

/// Degree weight `(1/d_mid) * sqrt((d_mid + 1) / (d_tail + 1))`; zero when the
/// middle node is isolated.
pub fn delta_weight<T: Scalar>(d_mid: usize, d_tail: usize) -> T {
    if d_mid == 0 {
        return T::zero();
    }
    mid_factor::<T>(d_mid) * tail_factor::<T>(d_tail)
}

// δ factors as mid_factor(d_mid) * tail_factor(d_tail).
fn mid_factor<T: Scalar>(d: usize) -> T {
    if d == 0 {
        T::zero()
    } else {
        (T::of_usize(d) + T::one()).sqrt() / T::of_usize(d)
    }
}

fn tail_factor<T: Scalar>(d: usize) -> T {
    T::one() / (T::of_usize(d) + T::one()).sqrt()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaPathSpec {
    pub head: NodeKind,
    pub middle: Option<NodeKind>,
    pub tail: NodeKind,
    pub label: String,
}

impl MetaPathSpec {
    pub fn two_hop(head: NodeKind, middle: NodeKind, tail: NodeKind, label: impl Into<String>) -> Self {
        MetaPathSpec {
            head,
            middle: Some(middle),
            tail,
            label: label.into(),
        }
    }

    pub fn one_hop(head: NodeKind, tail: NodeKind, label: impl Into<String>) -> Self {
        MetaPathSpec {
            head,
            middle: None,
            tail,
            label: label.into(),
        }
    }

    pub fn is_two_hop(&self) -> bool {
        self.middle.is_some()
    }

    pub fn type_pair(&self) -> (NodeKind, NodeKind) {
        (self.head, self.tail)
    }

    /// Checks that the path exists in `stage`: pre-training paths go through
    /// users, fine-tuning paths use only the group-item relation.
    pub fn validate(&self, stage: Stage) -> Result<()> {
        use NodeKind::*;
        let endpoint = |k: NodeKind| matches!(k, Group | Item);
        if !endpoint(self.head) || !endpoint(self.tail) {
            return Err(Error::MetaPath(format!(
                "{}: meta-paths must start and end at groups or items",
                self.label
            )));
        }
        let ok = match (stage, self.middle) {
            (Stage::Pretrain, Some(User)) => true,
            (Stage::Finetune, Some(m)) => m != User && m != self.head && m != self.tail,
            (Stage::Finetune, None) => self.head != self.tail,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::MetaPath(format!(
                "{}: {}-{}-{} is not a {stage} meta-path",
                self.label,
                self.head,
                self.middle.map_or("none", NodeKind::name),
                self.tail
            )))
        }
    }
}

impl fmt::Display for MetaPathSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

/// Meta-path families per recommendation scenario. Bundle recommendation maps
/// users onto the group role, items onto the user role and bundles onto the
/// item role; only the labels differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskPreset {
    Group,
    Bundle,
    General,
}

impl TaskPreset {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "group" => Ok(TaskPreset::Group),
            "bundle" => Ok(TaskPreset::Bundle),
            "general" => Ok(TaskPreset::General),
            other => Err(Error::Config(format!("unknown task preset {other:?}"))),
        }
    }

    fn letter(self, kind: NodeKind) -> char {
        match (self, kind) {
            (TaskPreset::Bundle, NodeKind::Group) => 'U',
            (TaskPreset::Bundle, NodeKind::User) => 'I',
            (TaskPreset::Bundle, NodeKind::Item) => 'B',
            (_, NodeKind::Group) => 'G',
            (_, NodeKind::User) => 'U',
            (_, NodeKind::Item) => 'I',
        }
    }

    fn label(self, kinds: &[NodeKind]) -> String {
        kinds.iter().map(|&k| self.letter(k)).collect()
    }

    /// Default meta-paths for a stage, ordered GG, GI, IG, II.
    pub fn metapaths(self, stage: Stage) -> Result<Vec<MetaPathSpec>> {
        use NodeKind::*;
        let two = |h, m, t| MetaPathSpec::two_hop(h, m, t, self.label(&[h, m, t]));
        let one = |h, t| MetaPathSpec::one_hop(h, t, self.label(&[h, t]));
        match (self, stage) {
            (TaskPreset::General, Stage::Pretrain) => Err(Error::Config(
                "the general task has no pre-training meta-paths".into(),
            )),
            (_, Stage::Pretrain) => Ok(vec![
                two(Group, User, Group),
                two(Group, User, Item),
                two(Item, User, Group),
                two(Item, User, Item),
            ]),
            (_, Stage::Finetune) => Ok(vec![
                two(Group, Item, Group),
                one(Group, Item),
                one(Item, Group),
                two(Item, Group, Item),
            ]),
        }
    }
}

/// Implicit discrepancy matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Discrepancy<T> {
    /// `β[v1, v2] = sums[v2] - α[v1, v2]`.
    TailSum { sums: Vec<T> },
    /// `β[v1, v2] = head[v1] * tail[v2]`.
    Separable { head: Vec<T>, tail: Vec<T> },
}

/// Sparse α plus implicit β for one ordered (head type, tail type) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientBlock<T> {
    spec: MetaPathSpec,
    stage: Stage,
    n_heads: usize,
    n_tails: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    alpha: Vec<T>,
    discrepancy: Discrepancy<T>,
}

impl<T: Scalar> CoefficientBlock<T> {
    fn from_rows(
        spec: MetaPathSpec,
        stage: Stage,
        n_tails: usize,
        rows: Vec<(Vec<usize>, Vec<T>)>,
        discrepancy: Discrepancy<T>,
    ) -> Self {
        let n_heads = rows.len();
        let mut row_ptr = Vec::with_capacity(n_heads + 1);
        row_ptr.push(0);
        let nnz = rows.iter().map(|r| r.0.len()).sum();
        let mut cols = Vec::with_capacity(nnz);
        let mut alpha = Vec::with_capacity(nnz);
        for (c, a) in rows {
            cols.extend(c);
            alpha.extend(a);
            row_ptr.push(cols.len());
        }
        CoefficientBlock {
            spec,
            stage,
            n_heads,
            n_tails,
            row_ptr,
            cols,
            alpha,
            discrepancy,
        }
    }

    /// Builds a block from explicit rows of `(tails, α)`, checking shape,
    /// ordering and the coefficient invariants.
    pub fn new(
        spec: MetaPathSpec,
        stage: Stage,
        n_tails: usize,
        rows: Vec<(Vec<usize>, Vec<T>)>,
        discrepancy: Discrepancy<T>,
    ) -> Result<Self> {
        let n_heads = rows.len();
        for (h, (cols, vals)) in rows.iter().enumerate() {
            if cols.len() != vals.len() {
                return Err(Error::Shape(format!("row {h}: {} tails, {} values", cols.len(), vals.len())));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) || cols.last().is_some_and(|&c| c >= n_tails) {
                return Err(Error::Shape(format!("row {h}: tails must be ascending and in range")));
            }
            if vals.iter().any(|&a| a.is_nan() || a < T::zero()) {
                return Err(Error::Shape(format!("row {h}: negative or NaN consistency")));
            }
        }
        match &discrepancy {
            Discrepancy::TailSum { sums } => {
                if sums.len() != n_tails {
                    return Err(Error::Shape("tail-sum length differs from tail count".into()));
                }
                let slack = T::of(1e-12);
                for (cols, vals) in &rows {
                    if cols.iter().zip(vals).any(|(&c, &a)| a > sums[c] + slack) {
                        return Err(Error::Shape("consistency exceeds its tail sum".into()));
                    }
                }
            }
            Discrepancy::Separable { head, tail } => {
                if head.len() != n_heads || tail.len() != n_tails {
                    return Err(Error::Shape("separable vector lengths differ from block shape".into()));
                }
                if head.iter().chain(tail).any(|&v| v.is_nan() || v < T::zero()) {
                    return Err(Error::Shape("negative discrepancy factor".into()));
                }
            }
        }
        Ok(Self::from_rows(spec, stage, n_tails, rows, discrepancy))
    }

    pub fn spec(&self) -> &MetaPathSpec {
        &self.spec
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn n_tails(&self) -> usize {
        self.n_tails
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn discrepancy(&self) -> &Discrepancy<T> {
        &self.discrepancy
    }

    /// Stored α entries of one head row, tails ascending.
    pub fn alpha_row(&self, v1: usize) -> (&[usize], &[T]) {
        let span = self.row_ptr[v1]..self.row_ptr[v1 + 1];
        (&self.cols[span.clone()], &self.alpha[span])
    }

    pub fn alpha(&self, v1: usize, v2: usize) -> T {
        let (cols, vals) = self.alpha_row(v1);
        cols.binary_search(&v2).map_or(T::zero(), |k| vals[k])
    }

    pub fn beta(&self, v1: usize, v2: usize) -> T {
        match &self.discrepancy {
            Discrepancy::TailSum { sums } => sums[v2] - self.alpha(v1, v2),
            Discrepancy::Separable { head, tail } => head[v1] * tail[v2],
        }
    }

    /// Writes the dense β row of `v1` into `out` (length `n_tails`).
    pub fn beta_row_into(&self, v1: usize, out: &mut [T]) {
        debug_assert_eq!(out.len(), self.n_tails);
        match &self.discrepancy {
            Discrepancy::TailSum { sums } => {
                out.copy_from_slice(sums);
                let (cols, vals) = self.alpha_row(v1);
                for (&c, &a) in cols.iter().zip(vals) {
                    out[c] -= a;
                }
            }
            Discrepancy::Separable { head, tail } => {
                let h = head[v1];
                for (o, &t) in out.iter_mut().zip(tail) {
                    *o = h * t;
                }
            }
        }
    }

    /// Stored `(head, tail, α)` triples, ascending by head then tail.
    pub fn alpha_entries(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.n_heads).flat_map(move |h| {
            let (cols, vals) = self.alpha_row(h);
            cols.iter().zip(vals).map(move |(&t, &a)| (h, t, a))
        })
    }
}

/// Two-hop block: α as the δ-weighted product of the two hop relations, β in
/// tail-sum form.
pub fn extract_two_hop<T: Scalar>(
    spec: &MetaPathSpec,
    graph: &TripartiteGraph,
    degrees: &Degrees,
) -> Result<CoefficientBlock<T>> {
    let stage = degrees.stage;
    spec.validate(stage)?;
    let middle = spec
        .middle
        .ok_or_else(|| Error::MetaPath(format!("{}: expected a two-hop meta-path", spec.label)))?;
    let first = graph.stage_relation(stage, spec.head, middle)?;
    let second = graph.stage_relation(stage, middle, spec.tail)?;

    let mid_w: Vec<T> = degrees.of(middle).iter().map(|&d| mid_factor(d)).collect();
    let tail_w: Vec<T> = degrees.of(spec.tail).iter().map(|&d| tail_factor(d)).collect();
    let n_heads = first.n_from();
    let n_tails = second.n_to();

    let rows: Vec<(Vec<usize>, Vec<T>)> = (0..n_heads)
        .into_par_iter()
        .map_init(
            || (vec![T::zero(); n_tails], vec![false; n_tails]),
            |(acc, seen), v1| {
                let mut touched = Vec::new();
                for &m in first.forward(v1) {
                    let w = mid_w[m];
                    if w == T::zero() {
                        continue;
                    }
                    for &v2 in second.forward(m) {
                        if !seen[v2] {
                            seen[v2] = true;
                            touched.push(v2);
                        }
                        acc[v2] += w;
                    }
                }
                touched.sort_unstable();
                let vals = touched
                    .iter()
                    .map(|&v2| {
                        let a = acc[v2] * tail_w[v2];
                        acc[v2] = T::zero();
                        seen[v2] = false;
                        a
                    })
                    .collect();
                (touched, vals)
            },
        )
        .collect();

    let sums = (0..n_tails)
        .map(|v2| {
            let total: T = second.backward(v2).iter().map(|&m| mid_w[m]).sum();
            total * tail_w[v2]
        })
        .collect();

    Ok(CoefficientBlock::from_rows(
        spec.clone(),
        stage,
        n_tails,
        rows,
        Discrepancy::TailSum { sums },
    ))
}

/// One-hop block over the group-item relation in the orientation of `spec`
/// (group→item or item→group).
pub fn extract_one_hop<T: Scalar>(
    spec: &MetaPathSpec,
    graph: &TripartiteGraph,
    degrees: &Degrees,
) -> Result<CoefficientBlock<T>> {
    if spec.is_two_hop() {
        return Err(Error::MetaPath(format!("{}: expected a one-hop meta-path", spec.label)));
    }
    spec.validate(Stage::Finetune)?;
    if degrees.stage != Stage::Finetune {
        return Err(Error::Stage(format!(
            "{}: one-hop blocks need fine-tune degrees",
            spec.label
        )));
    }
    let rel = graph.stage_relation(Stage::Finetune, spec.head, spec.tail)?;
    let d_head = degrees.of(spec.head);
    let d_tail = degrees.of(spec.tail);
    let head: Vec<T> = d_head.iter().map(|&d| mid_factor(d)).collect();
    let tail: Vec<T> = d_tail
        .iter()
        .map(|&d| if d == 0 { T::zero() } else { tail_factor(d) })
        .collect();

    let rows = (0..rel.n_from())
        .map(|v1| {
            let cols = rel.forward(v1).to_vec();
            let vals = cols.iter().map(|&v2| head[v1] * tail[v2]).collect();
            (cols, vals)
        })
        .collect();
    Ok(CoefficientBlock::from_rows(
        spec.clone(),
        Stage::Finetune,
        rel.n_to(),
        rows,
        Discrepancy::Separable { head, tail },
    ))
}

/// Both orientations of the one-hop group-item block, labelled `GI` and `IG`.
pub fn extract_one_hop_pair<T: Scalar>(
    graph: &TripartiteGraph,
    degrees: &Degrees,
) -> Result<(CoefficientBlock<T>, CoefficientBlock<T>)> {
    let gi = MetaPathSpec::one_hop(NodeKind::Group, NodeKind::Item, "GI");
    let ig = MetaPathSpec::one_hop(NodeKind::Item, NodeKind::Group, "IG");
    Ok((extract_one_hop(&gi, graph, degrees)?, extract_one_hop(&ig, graph, degrees)?))
}

const TYPE_PAIRS: [(NodeKind, NodeKind); 4] = [
    (NodeKind::Group, NodeKind::Group),
    (NodeKind::Group, NodeKind::Item),
    (NodeKind::Item, NodeKind::Group),
    (NodeKind::Item, NodeKind::Item),
];

/// The four coefficient blocks of one stage over the joint node space
/// (groups first, then items).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix<T> {
    stage: Stage,
    n_groups: usize,
    n_items: usize,
    blocks: Vec<CoefficientBlock<T>>,
}

impl<T: Scalar> BlockMatrix<T> {
    /// Arranges blocks by type pair; each ordered pair must appear exactly once
    /// and all blocks must agree on stage and node counts.
    pub fn from_blocks(blocks: Vec<CoefficientBlock<T>>) -> Result<Self> {
        let stage = blocks
            .first()
            .map(|b| b.stage)
            .ok_or_else(|| Error::MetaPath("no coefficient blocks".into()))?;
        let mut slots: Vec<Option<CoefficientBlock<T>>> = vec![None, None, None, None];
        for block in blocks {
            if block.stage != stage {
                return Err(Error::MetaPath("blocks from different stages".into()));
            }
            let pos = TYPE_PAIRS
                .iter()
                .position(|&p| p == block.spec.type_pair())
                .ok_or_else(|| Error::MetaPath(format!("{}: not a group/item pair", block.spec)))?;
            if slots[pos].is_some() {
                return Err(Error::MetaPath(format!(
                    "duplicate meta-path for {}-{} ({})",
                    block.spec.head, block.spec.tail, block.spec
                )));
            }
            slots[pos] = Some(block);
        }
        let blocks = slots
            .into_iter()
            .zip(TYPE_PAIRS)
            .map(|(b, (h, t))| b.ok_or_else(|| Error::MetaPath(format!("missing meta-path for {h}-{t}"))))
            .collect::<Result<Vec<_>>>()?;
        let n_groups = blocks[0].n_heads;
        let n_items = blocks[3].n_heads;
        for b in &blocks {
            let want = |k| if k == NodeKind::Group { n_groups } else { n_items };
            if b.n_heads != want(b.spec.head) || b.n_tails != want(b.spec.tail) {
                return Err(Error::Shape(format!(
                    "{} block is {}x{}, expected {}x{}",
                    b.spec,
                    b.n_heads,
                    b.n_tails,
                    want(b.spec.head),
                    want(b.spec.tail)
                )));
            }
        }
        Ok(BlockMatrix {
            stage,
            n_groups,
            n_items,
            blocks,
        })
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// Size of the joint group-then-item node space.
    pub fn node_count(&self) -> usize {
        self.n_groups + self.n_items
    }

    pub fn blocks(&self) -> &[CoefficientBlock<T>] {
        &self.blocks
    }

    pub fn block(&self, head: NodeKind, tail: NodeKind) -> Option<&CoefficientBlock<T>> {
        TYPE_PAIRS
            .iter()
            .position(|&p| p == (head, tail))
            .map(|i| &self.blocks[i])
    }

    /// Splits a joint index into its kind and local index.
    pub fn locate(&self, v: usize) -> (NodeKind, usize) {
        if v < self.n_groups {
            (NodeKind::Group, v)
        } else {
            (NodeKind::Item, v - self.n_groups)
        }
    }

    fn offset(&self, kind: NodeKind) -> usize {
        if kind == NodeKind::Group {
            0
        } else {
            self.n_groups
        }
    }

    fn row_blocks(&self, kind: NodeKind) -> [&CoefficientBlock<T>; 2] {
        if kind == NodeKind::Group {
            [&self.blocks[0], &self.blocks[1]]
        } else {
            [&self.blocks[2], &self.blocks[3]]
        }
    }

    pub fn alpha(&self, v1: usize, v2: usize) -> T {
        let (k1, l1) = self.locate(v1);
        let (k2, l2) = self.locate(v2);
        self.block(k1, k2).expect("all pairs present").alpha(l1, l2)
    }

    pub fn beta(&self, v1: usize, v2: usize) -> T {
        let (k1, l1) = self.locate(v1);
        let (k2, l2) = self.locate(v2);
        self.block(k1, k2).expect("all pairs present").beta(l1, l2)
    }

    /// Dense β row of joint node `v1` over the whole joint space.
    pub fn beta_row_into(&self, v1: usize, out: &mut [T]) {
        let (k1, l1) = self.locate(v1);
        let [left, right] = self.row_blocks(k1);
        let (a, b) = out.split_at_mut(self.n_groups);
        left.beta_row_into(l1, a);
        right.beta_row_into(l1, b);
    }

    /// Stored α entries of joint node `v1` as `(joint tail, α)`.
    pub fn alpha_row(&self, v1: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let (k1, l1) = self.locate(v1);
        self.row_blocks(k1).into_iter().flat_map(move |b| {
            let off = self.offset(b.spec.tail);
            let (cols, vals) = b.alpha_row(l1);
            cols.iter().zip(vals).map(move |(&c, &a)| (c + off, a))
        })
    }

    /// Ordered pairs with positive consistency, self-pairs excluded.
    pub fn positive_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.node_count())
            .flat_map(|v1| {
                self.alpha_row(v1)
                    .filter(move |&(v2, a)| v2 != v1 && a > T::zero())
                    .map(move |(v2, _)| (v1, v2))
            })
            .collect()
    }

    /// Ordered pairs where α or β is nonzero, self-pairs excluded.
    pub fn coefficient_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.node_count();
        let mut beta = vec![T::zero(); n];
        let mut has_alpha = vec![false; n];
        let mut out = Vec::new();
        for v1 in 0..n {
            self.beta_row_into(v1, &mut beta);
            has_alpha.fill(false);
            for (v2, a) in self.alpha_row(v1) {
                has_alpha[v2] = a != T::zero();
            }
            out.extend(
                (0..n)
                    .filter(|&v2| v2 != v1 && (has_alpha[v2] || beta[v2] != T::zero()))
                    .map(|v2| (v1, v2)),
            );
        }
        out
    }
}

/// Computes the four blocks of `stage` for the given meta-paths, which must
/// cover each ordered group/item type pair exactly once.
pub fn assemble_blocks<T: Scalar>(
    stage: Stage,
    graph: &TripartiteGraph,
    metapaths: &[MetaPathSpec],
) -> Result<BlockMatrix<T>> {
    let mut seen = Vec::new();
    for spec in metapaths {
        spec.validate(stage)?;
        if seen.contains(&spec.type_pair()) {
            return Err(Error::MetaPath(format!(
                "duplicate meta-path for {}-{} ({spec})",
                spec.head, spec.tail
            )));
        }
        seen.push(spec.type_pair());
    }
    if let Some((h, t)) = TYPE_PAIRS.iter().find(|p| !seen.contains(p)) {
        return Err(Error::MetaPath(format!("missing meta-path for {h}-{t}")));
    }
    let degrees = crate::graph::total_degrees(graph, stage)?;
    let blocks = metapaths
        .iter()
        .map(|spec| {
            if spec.is_two_hop() {
                extract_two_hop(spec, graph, &degrees)
            } else {
                extract_one_hop(spec, graph, &degrees)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    BlockMatrix::from_blocks(blocks)
}

// Text persistence.

fn fmt_value<T: Scalar>(v: T) -> String {
    format!("{:.16e}", v.as_f64())
}

pub fn write_block<T: Scalar, W: Write>(block: &CoefficientBlock<T>, mut out: W) -> std::io::Result<()> {
    writeln!(out, "EXTRE-BLOCK\t1")?;
    writeln!(out, "stage\t{}", block.stage)?;
    writeln!(out, "label\t{}", block.spec.label)?;
    writeln!(out, "head\t{}\t{}", block.spec.head, block.n_heads)?;
    writeln!(out, "middle\t{}", block.spec.middle.map_or("-", NodeKind::name))?;
    writeln!(out, "tail\t{}\t{}", block.spec.tail, block.n_tails)?;
    writeln!(out, "alpha\t{}", block.nnz())?;
    for (h, t, a) in block.alpha_entries() {
        writeln!(out, "{h}\t{t}\t{}", fmt_value(a))?;
    }
    match &block.discrepancy {
        Discrepancy::TailSum { sums } => {
            writeln!(out, "tailsum\t{}", sums.len())?;
            for &s in sums {
                writeln!(out, "{}", fmt_value(s))?;
            }
        }
        Discrepancy::Separable { head, tail } => {
            writeln!(out, "separable\t{}\t{}", head.len(), tail.len())?;
            for &v in head.iter().chain(tail) {
                writeln!(out, "{}", fmt_value(v))?;
            }
        }
    }
    out.flush()
}

struct LineReader<R> {
    lines: std::io::Lines<R>,
    name: String,
    line: usize,
}

impl<R: BufRead> LineReader<R> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            source_name: self.name.clone(),
            line: self.line,
            msg: msg.into(),
        }
    }

    fn fields(&mut self) -> Result<Vec<String>> {
        self.line += 1;
        match self.lines.next() {
            Some(Ok(l)) => Ok(l.split('\t').map(str::to_owned).collect()),
            Some(Err(e)) => Err(Error::io(&self.name, e)),
            None => Err(self.err("unexpected end of block file")),
        }
    }

    fn keyed(&mut self, key: &str, arity: usize) -> Result<Vec<String>> {
        let f = self.fields()?;
        if f.len() != arity + 1 || f[0] != key {
            return Err(self.err(format!("expected {key:?} with {arity} field(s)")));
        }
        Ok(f[1..].to_vec())
    }

    fn parse<V: std::str::FromStr>(&self, s: &str) -> Result<V> {
        s.parse().map_err(|_| self.err(format!("cannot parse {s:?}")))
    }

    fn values<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        (0..n)
            .map(|_| {
                let f = self.fields()?;
                let v: f64 = self.parse(&f[0])?;
                Ok(T::of(v))
            })
            .collect()
    }
}

pub fn read_block<T: Scalar, R: BufRead>(input: R, source_name: &str) -> Result<CoefficientBlock<T>> {
    let mut r = LineReader {
        lines: input.lines(),
        name: source_name.to_owned(),
        line: 0,
    };
    let magic = r.fields()?;
    if magic != ["EXTRE-BLOCK", "1"] {
        return Err(r.err("not a coefficient block file"));
    }
    let stage: Stage = r.keyed("stage", 1)?[0].parse()?;
    let label = r.keyed("label", 1)?.remove(0);
    let head = r.keyed("head", 2)?;
    let middle = r.keyed("middle", 1)?;
    let tail = r.keyed("tail", 2)?;
    let (head_kind, n_heads): (NodeKind, usize) = (head[0].parse()?, r.parse(&head[1])?);
    let (tail_kind, n_tails): (NodeKind, usize) = (tail[0].parse()?, r.parse(&tail[1])?);
    let middle = match middle[0].as_str() {
        "-" => None,
        m => Some(m.parse::<NodeKind>()?),
    };
    let spec = MetaPathSpec {
        head: head_kind,
        middle,
        tail: tail_kind,
        label,
    };
    let nnz_field = r.keyed("alpha", 1)?;
    let nnz: usize = r.parse(&nnz_field[0])?;
    let mut rows: Vec<(Vec<usize>, Vec<T>)> = vec![(Vec::new(), Vec::new()); n_heads];
    let mut last: Option<(usize, usize)> = None;
    for _ in 0..nnz {
        let f = r.fields()?;
        if f.len() != 3 {
            return Err(r.err("expected head<TAB>tail<TAB>alpha"));
        }
        let (h, t): (usize, usize) = (r.parse(&f[0])?, r.parse(&f[1])?);
        let a: f64 = r.parse(&f[2])?;
        if h >= n_heads || t >= n_tails || last.is_some_and(|p| p >= (h, t)) {
            return Err(r.err("alpha entries must be in bounds and strictly ascending"));
        }
        last = Some((h, t));
        rows[h].0.push(t);
        rows[h].1.push(T::of(a));
    }
    let form = r.fields()?;
    let discrepancy = match form.first().map(String::as_str) {
        Some("tailsum") if form.len() == 2 => {
            let n: usize = r.parse(&form[1])?;
            if n != n_tails {
                return Err(r.err("tail-sum length differs from tail count"));
            }
            Discrepancy::TailSum { sums: r.values(n)? }
        }
        Some("separable") if form.len() == 3 => {
            let (nh, nt): (usize, usize) = (r.parse(&form[1])?, r.parse(&form[2])?);
            if nh != n_heads || nt != n_tails {
                return Err(r.err("separable vector lengths differ from block shape"));
            }
            let head = r.values(nh)?;
            let tail = r.values(nt)?;
            Discrepancy::Separable { head, tail }
        }
        _ => return Err(r.err("expected tailsum or separable section")),
    };
    CoefficientBlock::new(spec, stage, n_tails, rows, discrepancy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::total_degrees;

    fn t1() -> TripartiteGraph {
        TripartiteGraph::from_index_edges(
            2,
            3,
            2,
            &[(0, 0), (0, 1), (1, 1), (1, 2)],
            &[(0, 0), (1, 0), (1, 1), (2, 0), (2, 1)],
            None,
        )
        .unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn delta_values() {
        assert_eq!(delta_weight::<f64>(1, 1), 1.0);
        assert!(close(delta_weight::<f64>(3, 8), 2.0 / 9.0));
        assert_eq!(delta_weight::<f64>(0, 5), 0.0);
        assert!((delta_weight::<f32>(3, 8) - 2.0 / 9.0).abs() < 1e-6);
    }

    #[test]
    fn t1_gui_block() {
        let g = t1();
        let d = total_degrees(&g, Stage::Pretrain).unwrap();
        let spec = MetaPathSpec::two_hop(NodeKind::Group, NodeKind::User, NodeKind::Item, "GUI");
        let b: CoefficientBlock<f64> = extract_two_hop(&spec, &g, &d).unwrap();
        let expect = 0.5 * (0.75f64).sqrt() + 0.25 * (1.25f64).sqrt();
        assert!(close(b.alpha(0, 0), expect));
        assert!(close(b.beta(0, 0), 1.0 / 3.0));
        if let Discrepancy::TailSum { sums } = b.discrepancy() {
            assert!(close(b.alpha(0, 0) + b.beta(0, 0), sums[0]));
        } else {
            panic!("two-hop block must be tail-sum");
        }
    }

    #[test]
    fn t1_asymmetry() {
        let g = t1();
        let d = total_degrees(&g, Stage::Pretrain).unwrap();
        let iug = MetaPathSpec::two_hop(NodeKind::Item, NodeKind::User, NodeKind::Group, "IUG");
        let b: CoefficientBlock<f64> = extract_two_hop(&iug, &g, &d).unwrap();
        let expect = 0.5 + 0.25 * (5.0f64 / 3.0).sqrt();
        assert!(close(b.alpha(0, 0), expect));
        assert!((b.alpha(0, 0) - 0.71251).abs() > 0.1);
    }

    #[test]
    fn one_hop_single_edge() {
        let g = TripartiteGraph::from_index_edges(1, 0, 1, &[], &[], Some(&[(0, 0)])).unwrap();
        let d = total_degrees(&g, Stage::Finetune).unwrap();
        let (gi, ig) = extract_one_hop_pair::<f64>(&g, &d).unwrap();
        assert_eq!(gi.alpha(0, 0), 1.0);
        assert_eq!(gi.beta(0, 0), 1.0);
        assert_eq!(ig.alpha(0, 0), 1.0);
    }

    #[test]
    fn one_hop_non_edge_has_discrepancy_only() {
        let g = TripartiteGraph::from_index_edges(2, 0, 2, &[], &[], Some(&[(0, 0), (1, 1)])).unwrap();
        let d = total_degrees(&g, Stage::Finetune).unwrap();
        let (gi, _) = extract_one_hop_pair::<f64>(&g, &d).unwrap();
        assert_eq!(gi.alpha(0, 1), 0.0);
        assert!(gi.beta(0, 1) > 0.0);
    }

    #[test]
    fn one_hop_degree_three_eight() {
        // group 0 has 3 items; item 0 has 8 groups
        let mut y = vec![(0, 0), (0, 1), (0, 2)];
        y.extend((1..8).map(|g| (g, 0)));
        let g = TripartiteGraph::from_index_edges(8, 0, 3, &[], &[], Some(&y)).unwrap();
        let d = total_degrees(&g, Stage::Finetune).unwrap();
        assert_eq!((d.groups[0], d.items[0]), (3, 8));
        let (gi, _) = extract_one_hop_pair::<f64>(&g, &d).unwrap();
        assert!(close(gi.alpha(0, 0), 2.0 / 9.0));
    }

    #[test]
    fn one_hop_isolated_nodes_contribute_nothing() {
        let g = TripartiteGraph::from_index_edges(2, 0, 2, &[], &[], Some(&[(0, 0)])).unwrap();
        let d = total_degrees(&g, Stage::Finetune).unwrap();
        let (gi, ig) = extract_one_hop_pair::<f64>(&g, &d).unwrap();
        assert_eq!(gi.beta(1, 0), 0.0);
        assert_eq!(gi.beta(0, 1), 0.0);
        assert_eq!(ig.beta(1, 0), 0.0);
    }

    #[test]
    fn pretrain_shapes() {
        let b: BlockMatrix<f64> =
            assemble_blocks(Stage::Pretrain, &t1(), &TaskPreset::Group.metapaths(Stage::Pretrain).unwrap()).unwrap();
        for blk in b.blocks() {
            assert_eq!((blk.n_heads(), blk.n_tails()), (2, 2));
        }
        let labels: Vec<_> = b.blocks().iter().map(|x| x.spec().label.as_str()).collect();
        assert_eq!(labels, ["GUG", "GUI", "IUG", "IUI"]);
    }

    #[test]
    fn finetune_without_y_fails() {
        let err = assemble_blocks::<f64>(
            Stage::Finetune,
            &t1(),
            &TaskPreset::Group.metapaths(Stage::Finetune).unwrap(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("stage requires group-item relation"));
    }

    #[test]
    fn preset_coverage_errors() {
        let mut paths = TaskPreset::Group.metapaths(Stage::Pretrain).unwrap();
        paths.pop();
        assert!(assemble_blocks::<f64>(Stage::Pretrain, &t1(), &paths).is_err());
        paths.push(paths[0].clone());
        assert!(assemble_blocks::<f64>(Stage::Pretrain, &t1(), &paths).is_err());
    }

    #[test]
    fn bundle_labels() {
        let pre: Vec<_> = TaskPreset::Bundle
            .metapaths(Stage::Pretrain)
            .unwrap()
            .into_iter()
            .map(|s| s.label)
            .collect();
        assert_eq!(pre, ["UIU", "UIB", "BIU", "BIB"]);
        let fine: Vec<_> = TaskPreset::Bundle
            .metapaths(Stage::Finetune)
            .unwrap()
            .into_iter()
            .map(|s| s.label)
            .collect();
        assert_eq!(fine, ["UBU", "UB", "BU", "BUB"]);
        let general: Vec<_> = TaskPreset::General
            .metapaths(Stage::Finetune)
            .unwrap()
            .into_iter()
            .map(|s| s.label)
            .collect();
        assert_eq!(general, ["GIG", "GI", "IG", "IGI"]);
        assert!(TaskPreset::General.metapaths(Stage::Pretrain).is_err());
    }

    #[test]
    fn wrong_stage_path_rejected() {
        let gig = MetaPathSpec::two_hop(NodeKind::Group, NodeKind::Item, NodeKind::Group, "GIG");
        assert!(gig.validate(Stage::Pretrain).is_err());
        let gui = MetaPathSpec::two_hop(NodeKind::Group, NodeKind::User, NodeKind::Item, "GUI");
        assert!(gui.validate(Stage::Finetune).is_err());
    }

    #[test]
    fn joint_rows_and_pairs() {
        let b: BlockMatrix<f64> =
            assemble_blocks(Stage::Pretrain, &t1(), &TaskPreset::Group.metapaths(Stage::Pretrain).unwrap()).unwrap();
        let mut row = vec![0.0; 4];
        b.beta_row_into(0, &mut row);
        for (v2, &beta) in row.iter().enumerate() {
            assert!(close(beta, b.beta(0, v2)));
        }
        let pairs = b.positive_pairs();
        assert!(pairs.iter().all(|&(a, c)| a != c && b.alpha(a, c) > 0.0));
        // T1 is connected through users: every off-diagonal pair is positive
        assert_eq!(pairs.len(), 12);
    }

    #[test]
    fn block_text_round_trip() {
        let g = t1().with_y(Some(
            crate::graph::RelationMatrix::from_edges(NodeKind::Group, NodeKind::Item, 2, 2, [(0, 0), (1, 1)]).unwrap(),
        ))
        .unwrap();
        for stage in [Stage::Pretrain, Stage::Finetune] {
            let b: BlockMatrix<f64> =
                assemble_blocks(stage, &g, &TaskPreset::Group.metapaths(stage).unwrap()).unwrap();
            for blk in b.blocks() {
                let mut buf = Vec::new();
                write_block(blk, &mut buf).unwrap();
                let back: CoefficientBlock<f64> = read_block(&buf[..], "mem").unwrap();
                assert_eq!(&back, blk);
            }
        }
    }

    #[test]
    fn corrupt_block_rejected() {
        assert!(read_block::<f64, _>("nonsense\n".as_bytes(), "mem").is_err());
    }
}
