//! Tripartite group/user/item graph: node spaces, sparse relations, stage
//! degrees and the seeded interaction split.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Group,
    User,
    Item,
}

impl NodeKind {
    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Group => "group",
            NodeKind::User => "user",
            NodeKind::Item => "item",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NodeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "group" => Ok(NodeKind::Group),
            "user" => Ok(NodeKind::User),
            "item" => Ok(NodeKind::Item),
            other => Err(Error::Format(format!("unknown node kind {other:?}"))),
        }
    }
}

/// Training stage. Each stage sees its own relations: pre-training uses the
/// group-user and user-item relations, fine-tuning only the group-item one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "finetune" => Ok(Stage::Finetune),
            other => Err(Error::Config(format!(
                "unknown stage {other:?} (expected pretrain or finetune)"
            ))),
        }
    }
}

/// Bijection between external ids and dense indices `0..len` for one node type.
#[derive(Debug, Clone)]
pub struct NodeSpace {
    kind: NodeKind,
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl NodeSpace {
    pub fn new(kind: NodeKind) -> Self {
        NodeSpace {
            kind,
            ids: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// A space whose external ids are the decimal indices themselves.
    pub fn with_count(kind: NodeKind, count: usize) -> Self {
        let mut space = NodeSpace::new(kind);
        for i in 0..count {
            space.intern(&i.to_string());
        }
        space
    }

    pub fn kind(&self) -> NodeKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Returns the index of `id`, assigning the next free index on first sight.
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&ix) = self.index.get(id) {
            return ix;
        }
        let ix = self.ids.len();
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), ix);
        ix
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, ix: usize) -> &str {
        &self.ids[ix]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// Binary sparse relation between two node spaces, stored both row- and
/// column-compressed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationMatrix {
    head: NodeKind,
    tail: NodeKind,
    n_heads: usize,
    n_tails: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
}

impl RelationMatrix {
    /// Builds a relation from arbitrary (possibly duplicated, unsorted) edges.
    pub fn from_edges<I>(
        head: NodeKind,
        tail: NodeKind,
        n_heads: usize,
        n_tails: usize,
        edges: I,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut edges: Vec<(usize, usize)> = edges.into_iter().collect();
        if let Some(&(h, t)) = edges.iter().find(|&&(h, t)| h >= n_heads || t >= n_tails) {
            return Err(Error::Shape(format!(
                "edge ({h}, {t}) out of bounds for {n_heads}x{n_tails} {head}-{tail} relation"
            )));
        }
        edges.sort_unstable();
        edges.dedup();

        let mut row_ptr = vec![0usize; n_heads + 1];
        let mut col_ptr = vec![0usize; n_tails + 1];
        for &(h, t) in &edges {
            row_ptr[h + 1] += 1;
            col_ptr[t + 1] += 1;
        }
        for i in 0..n_heads {
            row_ptr[i + 1] += row_ptr[i];
        }
        for j in 0..n_tails {
            col_ptr[j + 1] += col_ptr[j];
        }
        let col_idx = edges.iter().map(|&(_, t)| t).collect();

        // edges are sorted by head, so each column fills in ascending row order
        let mut row_idx = vec![0usize; edges.len()];
        let mut fill = col_ptr.clone();
        for &(h, t) in &edges {
            row_idx[fill[t]] = h;
            fill[t] += 1;
        }

        Ok(RelationMatrix {
            head,
            tail,
            n_heads,
            n_tails,
            row_ptr,
            col_idx,
            col_ptr,
            row_idx,
        })
    }

    pub fn empty(head: NodeKind, tail: NodeKind, n_heads: usize, n_tails: usize) -> Self {
        Self::from_edges(head, tail, n_heads, n_tails, std::iter::empty())
            .expect("empty relation is always valid")
    }

    pub fn head(&self) -> NodeKind {
        self.head
    }

    pub fn tail(&self) -> NodeKind {
        self.tail
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn n_tails(&self) -> usize {
        self.n_tails
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.col_idx.is_empty()
    }

    /// Tails adjacent to head `h`, ascending.
    pub fn row(&self, h: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[h]..self.row_ptr[h + 1]]
    }

    /// Heads adjacent to tail `t`, ascending.
    pub fn col(&self, t: usize) -> &[usize] {
        &self.row_idx[self.col_ptr[t]..self.col_ptr[t + 1]]
    }

    pub fn contains(&self, h: usize, t: usize) -> bool {
        h < self.n_heads && self.row(h).binary_search(&t).is_ok()
    }

    /// Edges in ascending (head, tail) order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_heads).flat_map(move |h| self.row(h).iter().map(move |&t| (h, t)))
    }

    pub fn transpose(&self) -> RelationMatrix {
        RelationMatrix {
            head: self.tail,
            tail: self.head,
            n_heads: self.n_tails,
            n_tails: self.n_heads,
            row_ptr: self.col_ptr.clone(),
            col_idx: self.row_idx.clone(),
            col_ptr: self.row_ptr.clone(),
            row_idx: self.col_idx.clone(),
        }
    }

    /// Grows the index ranges (node spaces only ever grow).
    pub fn resized(&self, n_heads: usize, n_tails: usize) -> Result<RelationMatrix> {
        if n_heads < self.n_heads || n_tails < self.n_tails {
            return Err(Error::Shape(format!(
                "cannot shrink {}x{} relation to {n_heads}x{n_tails}",
                self.n_heads, self.n_tails
            )));
        }
        Self::from_edges(self.head, self.tail, n_heads, n_tails, self.edges())
    }
}

fn check_kind_pair(head: NodeKind, tail: NodeKind) -> Result<()> {
    use NodeKind::*;
    match (head, tail) {
        (Group, User) | (User, Item) | (Group, Item) => Ok(()),
        _ => Err(Error::Config(format!(
            "unsupported relation {head}-{tail} (expected group-user, user-item or group-item)"
        ))),
    }
}

/// Parses tab-separated `head<TAB>tail` lines, skipping blanks and `#` comments.
pub fn read_relation<R: BufRead>(
    reader: R,
    source_name: &str,
    heads: &mut NodeSpace,
    tails: &mut NodeSpace,
) -> Result<RelationMatrix> {
    check_kind_pair(heads.kind(), tails.kind())?;
    let mut edges = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source_name, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split(['\t', ' ']).filter(|s| !s.is_empty());
        let (h, t) = match (fields.next(), fields.next(), fields.next()) {
            (Some(h), Some(t), None) => (h, t),
            _ => {
                return Err(Error::Parse {
                    source_name: source_name.to_owned(),
                    line: lineno + 1,
                    msg: format!("expected two ids separated by a tab, got {trimmed:?}"),
                })
            }
        };
        edges.push((heads.intern(h), tails.intern(t)));
    }
    RelationMatrix::from_edges(heads.kind(), tails.kind(), heads.len(), tails.len(), edges)
}

pub fn load_relation(
    path: &Path,
    heads: &mut NodeSpace,
    tails: &mut NodeSpace,
) -> Result<RelationMatrix> {
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path.to_owned())
        } else {
            Error::io(path, e)
        }
    })?;
    read_relation(BufReader::new(file), &path.display().to_string(), heads, tails)
}

pub fn write_relation_to<W: Write>(
    mut out: W,
    rel: &RelationMatrix,
    heads: &NodeSpace,
    tails: &NodeSpace,
) -> std::io::Result<()> {
    for (h, t) in rel.edges() {
        writeln!(out, "{}\t{}", heads.id(h), tails.id(t))?;
    }
    out.flush()
}

pub fn write_relation(
    path: &Path,
    rel: &RelationMatrix,
    heads: &NodeSpace,
    tails: &NodeSpace,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_relation_to(BufWriter::new(file), rel, heads, tails).map_err(|e| Error::io(path, e))
}

/// Groups, users and items with the group-user (`z`), user-item (`x`) and
/// optional group-item (`y`) relations. An absent `y` is the extreme
/// cold-start setting.
#[derive(Debug, Clone)]
pub struct TripartiteGraph {
    pub groups: NodeSpace,
    pub users: NodeSpace,
    pub items: NodeSpace,
    pub z: RelationMatrix,
    pub x: RelationMatrix,
    pub y: Option<RelationMatrix>,
}

impl TripartiteGraph {
    /// Assembles a graph, widening each relation to the final node counts.
    pub fn new(
        groups: NodeSpace,
        users: NodeSpace,
        items: NodeSpace,
        z: RelationMatrix,
        x: RelationMatrix,
        y: Option<RelationMatrix>,
    ) -> Result<Self> {
        let expect = |rel: &RelationMatrix, h: &NodeSpace, t: &NodeSpace, name: &str| {
            if rel.head() != h.kind() || rel.tail() != t.kind() {
                return Err(Error::Shape(format!(
                    "relation {name} is {}-{}, expected {}-{}",
                    rel.head(),
                    rel.tail(),
                    h.kind(),
                    t.kind()
                )));
            }
            rel.resized(h.len(), t.len())
        };
        if groups.kind() != NodeKind::Group
            || users.kind() != NodeKind::User
            || items.kind() != NodeKind::Item
        {
            return Err(Error::Shape("node spaces must be group, user, item".into()));
        }
        let z = expect(&z, &groups, &users, "z")?;
        let x = expect(&x, &users, &items, "x")?;
        let y = y.map(|y| expect(&y, &groups, &items, "y")).transpose()?;
        Ok(TripartiteGraph {
            groups,
            users,
            items,
            z,
            x,
            y,
        })
    }

    /// Builds a graph over index-named nodes from raw edge lists.
    pub fn from_index_edges(
        n_groups: usize,
        n_users: usize,
        n_items: usize,
        z: &[(usize, usize)],
        x: &[(usize, usize)],
        y: Option<&[(usize, usize)]>,
    ) -> Result<Self> {
        use NodeKind::*;
        let z = RelationMatrix::from_edges(Group, User, n_groups, n_users, z.iter().copied())?;
        let x = RelationMatrix::from_edges(User, Item, n_users, n_items, x.iter().copied())?;
        let y = y
            .map(|y| RelationMatrix::from_edges(Group, Item, n_groups, n_items, y.iter().copied()))
            .transpose()?;
        Self::new(
            NodeSpace::with_count(Group, n_groups),
            NodeSpace::with_count(User, n_users),
            NodeSpace::with_count(Item, n_items),
            z,
            x,
            y,
        )
    }

    pub fn space(&self, kind: NodeKind) -> &NodeSpace {
        match kind {
            NodeKind::Group => &self.groups,
            NodeKind::User => &self.users,
            NodeKind::Item => &self.items,
        }
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        self.space(kind).len()
    }

    /// Same graph with the group-item relation replaced.
    pub fn with_y(&self, y: Option<RelationMatrix>) -> Result<Self> {
        Self::new(
            self.groups.clone(),
            self.users.clone(),
            self.items.clone(),
            self.z.clone(),
            self.x.clone(),
            y,
        )
    }

    /// The relation linking `from` to `to` that is visible in `stage`,
    /// oriented so that rows are `from` nodes.
    pub fn stage_relation(
        &self,
        stage: Stage,
        from: NodeKind,
        to: NodeKind,
    ) -> Result<OrientedRelation<'_>> {
        use NodeKind::*;
        let (rel, transposed) = match (stage, from, to) {
            (Stage::Pretrain, Group, User) => (&self.z, false),
            (Stage::Pretrain, User, Group) => (&self.z, true),
            (Stage::Pretrain, User, Item) => (&self.x, false),
            (Stage::Pretrain, Item, User) => (&self.x, true),
            (Stage::Finetune, Group, Item) | (Stage::Finetune, Item, Group) => {
                let y = self.require_y()?;
                (y, from == Item)
            }
            _ => {
                return Err(Error::MetaPath(format!(
                    "no {from}-{to} relation in the {stage} stage"
                )))
            }
        };
        Ok(OrientedRelation { rel, transposed })
    }

    pub fn require_y(&self) -> Result<&RelationMatrix> {
        match &self.y {
            Some(y) if !y.is_empty() => Ok(y),
            _ => Err(Error::Stage("stage requires group-item relation".into())),
        }
    }
}

/// A relation viewed from either end.
#[derive(Debug, Clone, Copy)]
pub struct OrientedRelation<'a> {
    rel: &'a RelationMatrix,
    transposed: bool,
}

impl<'a> OrientedRelation<'a> {
    pub fn n_from(&self) -> usize {
        if self.transposed {
            self.rel.n_tails()
        } else {
            self.rel.n_heads()
        }
    }

    pub fn n_to(&self) -> usize {
        if self.transposed {
            self.rel.n_heads()
        } else {
            self.rel.n_tails()
        }
    }

    /// Neighbors of a `from` node among `to` nodes.
    pub fn forward(&self, v: usize) -> &'a [usize] {
        if self.transposed {
            self.rel.col(v)
        } else {
            self.rel.row(v)
        }
    }

    /// Neighbors of a `to` node among `from` nodes.
    pub fn backward(&self, v: usize) -> &'a [usize] {
        if self.transposed {
            self.rel.row(v)
        } else {
            self.rel.col(v)
        }
    }

    pub fn contains(&self, from: usize, to: usize) -> bool {
        if self.transposed {
            self.rel.contains(to, from)
        } else {
            self.rel.contains(from, to)
        }
    }
}

/// Per-node degrees in one stage's propagation graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Degrees {
    pub stage: Stage,
    pub groups: Vec<usize>,
    pub users: Vec<usize>,
    pub items: Vec<usize>,
}

impl Degrees {
    pub fn of(&self, kind: NodeKind) -> &[usize] {
        match kind {
            NodeKind::Group => &self.groups,
            NodeKind::User => &self.users,
            NodeKind::Item => &self.items,
        }
    }
}

pub fn total_degrees(graph: &TripartiteGraph, stage: Stage) -> Result<Degrees> {
    let row_degrees = |rel: &RelationMatrix| (0..rel.n_heads()).map(|h| rel.row(h).len()).collect::<Vec<_>>();
    let col_degrees = |rel: &RelationMatrix| (0..rel.n_tails()).map(|t| rel.col(t).len()).collect::<Vec<_>>();
    match stage {
        Stage::Pretrain => {
            let z_users = col_degrees(&graph.z);
            let x_users = row_degrees(&graph.x);
            Ok(Degrees {
                stage,
                groups: row_degrees(&graph.z),
                users: z_users.iter().zip(&x_users).map(|(a, b)| a + b).collect(),
                items: col_degrees(&graph.x),
            })
        }
        Stage::Finetune => {
            let y = graph.require_y()?;
            Ok(Degrees {
                stage,
                groups: row_degrees(y),
                users: vec![0; graph.users.len()],
                items: col_degrees(y),
            })
        }
    }
}

/// Train/validation/test fractions of the group-item interactions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    train: f64,
    valid: f64,
    test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, valid: f64, test: f64, seed: u64) -> Result<Self> {
        for (name, r) in [("train", train), ("valid", valid), ("test", test)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} ratio {r} outside [0, 1]")));
            }
        }
        let sum = train + valid + test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must sum to 1, got {train} + {valid} + {test} = {sum}"
            )));
        }
        Ok(SplitSpec {
            train,
            valid,
            test,
            seed,
        })
    }

    pub fn train(&self) -> f64 {
        self.train
    }

    pub fn valid(&self) -> f64 {
        self.valid
    }

    pub fn test(&self) -> f64 {
        self.test
    }

    /// Edge counts `(train, valid, test)` for `n` interactions. Train and test
    /// are rounded; validation takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let n_train = ((n as f64) * self.train).round() as usize;
        let n_train = n_train.min(n);
        let n_test = (((n as f64) * self.test).round() as usize).min(n - n_train);
        (n_train, n - n_train - n_test, n_test)
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.05,
            valid: 0.75,
            test: 0.20,
            seed: 0,
        }
    }
}

/// Seeded uniform partition of the interactions into train/valid/test.
pub fn split_interactions(
    y: &RelationMatrix,
    spec: &SplitSpec,
) -> Result<(RelationMatrix, RelationMatrix, RelationMatrix)> {
    if y.is_empty() {
        return Err(Error::Stage("cannot split an empty relation".into()));
    }
    let mut edges: Vec<(usize, usize)> = y.edges().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    edges.shuffle(&mut rng);

    let (n_train, n_valid, _) = spec.sizes(edges.len());
    let build = |part: &[(usize, usize)]| {
        RelationMatrix::from_edges(y.head(), y.tail(), y.n_heads(), y.n_tails(), part.iter().copied())
    };
    Ok((
        build(&edges[..n_train])?,
        build(&edges[n_train..n_train + n_valid])?,
        build(&edges[n_train + n_valid..])?,
    ))
}
