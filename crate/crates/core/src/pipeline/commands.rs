//! Subcommands over a working directory:
//!
//! ```text
//! out/y.train  y.valid  y.test          split group-item interactions
//! out/blocks/<stage>_<label>.tsv        coefficient blocks
//! out/pretrain.emb  pretrain.log        first stage
//! out/finetune.emb  model.emb  finetune.log
//! out/metrics.tsv  metrics.txt
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use super::config::{PipelineConfig, Variant};
use crate::coefficients::{assemble_blocks, read_block, write_block, BlockMatrix};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, rank_topk, recall_at, MetricsReport};
use crate::graph::{load_relation, split_interactions, write_relation, NodeKind, NodeSpace, RelationMatrix, Stage, TripartiteGraph};
use crate::trainer::{score, train_stage, EmbeddingRole, EmbeddingTable, TrainConfig, TrainReport, Validator, Warmstart};

pub const SPLIT_PARTS: [&str; 3] = ["train", "valid", "test"];

/// Output locations derived from the configured directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Layout {
            root: cfg.out_dir.clone(),
        }
    }

    pub fn split(&self, part: &str) -> PathBuf {
        self.root.join(format!("y.{part}"))
    }

    pub fn block(&self, stage: Stage, label: &str) -> PathBuf {
        self.root.join("blocks").join(format!("{stage}_{label}.tsv"))
    }

    pub fn pretrain_emb(&self) -> PathBuf {
        self.root.join("pretrain.emb")
    }

    pub fn finetune_emb(&self) -> PathBuf {
        self.root.join("finetune.emb")
    }

    pub fn model_emb(&self) -> PathBuf {
        self.root.join("model.emb")
    }

    pub fn log(&self, command: &str) -> PathBuf {
        self.root.join(format!("{command}.log"))
    }

    pub fn metrics(&self, ext: &str) -> PathBuf {
        self.root.join(format!("metrics.{ext}"))
    }

    /// Table used for ranking under `variant`.
    pub fn ranking_emb(&self, variant: Variant) -> PathBuf {
        match variant {
            Variant::ExtreP => self.pretrain_emb(),
            _ => self.model_emb(),
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// The graph seen by every command except `split`: group-user and user-item
/// relations plus whichever split files exist. The raw group-item file is
/// never read here.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub graph: TripartiteGraph,
    pub valid: Option<RelationMatrix>,
    pub test: Option<RelationMatrix>,
}

impl Workspace {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let layout = Layout::new(cfg);
        let mut groups = NodeSpace::new(NodeKind::Group);
        let mut users = NodeSpace::new(NodeKind::User);
        let mut items = NodeSpace::new(NodeKind::Item);
        let z = load_relation(&cfg.z, &mut groups, &mut users)?;
        let x = load_relation(&cfg.x, &mut users, &mut items)?;
        let mut parts = Vec::new();
        for part in SPLIT_PARTS {
            let path = layout.split(part);
            parts.push(if path.exists() {
                Some(load_relation(&path, &mut groups, &mut items)?)
            } else {
                None
            });
        }
        let (ng, ni) = (groups.len(), items.len());
        let widen = |r: Option<RelationMatrix>| r.map(|r| r.resized(ng, ni)).transpose();
        let mut parts = parts.into_iter();
        let train = parts.next().flatten();
        let valid = widen(parts.next().flatten())?;
        let test = widen(parts.next().flatten())?;
        let graph = TripartiteGraph::new(groups, users, items, z, x, train)?;
        Ok(Workspace { graph, valid, test })
    }

    pub fn n_groups(&self) -> usize {
        self.graph.count(NodeKind::Group)
    }

    pub fn n_items(&self) -> usize {
        self.graph.count(NodeKind::Item)
    }

    fn check_table(&self, e: &EmbeddingTable<f64>, path: &Path) -> Result<()> {
        let expected = self.n_groups() + self.n_items();
        if e.rows() != expected {
            return Err(Error::Shape(format!(
                "{} has {} rows, the graph has {expected} groups and items",
                path.display(),
                e.rows()
            )));
        }
        Ok(())
    }
}

/// Edge counts of the written train/valid/test files.
pub fn cmd_split(cfg: &PipelineConfig) -> Result<[usize; 3]> {
    let y_path = cfg
        .y
        .as_ref()
        .ok_or_else(|| Error::Config("[data] y is required for split".into()))?;
    let mut groups = NodeSpace::new(NodeKind::Group);
    let mut items = NodeSpace::new(NodeKind::Item);
    let y = load_relation(y_path, &mut groups, &mut items)?;
    let (train, valid, test) = split_interactions(&y, &cfg.split)?;
    let layout = Layout::new(cfg);
    create_dir(&layout.root)?;
    for (part, rel) in SPLIT_PARTS.iter().zip([&train, &valid, &test]) {
        write_relation(&layout.split(part), rel, &groups, &items)?;
    }
    Ok([train.nnz(), valid.nnz(), test.nnz()])
}

/// Extracts and writes the four blocks of each requested stage.
pub fn cmd_extract(cfg: &PipelineConfig, stages: &[Stage]) -> Result<Vec<PathBuf>> {
    let ws = Workspace::load(cfg)?;
    let layout = Layout::new(cfg);
    let mut written = Vec::new();
    for &stage in stages {
        let metapaths = cfg.preset.metapaths(stage)?;
        let blocks = assemble_blocks::<f64>(stage, &ws.graph, &metapaths)?;
        create_dir(&layout.root.join("blocks"))?;
        for block in blocks.blocks() {
            let path = layout.block(stage, &block.spec().label);
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_block(block, BufWriter::new(file)).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Reads the persisted blocks of `stage` and checks them against the graph.
pub fn load_blocks(cfg: &PipelineConfig, ws: &Workspace, stage: Stage) -> Result<BlockMatrix<f64>> {
    let layout = Layout::new(cfg);
    let mut blocks = Vec::new();
    for spec in cfg.preset.metapaths(stage)? {
        let path = layout.block(stage, &spec.label);
        let file = File::open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingInput(path.clone())
            } else {
                Error::io(&path, e)
            }
        })?;
        let block = read_block::<f64, _>(BufReader::new(file), &path.display().to_string())?;
        if block.stage() != stage || block.spec().type_pair() != spec.type_pair() {
            return Err(Error::Format(format!("{} does not hold the {stage} {spec} block", path.display())));
        }
        let expect = (ws.graph.count(spec.head), ws.graph.count(spec.tail));
        if (block.n_heads(), block.n_tails()) != expect {
            return Err(Error::Shape(format!(
                "{} is {}x{}, the graph needs {}x{}; re-run extract",
                path.display(),
                block.n_heads(),
                block.n_tails(),
                expect.0,
                expect.1
            )));
        }
        blocks.push(block);
    }
    BlockMatrix::from_blocks(blocks)
}

fn stage_config(cfg: &PipelineConfig, stage: Stage, seed: u64) -> TrainConfig<f64> {
    let mut t = cfg.stage(stage).train.clone();
    t.seed = seed;
    t
}

fn run_stage(
    cfg: &PipelineConfig,
    ws: &Workspace,
    stage: Stage,
    seed: u64,
    warm: Warmstart<'_, f64>,
) -> Result<(EmbeddingTable<f64>, TrainReport)> {
    let blocks = load_blocks(cfg, ws, stage)?;
    let tcfg = stage_config(cfg, stage, seed);
    let valid = ws.valid.as_ref().filter(|v| !v.is_empty());
    match valid {
        Some(valid) if cfg.stage(stage).validate => {
            let n_groups = ws.n_groups();
            let mask = if cfg.mask { ws.graph.y.as_ref() } else { None };
            let mut validate = |e: &EmbeddingTable<f64>| recall_at(e, n_groups, valid, cfg.valid_k, mask, cfg.score);
            train_stage(&blocks, &tcfg, warm, Some(&mut validate as &mut Validator<'_, f64>))
        }
        _ => train_stage(&blocks, &tcfg, warm, None),
    }
}

/// First training stage; writes `pretrain.emb` and `pretrain.log`.
pub fn cmd_pretrain(cfg: &PipelineConfig) -> Result<TrainReport> {
    let stage = cfg
        .variant
        .first_stage()
        .ok_or_else(|| Error::Config(format!("variant {} has no pre-training stage", cfg.variant)))?;
    let ws = Workspace::load(cfg)?;
    let (table, report) = run_stage(cfg, &ws, stage, cfg.seed, Warmstart::Random)?;
    let layout = Layout::new(cfg);
    create_dir(&layout.root)?;
    table.with_role(EmbeddingRole::Pretrain).save(&layout.pretrain_emb())?;
    write_text(&layout.log("pretrain"), &report.to_log())?;
    Ok(report)
}

/// Second training stage; writes `finetune.emb`, the ranking table
/// `model.emb` and `finetune.log`.
pub fn cmd_finetune(cfg: &PipelineConfig) -> Result<TrainReport> {
    let stage = cfg
        .variant
        .second_stage()
        .ok_or_else(|| Error::Config(format!("variant {} has no fine-tuning stage", cfg.variant)))?;
    let ws = Workspace::load(cfg)?;
    let layout = Layout::new(cfg);
    let seed = cfg.seed.wrapping_add(1);
    let (model, finetuned, report) = if cfg.variant == Variant::ExtreF {
        let (table, report) = run_stage(cfg, &ws, stage, seed, Warmstart::Random)?;
        (table.clone(), table, report)
    } else {
        let path = layout.pretrain_emb();
        let pre = EmbeddingTable::<f64>::load(&path)?;
        ws.check_table(&pre, &path)?;
        let dim = cfg.stage(stage).train.dim;
        if pre.dim() != dim {
            return Err(Error::Shape(format!(
                "{} has dim {}, the fine-tuning stage is configured for dim {dim}",
                path.display(),
                pre.dim()
            )));
        }
        let (model, report) = run_stage(cfg, &ws, stage, seed, Warmstart::Frozen(&pre))?;
        let (finetuned, _) = model.split_cols(dim, (EmbeddingRole::Finetune, EmbeddingRole::Pretrain))?;
        (model, finetuned, report)
    };
    finetuned.with_role(EmbeddingRole::Finetune).save(&layout.finetune_emb())?;
    model.save(&layout.model_emb())?;
    write_text(&layout.log("finetune"), &report.to_log())?;
    Ok(report)
}

fn ranking_table(cfg: &PipelineConfig, ws: &Workspace) -> Result<EmbeddingTable<f64>> {
    let path = Layout::new(cfg).ranking_emb(cfg.variant);
    let e = EmbeddingTable::load(&path)?;
    ws.check_table(&e, &path)?;
    Ok(e)
}

/// Full-catalog evaluation on the test split; writes `metrics.tsv` and
/// `metrics.txt`.
pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<MetricsReport> {
    let ws = Workspace::load(cfg)?;
    let layout = Layout::new(cfg);
    let test = ws
        .test
        .as_ref()
        .ok_or_else(|| Error::MissingInput(layout.split("test")))?;
    let e = ranking_table(cfg, &ws)?;
    let mask = if cfg.mask { ws.graph.y.as_ref() } else { None };
    let report = evaluate(&e, ws.n_groups(), test, &cfg.ks, mask, cfg.score, cfg.entropy_base)?;
    write_text(&layout.metrics("tsv"), &report.to_records())?;
    write_text(&layout.metrics("txt"), &report.to_table())?;
    Ok(report)
}

/// A group's recommended items with their scores, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    pub group: String,
    pub items: Vec<(String, f64)>,
}

/// Top-K items for the named groups.
pub fn cmd_recommend(cfg: &PipelineConfig, group_ids: &[String], k: usize) -> Result<Vec<Recommendation>> {
    let ws = Workspace::load(cfg)?;
    let unknown: Vec<String> = group_ids
        .iter()
        .filter(|g| ws.graph.groups.get(g).is_none())
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownGroups(unknown));
    }
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let e = ranking_table(cfg, &ws)?;
    let groups: Vec<usize> = group_ids.iter().filter_map(|g| ws.graph.groups.get(g)).collect();
    let mask = if cfg.mask { ws.graph.y.as_ref() } else { None };
    let ranked = rank_topk(&e, ws.n_groups(), &groups, k, mask, cfg.score)?;
    Ok(groups
        .iter()
        .zip(&ranked.lists)
        .map(|(&g, list)| Recommendation {
            group: ws.graph.groups.id(g).to_owned(),
            items: list
                .iter()
                .map(|&i| (ws.graph.items.id(i).to_owned(), score(&e, ws.n_groups(), g, i, cfg.score)))
                .collect(),
        })
        .collect())
}
