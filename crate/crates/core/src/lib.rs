//! Extreme cold-start group recommendation.
//!
//! Consistency and discrepancy coefficients are extracted over meta-paths of a
//! group/user/item graph, embeddings are trained in two stages with a weighted
//! contrastive objective, and groups are ranked against the full item catalog.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the pipeline uses.

pub mod coefficients;
pub mod error;
pub mod evaluator;
pub mod graph;
pub mod oracle;
pub mod pipeline;
pub mod scalar;
pub mod trainer;

pub use coefficients::{
    assemble_blocks, delta_weight, extract_one_hop, extract_one_hop_pair, extract_two_hop, read_block, write_block,
    BlockMatrix, CoefficientBlock, Discrepancy, MetaPathSpec, TaskPreset,
};
pub use error::{Error, Result};
pub use evaluator::{
    accuracy_metrics, diversity_from_counts, diversity_metrics, evaluate, rank_topk, recall_at, AccuracyAtK, Diversity,
    MetricsReport, RankingResult,
};
pub use graph::{
    load_relation, read_relation, split_interactions, total_degrees, write_relation, write_relation_to, Degrees, NodeKind,
    NodeSpace, RelationMatrix, SplitSpec, Stage, TripartiteGraph,
};
pub use oracle::{oracle_pair, Oracle};
pub use pipeline::{PipelineConfig, Variant};
pub use scalar::Scalar;
pub use trainer::{
    adam_step, init_embeddings, score, train_stage, AlphaMode, EmbeddingRole, EmbeddingTable, LossVariant,
    NegativePool, OptimizerState, ScoreFn, TrainConfig, TrainReport, Warmstart,
};

pub type Blocks = BlockMatrix<f64>;
pub type Block = CoefficientBlock<f64>;
pub type Embeddings = EmbeddingTable<f64>;
pub type Embeddings32 = EmbeddingTable<f32>;
pub type Config = TrainConfig<f64>;
