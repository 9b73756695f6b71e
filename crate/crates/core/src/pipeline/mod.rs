//! Configuration and the end-to-end subcommands.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_evaluate, cmd_extract, cmd_finetune, cmd_pretrain, cmd_recommend, cmd_split, load_blocks, Layout,
    Recommendation, Workspace,
};
pub use config::{PipelineConfig, StageSettings, Variant};
