use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use extre::pipeline::{
    cmd_evaluate, cmd_extract, cmd_finetune, cmd_pretrain, cmd_recommend, cmd_split, Layout, PipelineConfig, Variant,
};
use extre::{Error, Stage, TrainReport};

/// Extreme cold-start group recommendation.
#[derive(Debug, Parser)]
#[command(name = "extre", version)]
struct Cli {
    /// Pipeline configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// EXTRE, EXTRE_P, EXTRE_F or EXTRE_R.
    #[arg(long, global = true, value_name = "NAME")]
    variant: Option<String>,

    /// Rank training positives too.
    #[arg(long, global = true)]
    no_mask: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StageArg {
    Pretrain,
    Finetune,
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split the group-item interactions into train/valid/test files.
    Split,
    /// Extract coefficient blocks.
    Extract {
        #[arg(long, value_enum, default_value = "all")]
        stage: StageArg,
    },
    /// Train the first stage.
    Pretrain,
    /// Train the second stage on top of the first.
    Finetune,
    /// Rank the full catalog for every group and report metrics.
    Evaluate,
    /// Print Top-K items for the given groups.
    Recommend {
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        #[arg(required = true, value_name = "GROUP")]
        groups: Vec<String>,
    },
}

fn print_report(report: &TrainReport) {
    eprintln!(
        "{} stage: {} epochs, best epoch {}, final loss {:.6e}, {:.2?}",
        report.stage,
        report.stopping_epoch,
        report.best_epoch,
        report.epoch_losses.last().copied().unwrap_or(f64::NAN),
        report.wall_clock
    );
    if report.zero_norm_rows > 0 {
        eprintln!("warning: {} zero-norm embedding rows were scored as 0", report.zero_norm_rows);
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let path = cli
        .config
        .ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let variant = cli.variant.as_deref().map(str::parse::<Variant>).transpose()?;
    let cfg = PipelineConfig::load(&path)?.with_overrides(cli.seed, variant, cli.no_mask)?;
    let layout = Layout::new(&cfg);
    match cli.command {
        Command::Split => {
            let [tr, va, te] = cmd_split(&cfg)?;
            eprintln!("split {} interactions: train {tr}, valid {va}, test {te}", tr + va + te);
        }
        Command::Extract { stage } => {
            let stages: Vec<Stage> = match stage {
                StageArg::Pretrain => vec![Stage::Pretrain],
                StageArg::Finetune => vec![Stage::Finetune],
                StageArg::All if layout.split("train").exists() => vec![Stage::Pretrain, Stage::Finetune],
                StageArg::All => vec![Stage::Pretrain],
            };
            for p in cmd_extract(&cfg, &stages)? {
                eprintln!("wrote {}", p.display());
            }
        }
        Command::Pretrain => print_report(&cmd_pretrain(&cfg)?),
        Command::Finetune => print_report(&cmd_finetune(&cfg)?),
        Command::Evaluate => print!("{}", cmd_evaluate(&cfg)?.to_table()),
        Command::Recommend { k, groups } => {
            for rec in cmd_recommend(&cfg, &groups, k)? {
                for (rank, (item, score)) in rec.items.iter().enumerate() {
                    println!("{}\t{}\t{}\t{score:.6}", rec.group, rank + 1, item);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
