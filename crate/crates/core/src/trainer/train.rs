use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, OptimizerState};
use super::config::{LossVariant, NegativePool, TrainConfig};
use super::embedding::{init_embeddings, EmbeddingRole, EmbeddingTable};
use super::loss::{loss_gradients, CandidatePool};
use crate::coefficients::BlockMatrix;
use crate::error::{Error, Result};
use crate::graph::Stage;
use crate::scalar::Scalar;

/// Starting point of a training stage.
#[derive(Debug, Clone, Copy)]
pub enum Warmstart<'a, T> {
    /// Fresh random table, trained alone.
    Random,
    /// Trainable copy of a frozen table; the model is `trainable ∥ frozen`.
    Frozen(&'a EmbeddingTable<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub stage: Stage,
    pub epoch_losses: Vec<f64>,
    pub validation: Vec<f64>,
    pub stopping_epoch: usize,
    /// Epoch whose parameters were kept (the last one without validation).
    pub best_epoch: usize,
    pub zero_norm_rows: usize,
    pub wall_clock: Duration,
}

impl TrainReport {
    /// Line-based log. Wall-clock time is left out so that identical runs
    /// produce identical logs.
    pub fn to_log(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "stage\t{}", self.stage);
        for (i, loss) in self.epoch_losses.iter().enumerate() {
            let _ = write!(out, "epoch\t{}\tloss\t{:e}", i + 1, loss);
            if let Some(v) = self.validation.get(i) {
                let _ = write!(out, "\tvalid\t{v:e}");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "stopping_epoch\t{}", self.stopping_epoch);
        let _ = writeln!(out, "best_epoch\t{}", self.best_epoch);
        let _ = writeln!(out, "zero_norm_rows\t{}", self.zero_norm_rows);
        out
    }
}

/// Early stopping on a validation score where larger is better.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            bad_epochs: 0,
        }
    }

    /// Records a score; returns `(improved, stop)`.
    pub fn observe(&mut self, score: f64) -> (bool, bool) {
        let improved = self.best.is_none_or(|b| score > b);
        if improved {
            self.best = Some(score);
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        (improved, self.bad_epochs >= self.patience)
    }
}

/// Validation callback: scores the full model table, larger is better.
pub type Validator<'a, T> = dyn FnMut(&EmbeddingTable<T>) -> Result<f64> + 'a;

/// Trains one stage with mini-batch Adam.
///
/// With [`Warmstart::Frozen`] the returned table is the concatenation
/// `trainable ∥ frozen` and only the first half is ever updated; otherwise it
/// is the trained table itself. When a validator is supplied training stops
/// after `patience` epochs without improvement and the best epoch's
/// parameters are returned.
pub fn train_stage<T: Scalar>(
    blocks: &BlockMatrix<T>,
    cfg: &TrainConfig<T>,
    warm: Warmstart<'_, T>,
    mut validator: Option<&mut Validator<'_, T>>,
) -> Result<(EmbeddingTable<T>, TrainReport)> {
    cfg.validate()?;
    let started = Instant::now();
    let n = blocks.node_count();
    let stage = blocks.stage();

    let (mut params, frozen) = match warm {
        Warmstart::Random => {
            let role = match stage {
                Stage::Pretrain => EmbeddingRole::Pretrain,
                Stage::Finetune => EmbeddingRole::Finetune,
            };
            (init_embeddings::<T>(n, cfg.dim, cfg.seed, role)?, None)
        }
        Warmstart::Frozen(frozen) => {
            if frozen.rows() != n {
                return Err(Error::Shape(format!(
                    "frozen table has {} rows, blocks cover {n} nodes",
                    frozen.rows()
                )));
            }
            if frozen.dim() != cfg.dim {
                return Err(Error::Shape(format!(
                    "frozen table has dim {}, stage is configured for dim {}",
                    frozen.dim(),
                    cfg.dim
                )));
            }
            (frozen.clone().with_role(EmbeddingRole::Finetune), Some(frozen))
        }
    };
    let model = |p: &EmbeddingTable<T>| match frozen {
        Some(f) => EmbeddingTable::concat(p, f),
        None => Ok(p.clone()),
    };

    let mut pairs = match cfg.loss_variant {
        LossVariant::Contrastive => blocks.positive_pairs(),
        _ => blocks.coefficient_pairs(),
    };
    if pairs.is_empty() {
        return Err(Error::Train("no positive-consistency pairs".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut opt = OptimizerState::new(params.as_slice().len());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = params.clone();
    let mut report = TrainReport {
        stage,
        epoch_losses: Vec::new(),
        validation: Vec::new(),
        stopping_epoch: 0,
        best_epoch: 0,
        zero_norm_rows: 0,
        wall_clock: Duration::ZERO,
    };

    for epoch in 1..=cfg.max_epochs {
        pairs.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in pairs.chunks(cfg.batch_size) {
            let pool = match cfg.negative_pool {
                NegativePool::Sample(k) if k < n => {
                    let mut picked = index::sample(&mut rng, n, k).into_vec();
                    picked.sort_unstable();
                    CandidatePool::Subset(picked)
                }
                _ => CandidatePool::All,
            };
            let table = model(&params)?;
            let ev = loss_gradients(batch, blocks, &table, cfg.dim, cfg, &pool)?;
            if !ev.loss.is_finite() {
                return Err(Error::Train(format!("non-finite loss in epoch {epoch}")));
            }
            report.zero_norm_rows += ev.zero_norm_rows;
            epoch_loss += ev.loss.as_f64() * batch.len() as f64;

            let grad = ev.grad.expect("gradient requested");
            let flat: Vec<T> = if frozen.is_some() {
                (0..n).flat_map(|v| grad.row(v)[..cfg.dim].to_vec()).collect()
            } else {
                grad.as_slice().to_vec()
            };
            adam_step(params.as_mut_slice(), &flat, &mut opt, cfg.lr)?;
            if !params.is_finite() {
                return Err(Error::Train(format!("non-finite parameters in epoch {epoch}")));
            }
        }
        report.epoch_losses.push(epoch_loss / pairs.len() as f64);
        report.stopping_epoch = epoch;

        match validator.as_mut() {
            Some(validate) => {
                let score = validate(&model(&params)?)?;
                report.validation.push(score);
                let (improved, stop) = stopper.observe(score);
                if improved {
                    best.clone_from(&params);
                    report.best_epoch = epoch;
                }
                if stop {
                    break;
                }
            }
            None => report.best_epoch = epoch,
        }
    }
    if validator.is_some() {
        params = best;
    }
    report.wall_clock = started.elapsed();
    Ok((model(&params)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_ten_on_degrading_scores() {
        let mut es = EarlyStopping::new(10);
        let mut stopped_at = None;
        for epoch in 1..=50 {
            let (_, stop) = es.observe(1.0 / epoch as f64);
            if stop {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(11));
    }

    #[test]
    fn improvement_resets_patience() {
        let mut es = EarlyStopping::new(2);
        assert_eq!(es.observe(0.1), (true, false));
        assert_eq!(es.observe(0.1), (false, false));
        assert_eq!(es.observe(0.2), (true, false));
        assert_eq!(es.observe(0.0), (false, false));
        assert_eq!(es.observe(0.0), (false, true));
    }
}
