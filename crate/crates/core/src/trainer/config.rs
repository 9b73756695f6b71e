use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossVariant {
    /// Weighted contrastive objective over positive-consistency pairs.
    Contrastive,
    /// `Σ (β - α) σ(e1·e2)` over all coefficient pairs.
    Origin,
    /// Squared error of `e1·e2` against `α - β`.
    Mse,
    /// Binary cross-entropy with α-weighted positives and β-weighted negatives.
    CrossEntropy,
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "contrastive" => Ok(LossVariant::Contrastive),
            "origin" => Ok(LossVariant::Origin),
            "mse" => Ok(LossVariant::Mse),
            "ce" | "cross_entropy" => Ok(LossVariant::CrossEntropy),
            other => Err(Error::Config(format!("unknown loss variant {other:?}"))),
        }
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossVariant::Contrastive => "contrastive",
            LossVariant::Origin => "origin",
            LossVariant::Mse => "mse",
            LossVariant::CrossEntropy => "ce",
        })
    }
}

/// Where the consistency enters the contrastive term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaMode {
    /// `α · (-log(exp(s/τ) / D))`.
    Weight,
    /// `-log(α exp(s/τ) / D)`; α only shifts the loss by a constant.
    Literal,
}

impl FromStr for AlphaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "weight" => Ok(AlphaMode::Weight),
            "literal" => Ok(AlphaMode::Literal),
            other => Err(Error::Config(format!("unknown alpha mode {other:?}"))),
        }
    }
}

/// Candidates entering the contrastive denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativePool {
    All,
    /// Uniform sample of this many nodes per mini-batch, no importance correction.
    Sample(usize),
}

impl FromStr for NegativePool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(NegativePool::All);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(NegativePool::Sample(k)),
            _ => Err(Error::Config(format!(
                "negative pool must be `all` or a positive count, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub dim: usize,
    pub lr: T,
    pub tau: T,
    pub loss_variant: LossVariant,
    pub alpha_mode: AlphaMode,
    pub batch_size: usize,
    pub negative_pool: NegativePool,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        TrainConfig {
            dim: 64,
            lr: T::of(0.001),
            tau: T::one(),
            loss_variant: LossVariant::Contrastive,
            alpha_mode: AlphaMode::Weight,
            batch_size: 1024,
            negative_pool: NegativePool::All,
            patience: 10,
            max_epochs: 200,
            seed: 0,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive")))
            }
        };
        positive("dim", self.dim > 0)?;
        positive("lr", self.lr > T::zero() && self.lr.is_finite())?;
        positive("tau", self.tau > T::zero() && self.tau.is_finite())?;
        positive("batch_size", self.batch_size > 0)?;
        positive("patience", self.patience > 0)?;
        positive("max_epochs", self.max_epochs > 0)?;
        if self.negative_pool == NegativePool::Sample(0) {
            return Err(Error::Config("negative sample size must be at least 1".into()));
        }
        Ok(())
    }
}
