//! Embedding training: objectives, Adam and the staged training loop.

pub mod adam;
pub mod config;
pub mod embedding;
pub mod loss;
pub mod train;

pub use adam::{adam_step, OptimizerState};
pub use config::{AlphaMode, LossVariant, NegativePool, TrainConfig};
pub use embedding::{init_embeddings, EmbeddingRole, EmbeddingTable};
pub use loss::{ablation_loss, contrastive_loss, cosine, loss_gradients, loss_value, CandidatePool, Evaluation};
pub use train::{train_stage, EarlyStopping, TrainReport, Validator, Warmstart};

use crate::scalar::Scalar;

/// Group-item similarity used for ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreFn {
    #[default]
    Cosine,
    Dot,
}

/// Score of group `g` against item `i`; items follow the `n_groups` group rows.
pub fn score<T: Scalar>(e: &EmbeddingTable<T>, n_groups: usize, g: usize, i: usize, how: ScoreFn) -> T {
    let (a, b) = (e.row(g), e.row(n_groups + i));
    match how {
        ScoreFn::Cosine => cosine(a, b),
        ScoreFn::Dot => a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[&[f64]]) -> EmbeddingTable<f64> {
        let dim = rows[0].len();
        EmbeddingTable::from_vec(rows.len(), dim, EmbeddingRole::Concat, rows.concat()).unwrap()
    }

    #[test]
    fn identical_rows_score_one() {
        let e = table(&[&[0.3, -0.4], &[0.3, -0.4]]);
        assert!((score(&e, 1, 0, 0, ScoreFn::Cosine) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_rows_score_zero() {
        let e = table(&[&[1.0, 0.0], &[0.0, 2.0]]);
        assert_eq!(score(&e, 1, 0, 0, ScoreFn::Cosine), 0.0);
    }

    #[test]
    fn cosine_ignores_positive_scale() {
        let e = table(&[&[0.2, 0.7], &[0.5, -0.1]]);
        let f = table(&[&[0.2 * 3.0, 0.7 * 3.0], &[0.5 * 0.25, -0.1 * 0.25]]);
        let (a, b) = (score(&e, 1, 0, 0, ScoreFn::Cosine), score(&f, 1, 0, 0, ScoreFn::Cosine));
        assert!((a - b).abs() < 1e-15);
        assert!((score(&f, 1, 0, 0, ScoreFn::Dot) - 0.75 * score(&e, 1, 0, 0, ScoreFn::Dot)).abs() < 1e-15);
    }

    #[test]
    fn zero_row_scores_zero() {
        let e = table(&[&[0.0, 0.0], &[0.5, -0.1]]);
        assert_eq!(score(&e, 1, 0, 0, ScoreFn::Cosine), 0.0);
    }
}
