//! Similarities, losses, hand-derived gradients and the training loop.

pub mod gradcheck;
mod loss;
mod objective;
mod similarity;
mod train;

pub use loss::{order_loss, order_loss_grad, ranking_loss, ranking_loss_grad, row_log_softmax, total_loss, LossConfig};
pub use objective::{
    handcraft_embeddings, prepare_examples, BatchLoss, GradTable, LossTerms, Objective, TextFeatures, TrainExample,
};
pub use similarity::{
    dot, global_similarity, local_scores, local_similarity, normalized_rows, similarity_matrix, softmax_pool,
    softmax_weights, ClassEmbeddingBank,
};
pub use train::{fit, lr_at, EpochLog, Optimizer, OptimizerKind, TrainConfig};
