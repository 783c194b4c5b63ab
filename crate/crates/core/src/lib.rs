//! Desk-scale laboratory for multi-task, multi-stage contrastive training of
//! dual-encoder embedding models: InfoNCE losses with hard negatives and
//! analytic gradients, matryoshka dimension combination, toy text/image
//! encoders with positional-embedding interpolation, AdamW with cosine decay,
//! a seeded synthetic data generator, the three-stage training pipeline and
//! retrieval/STS evaluation metrics.

pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod fdcheck;
pub mod loss;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use loss::{
    info_nce, info_nce_hard, mrl_loss, mrl_loss_weighted, stage_loss, unified_loss, LossOutput,
    MixedBatch, MrlBatch, PairBatch, RowKind, Stage, StageLossOutput, Temperature, TextBatch,
    TripletBatch, NEGATIVES_PER_QUERY,
};
pub use tensor::{
    cosine, l2_normalize, log_softmax_stable, pairwise_cosine, truncate_renorm,
    EmbeddingBatch, Grid, Matrix, Vector,
};
