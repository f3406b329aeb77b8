//! Reverse-mode differentiation, GraphSAGE and dense networks, score-based
//! losses and an early-stopping trainer.

mod checkpoint;
mod loss;
mod network;
mod tape;
mod tensor;
mod train;

pub use checkpoint::Checkpoint;
pub use loss::{vs_normalizer, CompositeLossConfig, Loss, NONNEG_PENALTY, SMOOTHING_EPS};
pub use network::{
    graph_neighbors, stack, Forward, Instance, LayerSpec, Mode, Network, NetworkSpec, RunningStats, BATCH_NORM_EPS,
    BATCH_NORM_MOMENTUM,
};
pub use tape::{Gradients, Groups, Neighbors, Tape, Var};
pub use tensor::Tensor;
pub use train::{train, Adam, EpochLog, TrainConfig, TrainingLog};
