//! Desk-scale execution of split federated training: a layered toy model,
//! synthetic sharded data, the training loop, constant estimation and a
//! latency replay of the same schedule.

pub mod data;
pub mod estimate;
pub mod model;
pub mod timing;
pub mod train;

pub use data::{DataShards, Dataset};
pub use estimate::{estimate_constants, Constants, EstimateConfig, GradientOracle, MlpOracle};
pub use model::{LayerCost, Mlp, Params};
pub use timing::{replay_timing, Event, Step, Timeline};
pub use train::{train, RoundRecord, TrainOutput, Trainer, TrainingState};
