//! Self-contained neural stack: dense / LSTM layers with hand-written
//! backward passes, Adam, a plateau LR scheduler, the training loop with
//! best-validation checkpointing, and binary checkpoint persistence.

pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod train;

pub use checkpoint::{load_bundle, save_bundle, write_loss_history_csv};
pub use layers::{Dense, Dropout, LstmCell, Relu};
pub use model::{Model, ModelConfig};
pub use train::{
    predict, train, EpochRecord, ModelBundle, PlateauScheduler, TrainConfig, TrainMeta,
};
