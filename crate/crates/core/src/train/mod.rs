//! Training procedures and their optimizer, schedule and bookkeeping.

pub mod mapping;
pub mod metrics;
pub mod optim;
pub mod strategies;

pub use mapping::{block_mapping, BlockMapping, MappingKind};
pub use metrics::{EpochSummary, NoObserver, PassCounts, RunMetrics, Score, Split, TrainObserver};
pub use optim::{cosine_lr, AdamW, AdamWConfig, ParamGroup};
pub use strategies::{
    bind_shared_adapters, distill_two_step, evaluate, parameter_digest, train_adapt, train_probing, train_slad,
    AdaptMode, Model, TrainConfig, DEFAULT_CLS_BLOCKS,
};
