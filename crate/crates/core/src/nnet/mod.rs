//! Toy transformer encoder, LM head, task heads, losses and optimizer.

pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod loss;
pub mod optim;
pub mod params;
pub mod pretrain;
pub mod state;

pub use config::ModelConfig;
pub use forward::{ModelInput, OutputGrads, Outputs};
pub use loss::{
    multitask_loss, or_ce_span_loss, token_entropy, DatasetProfile, LossBreakdown, LossWeights,
    SegmentTargets,
};
pub use optim::{AdamWConfig, LinearSchedule};
pub use params::Params;
pub use pretrain::{masked_lm_pretrain, MlmConfig, MlmTokens};
pub use state::ModelState;
