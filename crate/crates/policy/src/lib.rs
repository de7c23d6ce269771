//! Learned graph optimisation policy: inductive graph embedding, a
//! segment-recurrent attention trunk with feature modulation, multi-task
//! recurrent heads, and PPO training.

pub mod attention;
pub mod config;
pub mod embed;
pub mod net;
pub mod rl;
pub mod sample;

pub use config::{ConfigError, PolicyConfig};
pub use net::{ForwardOptions, ForwardOutput, GraphContext, Policy, PolicyCheckpoint, PolicyError, SegmentCache, TaskSpec};
pub use rl::{
    collect_rollouts, ppo_update, pretrain_finetune_zeroshot, reward, train, Env, GeneralizationRows,
    GeneralizationSetup, PpoHyper, PpoStats, Reward, RewardSource, RolloutBatch, TrainError, TrainOptions,
    TrainOutcome,
};
pub use sample::{iterate_decisions, sample_actions, TaskActionBundle, TaskDecision};
