//! Desk-scale offline MARL benchmark: the focus-fire environment, scripted
//! behavior policies, QMIX learners and dataset metrics.

pub mod behavior;
pub mod env;
pub mod learner;
pub mod metrics;

pub use behavior::{generate_offline_dataset, rollout, BehaviorQuality, FocusFirePolicy, Policy};
pub use env::{EnvConfig, FocusFireEnv, StepOutcome, Unit, ATTACK_OFFSET, NOOP};
pub use learner::{
    bcq_admissible, cql_penalty, evaluate, train_offline, EvalReport, LearnerConfig, LearnerLog,
    OfflineLearner, Regularizer,
};
pub use metrics::{cooperation_metric, coverage_statistic};
