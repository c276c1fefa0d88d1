//! Logical-consistency tooling for multi-attribute labels: a rule language and
//! compiled checker, Bag-of-Labels poisoning, consistency-aware accuracy
//! metrics, label compensation, and a small adversarial trainer pairing an MLP
//! classifier with a self-attention logic discriminator.

pub mod batch;
pub mod compensation;
pub mod consistency;
pub mod dataio;
pub mod error;
pub mod logicnet;
pub mod metrics;
pub mod poisoning;
pub mod rules;
pub mod tensor;

pub use batch::{LabelBatch, LabelKind};
pub use compensation::{compensate, CompensationReport};
pub use consistency::{check_naive, compile, failed_ratio, CompiledChecker, ConsistencyVerdict};
pub use dataio::{load_labels, save_labels, synth_generate, Dataset, SyntheticSpec};
pub use error::{Error, Result};
pub use logicnet::{train, TrainConfig, TrainMode, TrainState};
pub use metrics::{evaluate_predictions, AccuracyReport, EvalMode, Penalty};
pub use poisoning::{bag_of_labels, BolMode, PoisonOutcome};
pub use rules::{builtin_rules, derive_condition_groups, parse_rules, serialize_rules, AttributeSchema, RuleSet};
