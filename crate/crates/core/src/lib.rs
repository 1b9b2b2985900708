//! PairRE knowledge-graph embeddings: paired relation vectors scored by
//! `−‖h∘r_h − t∘r_t‖²`, trained with self-adversarial negative sampling and
//! optional rule constraints, plus baseline scorers and a filtered
//! link-prediction evaluator.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod eval;
pub mod model;
pub mod optim;
pub mod patterns;
pub mod rules;
pub mod trainer;

pub use config::TrainConfig;
pub use data::{FilterIndex, RelationCategory, Triple, TripleStore, Vocab};
pub use eval::{evaluate, Metrics, RankingReport, TiePolicy};
pub use model::{EmbeddingTable, ScorerKind};
pub use rules::RuleSet;
pub use trainer::{fit, Trainer};
