//! Personalised search re-ranking with a hierarchical recurrent user model.
//!
//! A session-level GRU summarises the current session, a user-level GRU runs
//! over past sessions, and query-aware attention picks the parts of the
//! user's history that matter for the query at hand. Candidates are scored by
//! cosine similarity to both interest vectors plus a small click-feature
//! network, and the whole model is trained with a LambdaRank-weighted
//! pairwise loss on SAT clicks.

pub mod autodiff;
pub mod baselines;
pub mod dataset;
pub mod evaluation;
pub mod hrnn;
pub mod pipeline;
pub mod query_log;
pub mod ranker_training;
pub mod synthlog;
pub mod text_repr;

pub use baselines::{ClickStore, PClick, Ptm, TopicModel};
pub use dataset::{Dataset, PreparedQuery, PreparedSession, PreparedUser};
pub use evaluation::{evaluate, MetricsReport, ModelEvaluation, OriginalRanking, Reranker};
pub use hrnn::{Model, ModelConfig, ModelVariant};
pub use query_log::{QueryEvent, Session, SessionRole, SplitConfig, UserLog};
pub use ranker_training::{train, TrainConfig, TrainReport};
pub use synthlog::{GenConfig, World, WorldConfig};
pub use text_repr::{TextEncoder, Vocabulary};
