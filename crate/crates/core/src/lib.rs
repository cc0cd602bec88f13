//! Expert routing for dense retrieval.
//!
//! A set of gates (domain experts) each provide their own query embeddings
//! over one shared, frozen document corpus. A pilot embedding library built
//! from training queries routes each new query to a single gate by mean
//! similarity, and the selected gate's embedding is used for retrieval.

pub mod datasets;
pub mod error;
pub mod harness;
pub mod io;
pub mod kmeans;
pub mod metrics;
pub mod model;
pub mod pilot;
pub mod retrieval;
pub mod rng;
pub mod routers;
pub mod synth;

pub use datasets::{DatasetEntry, DatasetManifest, Split};
pub use error::{Error, Result};
pub use harness::{
    run_experiment, Experiment, ExperimentConfig, ExperimentInputs, ExperimentOutput, ExperimentSettings,
};
pub use io::{load_embedding_set, load_qrels, save_embedding_set, EmbeddingFormat};
pub use kmeans::kmeans;
pub use metrics::{evaluate_run, ndcg_at_k, per_instance_performance, PerInstanceScore};
pub use model::{similarity, Embedding, EmbeddingSet, GateId, GateSet, Qrels, QueryRecord, SimilarityMetric};
pub use pilot::{assign_max_gates, build_pilot_library, LibraryOptions, MaxGateAssignment, PilotEntry, PilotLibrary};
pub use retrieval::{top_k, RetrievalRun, ScoredDoc};
pub use routers::{RouterKind, RoutingDecision};
pub use synth::{generate_world, SynthConfig, SynthWorld};
