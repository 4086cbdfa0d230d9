//! Knowledge-aware multi-label video classification.
//!
//! The pipeline turns an external concept graph into a training-time
//! regularizer for video classifiers:
//!
//! 1. [`kgraph`] loads a concept edge list, matches class labels to nodes,
//!    and measures pairwise proximity with random walks with restart.
//! 2. [`consistency`] symmetrizes the walk scores into a sparse label
//!    consistency matrix, prunes it to the strongest neighbors, and exposes
//!    the square-root Laplacian penalty with analytic gradients.
//! 3. [`dataset`] reads and writes video feature/label files and samples
//!    synthetic corpora with planted label correlations.
//! 4. [`model`] pools frame features and scores them with a logistic or
//!    mixture-of-experts head.
//! 5. [`train`] descends the combined objective `C + λ·penalty` so the
//!    graph pulls related labels toward agreement through the classifier
//!    weights, not just over the output scores.
//! 6. [`eval`] reports MAP, HIT, and GAP at a top-k cutoff.
//! 7. [`bench`] times the sparse penalty against its all-pairs equivalent.
//!
//! Numeric kernels are generic over [`Real`] (`f32` or `f64`). The aliases
//! at the crate root fix `f64` as the working precision; the generic items
//! live in their modules for callers who want something else.

pub mod bench;
pub mod consistency;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod kgraph;
pub mod model;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use kgraph::{ConceptId, KnowledgeGraph, RelationFilter};
pub use model::ModelKind;
pub use scalar::Real;

/// Working precision for the crate-root aliases.
pub type Scalar = f64;

pub type RwrConfig = kgraph::RwrConfig<Scalar>;
pub type RwrOutcome = kgraph::RwrOutcome<Scalar>;
pub type ProximityTable = kgraph::ProximityTable<Scalar>;
pub type ConsistencyMatrix = consistency::ConsistencyMatrix<Scalar>;
pub type VideoInstance = dataset::VideoInstance<Scalar>;
pub type Dataset = dataset::Dataset<Scalar>;
pub type SynthConfig = dataset::SynthConfig<Scalar>;
pub type ModelParams = model::ModelParams<Scalar>;
pub type Forward = model::Forward<Scalar>;
pub type TrainConfig = train::TrainConfig<Scalar>;
pub type TrainReport = train::TrainReport<Scalar>;
pub type EpochRecord = train::EpochRecord<Scalar>;
pub type EvalReport = eval::EvalReport<Scalar>;
pub type PerVideo = eval::PerVideo<Scalar>;
