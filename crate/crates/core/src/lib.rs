//! Mechanism-relation knowledge base.
//!
//! Builds a corpus-level KB of directed `(arg1, arg2, class)` relations from
//! upstream extraction records, indexes the unique entity surfaces with an
//! embedding provider, and answers structured queries by ranking relations on
//! the minimum of their per-argument similarities. The [`eval`] module holds
//! the ranking and annotator-agreement metrics used to judge result lists.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`). The aliases at
//! the crate root fix the scalar used by the on-disk index and the service.

pub mod embed;
pub mod eval;
pub mod hash;
pub mod index;
pub mod ingest;
pub mod normalize;
pub mod scalar;
pub mod schema;

pub use embed::{EmbedError, EmbeddingProvider, EmbeddingVector, FallbackEmbedder};
pub use index::{build_index, search_bruteforce, search_threshold, BuildOptions, KbIndex, SearchStats};
pub use normalize::NormalizationConfig;
pub use scalar::Scalar;
pub use schema::{
    EntitySurface, ExtractionRecord, MechanismRelation, Provenance, RelationClass, RelationId,
    RelationQuery, ScoredResult,
};

/// Scalar used by the persisted index and the search service.
pub type Real = f32;

pub type Embedding = EmbeddingVector<Real>;
pub type Index = KbIndex<Real>;
pub type Hit = ScoredResult<Real>;

pub type Embedding64 = EmbeddingVector<f64>;
pub type Index64 = KbIndex<f64>;
pub type Hit64 = ScoredResult<f64>;
