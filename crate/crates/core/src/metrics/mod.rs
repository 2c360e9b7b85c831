//! Reference-based scoring of generated utterances.

mod embedding;
mod meteor;
pub mod porter;

pub use embedding::{
    cosine, embedding_similarity, fnv1a, Embedder, EmbeddingVector, HashingEmbedder, RemoteEmbedder,
    RemoteEmbedderConfig, MOCK_DIMENSION,
};
pub use meteor::{align_unigrams, meteor, score_alignment, AlignedPair, Alignment, MatchStage, MeteorScore};
pub use porter::stem;
