//! Seeded synthetic corpora with planted cluster, source and loss structure,
//! and brute-force reference implementations for checking the production
//! code paths.

pub mod oracle;
mod synth;

pub use synth::{
    generate, noise_embeddings, random_clustering, SynthError, SyntheticCorpus, SyntheticSpec,
};
