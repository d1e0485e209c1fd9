//! Tooling for judging embedding models by how well they serve pretraining
//! data curation.
//!
//! The crate covers the whole path from vectors to numbers: loading and
//! packing corpora ([`corpus`]), cheap LM-derived embeddings ([`embed`]),
//! PCA and sparse random projection ([`reduce`]), balanced K-means and
//! reciprocal agglomerative clustering ([`cluster`]), the variance-reduction
//! and cluster-purity metrics ([`metrics`]), diversity-based subset
//! selection ([`curate`]), and a seeded synthetic corpus generator with
//! brute-force reference implementations ([`testkit`]).

pub mod cluster;
pub mod corpus;
pub mod curate;
pub mod distance;
pub mod embed;
pub mod metrics;
pub mod reduce;
pub mod testkit;
