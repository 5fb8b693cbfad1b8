//! Cold & Warm matching network.
//!
//! A two-expert user tower (a cold-start expert over profile features and a
//! warm-up expert over profile plus behaviour) mixed by a gate on the user's
//! activity state. Both experts attend over a frozen table of user-group
//! embeddings obtained by clustering a pre-trained baseline. A bias net over
//! mutually-informative user features shifts the training score, and dynamic
//! knowledge distillation lets the cold expert learn from the warm expert on
//! samples where the warm expert is the better predictor.
//!
//! Modules, bottom-up:
//! - [`tensor`]: dense buffers, parameters, differentiable ops, Adam
//! - [`data`]: parsing, vocabularies, split, cohorts, negatives, batching
//! - [`features`]: mutual-information ranking of bias-net inputs
//! - [`cluster`] / [`pretrain`]: baseline two-tower, k-means, group table
//! - [`model`]: the Cold & Warm network and its training objective
//! - [`eval`]: brute-force retrieval and per-cohort metrics
//! - [`checkpoint`], [`config`], [`pipeline`]: persistence and orchestration

pub mod checkpoint;
pub mod cluster;
pub mod config;
pub mod container;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod pipeline;
pub mod pretrain;
pub mod tensor;

pub use error::{Error, Result};
