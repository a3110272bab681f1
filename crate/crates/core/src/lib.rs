//! Transductive N-way K-shot classification by explicit class knowledge
//! propagation over episode graphs.
//!
//! The pipeline for one episode is: node initialization
//! ([`episode::init_node_features`]), instance-level message passing with
//! multi-head relations ([`comparison`]), soft pooling into class nodes
//! ([`squeeze`]), class-level calibration with semantic embeddings
//! ([`calibration`]), and relation-based query inference ([`inference`]).
//! [`model::forward_episode`] strings these together on a [`tensor::Graph`];
//! [`harness`] trains, evaluates and inspects models.

pub mod calibration;
pub mod comparison;
pub mod episode;
pub mod error;
pub mod harness;
pub mod inference;
pub mod model;
pub mod squeeze;
pub mod tensor;

pub use error::{EngineError, Error, Result};
pub use model::{forward_episode, Ablation, ModelConfig, ModelParams};

/// Adjacencies and probabilities are clamped into `[CLAMP_EPS, 1 - CLAMP_EPS]`
/// before any logarithm.
pub const CLAMP_EPS: f64 = 1e-7;
