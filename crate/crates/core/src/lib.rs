//! Few-shot multi-task prompting on heterogeneous graphs.
//!
//! Node, edge and graph classification are reformulated as classification of
//! induced subgraphs. An encoder is pre-trained contrastively on
//! type-aware augmented views, frozen, and adapted to each few-shot task by
//! tuning one feature prompt per node type plus a linear head.

pub mod augment;
pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod encoder;
pub mod error;
pub mod experiments;
pub mod hetgraph;
pub mod optim;
pub mod pretrain;
pub mod prompt;
pub mod rng;
pub mod taskbuilder;

pub use error::{HgmpError, Result};
