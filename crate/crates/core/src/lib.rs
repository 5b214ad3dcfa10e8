//! Self-supervised pre-training of structural graph encoders by subgraph
//! instance discrimination.
//!
//! Instances are ego subgraphs sampled by random walks with restart and then
//! anonymized. A GIN encoder over spectral positional features, degree
//! one-hots and an ego flag maps each instance to a unit vector, trained with
//! InfoNCE against either in-batch negatives or a momentum-contrast queue.
//! The [`downstream`] module transfers trained encoders to node
//! classification, graph classification and similarity search.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod contrast;
pub mod downstream;
pub mod gin;
pub mod graph;
pub mod optim;
pub mod sampler;
pub mod seeding;
pub mod spectral;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use graph::Graph;
pub use tensor::Tensor;
