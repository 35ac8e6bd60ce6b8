//! Position-bias-resistant evaluation of multiple-choice answering models.
//!
//! The crate measures a model's positional preference with null prompts
//! ([`bias_probe`]), places each correct answer by sampling the inverse of that
//! preference and moves the most similar distractor away from it
//! ([`semantic_spread`]), runs repeated trials through a [`gateway`]
//! ([`protocol`]), and scores the responses with consistency-aware metrics
//! ([`metrics`]).

pub mod bias_probe;
pub mod clock;
pub mod dataset;
pub mod gateway;
pub mod metrics;
pub mod protocol;
pub mod rng;
pub mod semantic_spread;
