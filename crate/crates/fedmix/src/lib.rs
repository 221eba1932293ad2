//! Deterministic federated-learning simulator.
//!
//! The library trains binary classifiers with round-based federated
//! averaging over a population of clients whose data never pools, and
//! implements strategies for mixing a datacenter-resident dataset into that
//! training: parallel central/federated branches merged by weight, shipping
//! central examples to clients, and broadcasting a central gradient. An
//! oracle scenario (clients counterfactually hold all data) and a
//! pretrain-then-fine-tune baseline bracket the comparison from above and
//! below.
//!
//! Everything is deterministic: RNG streams derive from (master seed,
//! purpose, round, client), so a run is a pure function of its inputs.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod fedavg;
pub mod metrics;
pub mod mixing;
pub mod model;
pub mod optim;
pub mod seed;

pub use error::{Error, Result};
