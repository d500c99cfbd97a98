//! Desk-scale model of a sub-Arctic environmental sensor network: a
//! file-based application-layer codec, node and gateway state machines,
//! a split backend, a seasonal link model, a deterministic discrete-
//! event kernel, and the analytics that summarize a run.

pub mod alp;
pub mod analytics;
pub mod backend;
pub mod environment;
pub mod gateway;
pub mod node;
pub mod rng;
pub mod sim;
