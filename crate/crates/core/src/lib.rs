//! Social learning over weakly-connected graphs.
//!
//! The crate simulates the log-linear belief diffusion recursion over a
//! network split into *sending* components (strongly connected, mutually
//! isolated) and *receiving* components (fed by the senders, never feeding
//! back), predicts the limiting opinion of every receiving agent from the
//! Kullback-Leibler divergences of the sending models, and solves the inverse
//! problem of recovering the macroscopic sending-to-receiving weights from a
//! receiving agent's belief stream.
//!
//! Indices are zero-based everywhere in the library API. File outputs (CSV and
//! JSON reports) use one-based agent and hypothesis labels.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod graph;
pub mod io;
pub mod learning;
pub mod linalg;
pub mod models;
pub mod quadrature;
pub mod topology;

pub use error::{Error, Result};
