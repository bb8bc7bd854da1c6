//! Reinforcement learning from diffusion feedback over grammar-encoded prompts.
//!
//! A prompt grammar turns image semantics into points on an integer lattice.
//! Agents move along that lattice one vocabulary step at a time, and every
//! reward comes from what a recognizer sees in the image generated at the
//! new point. See the crate README for the command-line front end.

pub mod agents;
pub mod config;
pub mod environment;
pub mod error;
pub mod grammar;
pub mod harness;
pub mod ndg;
pub mod oracle;
pub mod rewards;
pub mod seeding;
pub mod trajectory;

pub use error::{Error, OracleError, Result};
