//! Three-stage hybrid neural architecture search.
//!
//! 1. **Warm-up**: supernet weights train with the architecture parameters
//!    frozen at their initial value.
//! 2. **Exploration**: a triplet competitive swarm searches the continuous
//!    architecture space under a diversity-aware fitness; the best particle
//!    by plain validation loss pulls alpha toward it, and weights keep
//!    training in between.
//! 3. **Stability**: alpha is fine-tuned by gradient descent at a small
//!    learning rate until a Hoeffding-bound convergence test fires.
//!
//! Two backends are provided: a small differentiable supernet over spiral
//! data ([`supernet`]) and a tabular lookup space ([`tabular`]) with a
//! brute-force oracle.

pub mod arch;
pub mod bench;
pub mod cli;
pub mod config;
pub mod controller;
pub mod data;
pub mod error;
pub mod fitness;
pub mod gradcheck;
pub mod icso;
pub mod logging;
pub mod rng;
pub mod supernet;
pub mod tabular;

pub use error::{Error, Result};
