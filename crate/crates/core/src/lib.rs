//! Reset-free reinforcement learning on point-mass mazes.
//!
//! A forward policy learns a sparse-reward navigation task while an
//! exploratory reset policy, driven by random-network-distillation novelty,
//! moves the agent to new start states. A self-supervised success
//! discriminator gates where episodes may begin, yielding a start-state
//! curriculum that tracks the forward policy's competence and keeps manual
//! environment resets rare.

pub mod checkpoint;
pub mod config;
pub mod discriminator;
pub mod eval;
pub mod maze;
pub mod metrics;
pub mod nn;
pub mod replay;
pub mod rnd;
pub mod sac;
pub mod trainer;
