//! Learned internal world models and constrained sampling-based MPC for a
//! planar legged-robot surrogate.

pub mod env;
pub mod error;
pub mod internal_model;
pub mod planner;
pub mod seed;
pub mod tensornet;
pub mod trainer;

pub use error::{Error, Result};
