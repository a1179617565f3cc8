//! Control-Lyapunov reward shaping for reference-guided locomotion RL.

pub mod bezier;
pub mod commands;
pub mod config;
pub mod clf_reward;
pub mod env;
pub mod error;
pub mod gait_library;
pub mod hlip;
pub mod reference;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
