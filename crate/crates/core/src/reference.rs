//! Desired-output frames shared by the reference planners and the reward kernel.

use serde::{Deserialize, Serialize};

/// Which leg is in stance. Even steps stand on the left leg.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn from_step(step: u64) -> Self {
        if step % 2 == 0 {
            Parity::Even
        } else {
            Parity::Odd
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
        }
    }

    pub fn is_odd(self) -> bool {
        self == Parity::Odd
    }
}

/// Name and dimension of one output channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub dim: usize,
}

impl Channel {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            dim,
        }
    }
}

/// Total scalar output count of a channel list.
pub fn output_dim(channels: &[Channel]) -> usize {
    channels.iter().map(|c| c.dim).sum()
}

/// Scalar column names, `name` for 1-D channels and `name_i` otherwise.
pub fn scalar_names(channels: &[Channel]) -> Vec<String> {
    let mut names = Vec::with_capacity(output_dim(channels));
    for c in channels {
        if c.dim == 1 {
            names.push(c.name.clone());
        } else {
            names.extend((0..c.dim).map(|i| format!("{}_{}", c.name, i)));
        }
    }
    names
}

/// Desired outputs `y^d` and their time derivatives at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFrame {
    pub y: Vec<f64>,
    pub ydot: Vec<f64>,
    pub parity: Parity,
}

impl ReferenceFrame {
    /// `[y; ẏ]`
    pub fn stacked(&self) -> Vec<f64> {
        self.y.iter().chain(&self.ydot).copied().collect()
    }
}
