//! Capacity-coordinated inventory control: dynamics, coordination
//! mechanisms, training and backtesting.

pub mod backtest;
pub mod capacity;
pub mod checkpoint;
pub mod coordinators;
pub mod error;
pub mod idp;
pub mod mlp;
pub mod optim;
pub mod policies;
pub mod seed;
pub mod synth;
pub mod tape;
pub mod training;

pub use error::{Error, Result};
