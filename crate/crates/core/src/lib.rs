//! Learned vehicle-terrain dynamics and sampling-based receding-horizon
//! planning for wheeled robots on rocky terrain, with a kinematic simulator
//! to generate data and score navigation.

mod codec;
pub mod controller;
pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod nn;
pub mod planner;
pub mod sim;
pub mod terrain;

pub use error::{Error, FormatError, Result};
