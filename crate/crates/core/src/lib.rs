//! Learning a desired bimanual peg-transfer motion from registered
//! demonstrations, adapting it to new start/goal pairs, and blending it
//! with a human operator's commands according to the recognized operation
//! context.

pub mod context;
pub mod dmp;
pub mod error;
pub mod gpr;
pub mod perception;
pub mod registration;
pub mod shared_control;
pub mod sim;
pub mod stats;
pub mod trajectory;

pub use error::{Error, Result};
pub use trajectory::{Arm, ToolSample, Trajectory};
