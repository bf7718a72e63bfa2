pub mod ba;
pub mod camera;
pub mod error;
pub mod experiment;
pub mod frontend;
pub mod graph;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod reliability;
pub mod residuals;
pub mod se3;
pub mod synth;

pub use error::{Error, Result};
