pub mod attention;
pub mod checkpoint;
pub mod distance;
pub mod error;
pub mod harness;
pub mod model;
pub mod params;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
