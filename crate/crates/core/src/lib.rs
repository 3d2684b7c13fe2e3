pub mod attnmask;
pub mod dataio;
pub mod encoders;
pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod losses;
pub mod params;
pub mod rng;
pub mod trainer;

pub use error::{AclipError, Result};
pub use ndgrad;
