pub mod dataio;
pub mod error;
pub mod forecast;
pub mod fusion;
pub mod geom;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod scenario;
pub mod synth;
pub mod warp;

pub use error::{Error, Result};
