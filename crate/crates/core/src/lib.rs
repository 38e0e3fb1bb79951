pub mod cpc;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod gmm;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod mi_ba;
pub mod model;
pub mod nn;
pub mod numeric;
pub mod par;
pub mod params;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
