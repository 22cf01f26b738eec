pub mod conditions;
pub mod cooc;
pub mod detect;
pub mod dist;
pub mod error;
pub mod experiment;
pub mod io;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
