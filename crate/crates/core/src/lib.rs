pub mod corpus;
pub mod detect;
pub mod encoder;
pub mod error;
pub mod glm;
pub mod io;
pub mod linalg;
pub mod lm;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod sigproc;
pub mod synthgen;
pub mod training;

pub use error::{Error, Result};
