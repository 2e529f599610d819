pub mod data;
pub mod decorrelate;
pub mod distributed;
pub mod first_stage;
pub mod harness;
pub mod inference;
pub mod nuisance;
pub mod error;
pub mod optim;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
