pub mod data;
pub mod em;
pub mod error;
pub mod identify;
pub mod models;
pub mod network;
pub mod optimize;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
