pub mod data;
pub mod error;
pub mod gat;
pub mod graph;
pub mod kb;
pub mod metrics;
pub mod predict;
pub mod retrieval;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
