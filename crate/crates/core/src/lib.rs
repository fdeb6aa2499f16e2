pub mod attack;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod plot;
pub mod report;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Element, Graph, NodeId, Tensor};
