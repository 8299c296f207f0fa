//! Cold-start bundle recommendation: item-pair relation mining over the
//! user–item and bundle–item graphs, relation- and popularity-enhanced
//! graphs, a dual-scenario multi-view embedding model, training and top-K
//! evaluation.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod enhance;
pub mod error;
pub mod eval;
pub mod graph;
pub mod loss;
pub mod matrix;
pub mod model;
pub mod percentile;
pub mod pipeline;
pub mod popularity;
pub mod relations;
pub mod run;
pub mod sparse;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
