//! Out-of-context object detection with dual graph convolutional networks.
//!
//! A representation graph (RepG) labels objects from their appearance and
//! geometry; a context graph (ConG) labels each object from the other objects'
//! labels. After the two are trained to agree, an object whose ConG
//! distribution diverges from a context-free classifier is flagged as out of
//! context.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod gcn;
pub mod gcrn;
pub mod ingest;
pub mod metrics;
pub mod ooc;
pub mod optim;
pub mod rng;
pub mod scene;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
