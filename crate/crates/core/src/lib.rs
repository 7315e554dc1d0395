//! Weak-form sparse identification of Fokker-Planck and McKean-Vlasov models
//! from particle snapshot data.

pub mod conv;
pub mod data;
pub mod density;
pub mod error;
pub mod exec;
pub mod kde;
pub mod mat2;
pub mod nondim;
pub mod pipeline;
pub mod regression;
pub mod sim;
pub mod stats;
pub mod weakform;

pub use data::{DomainConfig, Grid, SnapshotSet};
pub use density::DensityField;
pub use error::{Error, ErrorClass, Result};
pub use mat2::Mat2;
