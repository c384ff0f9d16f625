pub mod analysis;
pub mod error;
pub mod extrinsic;
pub mod fields;
pub mod geometry;
pub mod jet;
pub mod linalg;
pub mod models;
pub mod quadrature;
pub mod quat;
pub mod variation;

pub use error::{Error, Result};
