pub mod augfusion;
pub mod bench;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod geometry;
pub mod io;
pub mod json;
pub mod policy;
pub mod raster;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use raster::{DepthMap, Image};
pub use rng::RandomStream;
