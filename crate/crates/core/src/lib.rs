pub mod dataset;
pub mod diagnostics;
pub mod distributions;
mod error;
pub mod fitting;
pub mod linkdesign;
pub mod optim;
pub mod selection;
pub mod specfun;

pub use error::{Error, Result};
