pub mod autodiff;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod localization;
pub mod losses;
pub mod model;
pub mod report;
pub mod trainer;

pub use error::{Error, Result};
