pub mod cb;
pub mod cli;
pub mod criteria;
pub mod error;
pub mod estimate;
pub mod linalg;
pub mod model;
pub mod parallel;
pub mod select;
pub mod sim;

pub use error::{Error, Result};
