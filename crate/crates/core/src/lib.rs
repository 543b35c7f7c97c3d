pub mod data;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod rcgd;
pub mod spd;

pub use error::{Error, ErrorKind, Result};
