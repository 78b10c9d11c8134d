pub mod active_set;
pub mod contracts;
pub mod distributions;
pub mod error;
pub mod grid;
pub mod numerics;
pub mod outcome_grid;
pub mod preferences;
pub mod problem;
pub mod relaxed;
pub mod validator;

pub use error::{Error, Result};
pub use problem::{Grids, Problem};
