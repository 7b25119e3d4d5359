pub mod contour_pose;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod geometry;
pub mod io;
pub mod model;
pub mod numeric;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
