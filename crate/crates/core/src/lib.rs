pub mod admissible;
pub mod bounding;
pub mod checks;
pub mod error;
pub mod governor;
pub mod lp;
pub mod model;
pub mod numeric;
pub mod sampling;
pub mod scenario;
pub mod serde_mat;
pub mod sets;
pub mod sim;

pub use error::{Result, RgError};
