pub mod bench;
pub mod depth;
pub mod diffusion;
pub mod encoding;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod numeric;
pub mod scene;
pub mod sync;

pub use error::{Error, Result};
