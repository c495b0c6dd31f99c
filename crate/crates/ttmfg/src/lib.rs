pub mod benchmarks;
pub mod cross;
pub mod cubature;
pub mod error;
pub mod exec;
pub mod legendre;
pub mod propagator;
pub mod spi;
pub mod tt;

pub use error::{Error, Result};
