//! Neural Galerkin time integration with randomized sparse parameter updates.

mod error;
pub mod fit;
pub mod io;
pub mod linalg;
pub mod network;
pub mod pde;
pub mod reference;
pub mod sketch;
pub mod timestepper;

pub use error::{Error, Result};
