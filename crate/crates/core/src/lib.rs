pub mod distribution;
pub mod error;
pub mod glmm;
pub mod optim;
pub mod inference;
pub mod io;
pub mod quadrature;
pub mod sim;
pub mod special;

pub use error::{Error, Result};
