pub mod bivariate;
pub mod bounds;
pub mod error;
pub mod gibbs;
pub mod het_test;
pub mod ident;
pub mod linalg;
pub mod reduced_form;
pub mod restrictions;
pub mod simulate;

pub use error::{HsvarError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
