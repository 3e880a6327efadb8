pub mod acquisition;
pub mod bench;
pub mod error;
pub mod experiment;
pub mod gp;
pub mod linalg;
pub mod mapping;
pub mod objective;
pub mod optimizer;
pub mod semisir;

pub use error::{Error, Result};
