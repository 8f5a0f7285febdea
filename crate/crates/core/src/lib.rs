pub mod agent;
pub mod analysis;
pub mod autodiff;
pub mod config;
pub mod env;
pub mod error;
pub mod objectives;
pub mod protocols;
pub mod replay;
pub mod report;
pub mod rundir;
pub mod seed;
pub mod session;
pub mod training;

pub use error::{Error, Result};
