//! HTTP service and command-line front end for the `kgmem-core` memory
//! engine.

pub mod app;
pub mod cli;
pub mod config;
pub mod error;
pub mod providers;

pub use app::{router, AppState};
pub use config::ServiceConfig;
pub use error::{ApiError, CliError, ErrorBody};
