//! HTTP service and command line for the opt-in verification engine.

pub mod api;
pub mod cli;
pub mod config;
pub mod error;

pub use api::{router, AppState};
pub use error::ApiError;
