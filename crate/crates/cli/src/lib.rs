//! Command-line pipeline and HTTP review service for the seedling detector.

pub mod commands;
pub mod io;
pub mod service;
pub mod store;
