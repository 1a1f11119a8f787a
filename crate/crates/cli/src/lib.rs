//! Command-line tool and HTTP service for protecting images with a trained
//! balance bank.

pub mod commands;
pub mod config;
pub mod server;
