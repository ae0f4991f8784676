//! File formats, streaming server and replay client built on
//! [`taxelmap_core`].

pub mod calibration;
pub mod client;
pub mod commands;
pub mod config;
pub mod json_mirror;
pub mod mapfile;
pub mod server;
pub mod session_dir;
pub mod wire;

pub use taxelmap_core as core;
