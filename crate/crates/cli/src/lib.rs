//! Orchestration for the s2s toolkit: configuration, file formats, and the
//! sliding-window pipeline behind the `s2s` binary. The binary is a thin
//! wrapper; everything it does is callable from here.

pub mod config;
pub mod io;
pub mod pipeline;
