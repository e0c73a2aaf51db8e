//! Adaptive generation of labeled small-signal-stability datasets for
//! converter-rich power grids.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod explorer;
pub mod feasibility;
pub mod grid;
pub mod sensitivity;
pub mod sampling;
pub mod smallsignal;
pub mod space;
