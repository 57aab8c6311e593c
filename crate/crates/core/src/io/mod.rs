//! File I/O helpers shared by the pipeline.

pub mod wav;
