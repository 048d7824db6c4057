//! Procedural bronchial-airway synthesis, ray-cast depth rendering and depth
//! evaluation metrics. `no_std` with `alloc`; file formats and the command
//! line live in the `airway` crate.
#![no_std]

extern crate alloc;

pub mod airway;
pub mod bvh;
pub mod error;
pub mod grid;
pub mod math;
pub mod metrics;
pub mod mesh;
pub mod render;
pub mod rng;
pub mod segmentation;
