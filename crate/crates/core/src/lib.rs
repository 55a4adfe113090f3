//! Change detection between co-registered image pairs with a conditional GAN.
//!
//! A ResNet-style [`nets::Generator`] maps an image pair to a change map in
//! `[-1, 1]`; a patch [`nets::Discriminator`] judges `(A, B, map)` triples.
//! [`training`] alternates their updates, [`data`] simulates and loads pairs,
//! [`metrics`] scores binarized maps against ground truth, and [`infer`] runs
//! whole-frame or tiled prediction.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod infer;
pub mod metrics;
pub mod nets;
pub mod params;
pub mod raster;
pub mod training;

pub use error::{Error, Result};
