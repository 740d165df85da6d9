//! Satellite/map translation for airport runways: synthetic scene
//! generation, map palettes, a small autodiff engine, Pix2Pix and CycleGAN
//! training, and map change detection.

pub mod cli;
pub mod dataset;
pub mod geo;
pub mod nets;
pub mod raster;
pub mod synthworld;
pub mod tensor;
pub mod tileclient;
pub mod train;
