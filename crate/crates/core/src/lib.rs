//! Relighting toolkit: multi-plane light images, a paired relighting
//! renderer, a lossless latent codec and a toy flow-matching diffusion
//! transformer with a light image adapter.

pub mod codec;
pub mod dataset;
pub mod dit;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod image;
pub mod light;
pub mod mpli;
pub mod rltk;
pub mod rng;
pub mod scene;

pub use error::{Error, Result};
