//! Shape compression and single-view reconstruction on a tri-plane latent.
//!
//! The crate is organized as a pipeline:
//!
//! * [`tensor`]: a small f32 tensor library with a reverse-mode tape.
//! * [`geometry`]: analytic SDF shapes, point sampling, and a depth renderer.
//! * [`triplane`]: the tri-plane feature representation and SDF queries.
//! * [`compressor`]: point cloud -> variational latent tri-plane -> SDF decoder.
//! * [`aligner`]: diffusion models that predict the latent from one depth view.
//! * [`metrics`]: marching cubes, Chamfer distance, F-score, volume IoU.
//! * [`io`]: tensor container files, datasets, checkpoints.
//! * [`pipeline`]: the high-level commands the CLI exposes.

pub mod aligner;
pub mod compressor;
pub mod config;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod triplane;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
