//! Point-cloud-to-SDF reconstruction engine.
//!
//! The pipeline: ingest or synthesize an oriented, colored point cloud;
//! fit a signed distance + color field (multi-resolution hash encoder,
//! small geometry/color heads, composite loss, staged Lion/K-FAC
//! optimization); extract smoothed iso-surface meshes with marching
//! cubes; score reconstructions with alignment-aware Chamfer / normal
//! metrics; and trace the learned field with a mode-switched velocity
//! controller.
//!
//! Most capabilities have a runnable example under `examples/`, and the
//! `fins` binary exposes the same steps as subcommands
//! (`synth`, `train`, `reconstruct`, `eval`, `trace`, `ablate`, `bench`).

pub mod cloud;
pub mod config;
pub mod encoder;
pub mod field;
pub mod error;
pub mod heads;
pub mod kdtree;
pub(crate) mod kernels;
pub mod loss;
pub mod math;
pub mod mesh;
pub mod model_io;
pub mod optim;
pub mod ply;
pub mod rng;
pub mod shapes;
pub mod trainer;

pub use error::{Error, Result};
pub use math::Vec3;
