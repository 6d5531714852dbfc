//! Multiview-consistent mesh enhancement.
//!
//! Given a colored mesh and posed multiview images this crate repairs
//! cross-view misalignment with per-view 2D deformation fields, deforms the
//! mesh toward an input image through a per-face Jacobian field and a Poisson
//! solve, and bakes image colors onto vertices by cosine-weighted
//! unprojection.

pub mod camera;
pub mod deform2d;
pub mod deform3d;
pub mod enhance;
pub mod error;
pub mod image;
pub mod io;
pub mod mesh;
pub mod metrics;
pub mod operators;
pub mod optim;
pub mod pipeline;
pub mod raster;
pub mod scenario;
pub mod shapes;
pub mod sparse;
pub mod unproject;

pub use camera::Camera;
pub use error::{Error, Result};
pub use image::ImageRGBA;
pub use mesh::{Mesh, Vec3};
