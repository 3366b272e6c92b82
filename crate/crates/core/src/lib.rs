//! Self-calibrating cone-beam CT.
//!
//! Every X-ray view carries its own geometry: a bead phantom rides along with
//! the specimen, each bead stick is identified by the cross-ratio of its four
//! beads, and a projection matrix is estimated per view. The matrices then
//! drive a Feldkamp-type filtered backprojection directly, so no reproducible
//! trajectory is ever assumed.
//!
//! Module map:
//!
//! - [`geometry`]: projection matrices, the cross-ratio, DLT, decomposition.
//! - [`phantom`]: bead-stick elements, phantom files, reference bead extraction.
//! - [`detection`]: subpixel bead detection and collinear quadruple grouping.
//! - [`calibration`]: cross-ratio matching, RANSAC calibration, trajectory report.
//! - [`preprocess`]: flat/dark normalization, defect maps, inpainting.
//! - [`reconstruction`]: cosine weighting, ramp filter, blocked backprojection.
//! - [`simulator`]: analytic cone-beam forward model used as ground truth.
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default) and fall back to plain iterators otherwise.

pub mod calibration;
pub mod detection;
mod error;
pub mod geometry;
pub mod image;
mod par;
pub mod phantom;
pub mod preprocess;
pub mod rawio;
pub mod reconstruction;
pub mod simulator;

pub use error::{Error, Result};
pub use image::Image;
