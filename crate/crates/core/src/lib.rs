//! Elevation-guided flood-extent segmentation.
//!
//! The crate is organised bottom-up:
//!
//! * [`raster`] holds the grid data model, FGRD file format, reflection padding
//!   and patch split/stitch.
//! * [`autodiff`] is a small define-by-run reverse-mode engine with exactly the
//!   operators the network and its losses need, plus a finite-difference checker.
//! * [`model`] builds the dual-path gated encoder-decoder out of elevation-regulated
//!   convolution layers.
//! * [`loss`] implements masked cross-entropy, the pairwise elevation-guided loss
//!   and the audit quantities derived from its pair taxonomy.
//! * [`terrain`] generates synthetic terrain, physically consistent flood truth,
//!   rendered imagery and the BFS label-propagation tools.
//! * [`pipeline`] ties everything into training, patch-wise prediction and evaluation.
//! * [`gradsuite`] is the catalogue of gradient checks behind `evanet gradcheck`.

pub mod autodiff;
pub mod error;
pub mod gradsuite;
pub mod loss;
pub mod model;
pub mod pipeline;
pub mod raster;
pub mod terrain;

pub use error::{Error, Result};
