//! Reference-free 3D reconstruction of brain dissection slab photographs.
//!
//! Slab photographs are mapped pixel-by-pixel into a normalized atlas space
//! by a coordinate predictor; the per-pixel correspondences are then fitted
//! with a shared global 3D affine and per-slab in-plane 2D affines, and the
//! slabs are assembled into a volume. A domain-randomized synthetic engine
//! produces slab stacks with ground-truth coordinate maps from a label volume.

pub mod assemble;
pub mod error;
pub mod experiment;
pub mod field;
pub mod geometry;
pub mod image;
pub mod io;
pub mod kv;
pub mod metrics;
pub mod phantom;
pub mod predict;
pub mod recon;
pub mod rng;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
pub use geometry::{Affine2, Affine3, PlaneAffine};
pub use image::{CoordMap2D, Grid2, Image2D, LabelImage, Mask};
pub use volume::{SampleMode, Volume3D, VolumeKind};
