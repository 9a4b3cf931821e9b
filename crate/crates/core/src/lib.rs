//! Shape analysis toolkit for paired abdominal organs.
//!
//! Two pipelines compute a per-subject shape descriptor from binary organ
//! segmentations and feed it to a binary classifier:
//!
//! * spectral: marching cubes -> triangle mesh -> Laplace-Beltrami spectrum
//!   (ShapeDNA) -> concatenated per-organ descriptor -> gradient boosting;
//! * learned: surface sampling -> point cloud -> multi-branch PointNet
//!   (one branch per organ, max-pool global features, fused head).
//!
//! The `analysis` module carries the shared evaluation protocol: stratified
//! 50/50 splits, ROC/AUC, and a t-SNE embedding of feature spaces.

pub mod analysis;
pub mod baseline;
pub mod geometry;
pub mod io;
pub mod mspnet;
pub mod neural;
pub mod spectra;

pub(crate) mod vec3;
