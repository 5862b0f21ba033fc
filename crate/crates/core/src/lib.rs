//! Classical segmentation of tubular structures in 3D volumes, with the
//! evaluation harness used to compare methods.
//!
//! The pipeline is preprocess → segment → postprocess → evaluate:
//!
//! * [`preprocess`]: percentile contrast stretch and automatic cropping.
//! * [`segment`]: dual thresholding, flood filling, Sauvola region growing,
//!   and component filtering.
//! * [`metrics`]: Dice, Hausdorff (exact EDT, mm), relative volume difference
//!   and connected-component topology proxies.
//! * [`stats`]: mean ± std and one-way ANOVA across methods.
//! * [`phantom`]: branching-tube phantoms with known ground truth.
//! * [`io`]: NIfTI-1, binary STL and report writers.

pub mod cli;
pub mod error;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod preprocess;
pub mod segment;
pub mod stats;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{bbox_of, connected_components, voxel_to_world, BBox, Connectivity, Dims, LabelMap, Mask, Spacing, Volume};
