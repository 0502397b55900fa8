//! Road pothole detection from stereo disparity.
//!
//! The pipeline: a dense disparity image is fitted with a rotated linear road
//! model, the model is subtracted so the road becomes a flat band ("disparity
//! transformation"), and depressions below the road surface are segmented by
//! thresholding. Supporting modules provide the attention blocks and the
//! adaptation losses used by the learned variant of the detector, a synthetic
//! scene generator that serves as ground truth for all of the above, and
//! segmentation metrics.

pub mod adaptation;
pub mod attention;
pub mod detect;
pub mod disparity;
pub mod error;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod transform;

pub use disparity::{load_disparity, save_disparity, v_disparity, DisparityImage, VDisparityHistogram};
pub use error::{Error, Result};
pub use mask::LabelMask;
pub use metrics::{ConfusionCounts, SegMetrics};
pub use tensor::Tensor4;
pub use transform::{fit_and_transform, transform, RoadFit, RoadModel, SolverConfig};
