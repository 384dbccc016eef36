//! Pixelwise antipodal grasp synthesis.
//!
//! The crate is split along the pipeline a grasp goes through:
//!
//! * [`tensor`]: dense NCHW tensors, the handful of layers the networks use,
//!   a recording tape for reverse-mode gradients and an Adam optimizer.
//! * [`network`]: the single-branch and dual-branch (auxiliary task) grasp
//!   networks, checkpoints and auxiliary-branch pruning.
//! * [`loss`]: summed per-map MSE and the quality-masked positional loss.
//! * [`dataset`]: Jacquard-layout scenes, ground-truth rasterization,
//!   augmentation, object-wise folds and a synthetic scene generator.
//! * [`eval`]: Gaussian post-filtering, grasp extraction and the
//!   rotated-rectangle IoU success metric.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod loss;
pub mod network;
pub mod tensor;

pub use dataset::{GraspAnnotation, GroundTruthMaps, SceneSample};
pub use error::{Error, Result};
pub use eval::{EvalReport, GraspRectangle};
pub use loss::{LossBreakdown, LossKind};
pub use network::{AuxTask, Model, ModelCheckpoint, ModelConfig, ParameterMaps, Variant};
pub use tensor::{ConvSpec, Float, Tensor};
