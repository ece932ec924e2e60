//! Minimal reverse-mode autodiff core plus the detector network.
//!
//! `Tensor` is a plain n-dimensional f64 array. Differentiable computations
//! are recorded on a [`Tape`]; calling [`Tape::backward`] replays the
//! recorded operations in reverse and returns exact analytic gradients for
//! every variable. The network itself (backbone, RPN/SDN/SCN heads, and the
//! region-specific patch extractor) lives in [`model`].

pub mod checkpoint;
pub mod kernels;
pub mod model;
pub mod tape;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use model::{
    backbone_forward, extract_patches, rpn_head, scn_head, sdn_head, BackboneConfig, FeatureMaps,
    Model, ModelConfig, Patches, RpnPrediction, ScnPrediction, SdnPrediction,
};
pub use tape::{Tape, TapeOp, VarId};
pub use tensor::Tensor;
