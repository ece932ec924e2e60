//! Two-stage parking slot detection on AVM-style top-down images.
//!
//! The pipeline mirrors a two-stage object detector specialized for parking
//! slots:
//!
//! 1. **geometry** – slot/entrance representations, ROI designation, NMS.
//! 2. **codec** – grid and ROI target encoding/decoding between geometry and
//!    network tensors.
//! 3. **diffnet** – a minimal reverse-mode autodiff tensor core, the shared
//!    dual-scale backbone, and the three detection heads.
//! 4. **losses** – the first- and second-stage training losses with named
//!    weight presets.
//! 5. **synth** – a procedural scene generator with exact ground truth.
//! 6. **train** – Adam optimization with the alternating two-stage schedule.
//! 7. **evalx** – detection matching, recall/precision and error statistics.
//! 8. **cli** – the `slotdet` command-line surface (gen/train/detect/eval).

pub mod cli;
pub mod codec;
pub mod diffnet;
pub mod evalx;
pub mod geometry;
pub mod losses;
pub mod pipeline;
pub mod synth;
pub mod train;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("zero-length entrance")]
    ZeroLengthEntrance,
    #[error("degenerate orientation vector")]
    DegenerateOrientation,
    #[error("cell collision: two entrance centers in cell (row {row}, col {col})")]
    CellCollision { row: usize, col: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("entrance center ({x:.2}, {y:.2}) outside image {w}x{h}")]
    CenterOutsideImage { x: f64, y: f64, w: usize, h: usize },
    #[error("image size {w}x{h} not divisible by {stride}")]
    IndivisibleImage { w: usize, h: usize, stride: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Msg(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
