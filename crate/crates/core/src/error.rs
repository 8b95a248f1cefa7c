//! Error type shared by every module in the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A pixel region falls outside its parent field.
    #[error("{what}: pixel ({row}, {col}) outside {height}x{width} field")]
    OutOfBounds {
        what: &'static str,
        row: i64,
        col: i64,
        height: usize,
        width: usize,
    },

    /// Two arrays that must share a shape do not.
    #[error("{what}: expected {expected_h}x{expected_w}, got {got_h}x{got_w}")]
    ShapeMismatch {
        what: &'static str,
        expected_h: usize,
        expected_w: usize,
        got_h: usize,
        got_w: usize,
    },

    /// A value violated a mathematical precondition (negative intensity,
    /// non-positive variance, zero-norm field, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller-supplied argument is out of range.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// An index into a dataset or scan pattern is out of range.
    #[error("index {index} out of range ({len} available)")]
    IndexOutOfRange { index: usize, len: usize },

    /// An on-disk artifact does not follow its declared format.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A reconstruction configuration is inconsistent or incomplete.
    #[error("configuration error: {0}")]
    Config(String),

    /// The optimizer produced a non-finite loss.
    #[error("optimization diverged at epoch {epoch} (lr = {lr:.6e}): loss is not finite")]
    Divergence { epoch: usize, lr: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
