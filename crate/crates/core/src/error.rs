use thiserror::Error;

use crate::model::ValidationReport;
use crate::nn::NnError;
use crate::rans::RansError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("model failed validation:\n{0}")]
    Validation(ValidationReport),

    #[error("grid {grid_h}x{grid_w} cannot hold {n_anchors} anchors")]
    GridTooSmall {
        grid_h: usize,
        grid_w: usize,
        n_anchors: usize,
    },

    #[error("need at least {needed} anchors, got {got}")]
    TooFewAnchors { needed: usize, got: usize },

    #[error("time index {index} out of range for a GOP of {frames} frames")]
    TimeIndex { index: usize, frames: usize },

    #[error("layout does not match model: {0}")]
    LayoutMismatch(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("section {section} failed its checksum")]
    Checksum { section: &'static str },

    #[error("context desynchronised in section {section}: {source}")]
    Desync {
        section: &'static str,
        #[source]
        source: RansError,
    },

    #[error("decoded symbols of section {section} do not match their checksum")]
    SymbolChecksum { section: &'static str },

    #[error(transparent)]
    Nn(#[from] NnError),

    #[error(transparent)]
    Rans(#[from] RansError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
