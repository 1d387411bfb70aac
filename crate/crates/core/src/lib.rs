//! Encoder, decoder and reference forward path for anchor-based 4D Gaussian
//! GOP models.
//!
//! A GOP holds anchors with time-independent features and optional
//! per-frame feature streams. [`deform`] expands any timestamp into Gaussian
//! primitives, [`reorg`] lays the anchors out as 2D videos, [`entropy`]
//! predicts per-symbol Gaussian distributions, [`rans`] codes the symbols, and
//! [`container`] ties everything into the `GIFS` bitstream.

mod bytes;
pub mod container;
pub mod deform;
pub mod entropy;
mod error;
pub mod model;
pub mod nn;
pub mod rans;
pub mod reorg;

pub use container::{
    decode_gop, decode_gop_with, encode_gop, encode_gop_with_report, export_ply, quantize_gop, read_model,
    size_breakdown, write_model, ContextFault, DecodeOptions, DecodeStats, EncodeReport, FaultPlane,
    SectionId, SectionReport, SizeBreakdown,
};
pub use deform::{decode_frame, FrameDecoder};
pub use error::{Error, Result};
pub use model::{
    generate_synthetic, validate, Anchor, FeatureStream, GaussianFrame, GaussianPrimitive, GopConfig,
    GopModel, ValidationReport, Violation,
};
pub use nn::WeightsBundle;
pub use reorg::{build_layout, LayoutMaps};
