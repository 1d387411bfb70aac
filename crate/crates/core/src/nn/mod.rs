//! Forward-only inference for the small networks that drive the attribute
//! and motion heads and the entropy models.

mod layers;
mod weights;

pub use layers::{conv_forward, dense_forward, mlp_forward, Activation, ConvLayer, DenseLayer, Grid};
pub use weights::{load_weights, save_weights, WeightsBundle, WEIGHTS_MAGIC, WEIGHTS_VERSION};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NnError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("network {network}: layer {layer} expects {expected} inputs but receives {found}")]
    DimChain {
        network: String,
        layer: usize,
        expected: usize,
        found: usize,
    },

    #[error("not a weights file (bad magic)")]
    BadMagic,

    #[error("unsupported weights version {0}")]
    UnsupportedVersion(u16),

    #[error("weights payload truncated")]
    Truncated,

    #[error("malformed weights file: {0}")]
    Malformed(String),
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
