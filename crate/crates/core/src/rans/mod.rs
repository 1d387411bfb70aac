//! Quantized CDF tables built from Gaussian parameters, and a byte-wise rANS
//! coder driven by one table per symbol.
//!
//! Coder parameters: 16-bit probability precision, 32-bit state, lower
//! renormalisation bound `2^23`, one byte emitted per renormalisation step.

mod cdf;
mod coder;

pub use cdf::{build_cdf, CdfTable, GaussianCdf, Span, SymbolModel};
pub use coder::{rans_decode, rans_encode, CodedPlane, RansDecoder, RansEncoder};

use thiserror::Error;

pub const PRECISION_BITS: u32 = 16;
/// Sum of every CDF table.
pub const TOTAL_FREQ: u32 = 1 << PRECISION_BITS;
/// Lower bound of the normalised coder state; also the initial encoder state.
pub const RANS_LOW: u32 = 1 << 23;
/// Largest symbol magnitude given its own table entry.
pub const ALPHABET_LIMIT: i32 = 255;
/// Largest alphabet accepted by [`Alphabet::new`].
pub const MAX_ALPHABET_LEN: u32 = 4096;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RansError {
    #[error("coded plane truncated")]
    Truncated,

    #[error("decoder asked for more symbols than the plane holds")]
    Exhausted,

    #[error("{remaining} symbols left undecoded")]
    Leftover { remaining: u32 },

    #[error("{0} payload bytes left after the last symbol")]
    TrailingBytes(usize),

    #[error("final state {found:#010x} does not match footer {expected:#010x}")]
    FooterMismatch { expected: u32, found: u32 },

    #[error("escape symbol decoded but no escape value remains")]
    MissingEscape,

    #[error("{0} escape values left unused")]
    UnusedEscapes(usize),

    #[error("escaped value {0} lies inside the alphabet")]
    BadEscape(i32),

    #[error("{0} escapes exceed the per-plane limit of 65535")]
    TooManyEscapes(usize),

    #[error("invalid alphabet [{min}, {max}]")]
    BadAlphabet { min: i32, max: i32 },

    #[error("malformed coded plane: {0}")]
    Malformed(String),
}

/// Contiguous symbol range `[min, max]`; values outside are coded through
/// the escape entry that follows the last symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Alphabet {
    pub min: i32,
    pub max: i32,
}

impl Alphabet {
    pub fn new(min: i32, max: i32) -> Result<Self, RansError> {
        if max < min || (max as i64 - min as i64 + 1) > MAX_ALPHABET_LEN as i64 {
            return Err(RansError::BadAlphabet { min, max });
        }
        Ok(Self { min, max })
    }

    /// The data range of `values` clamped to `[-ALPHABET_LIMIT, ALPHABET_LIMIT]`;
    /// `[0, 0]` for no values.
    pub fn from_values(values: impl IntoIterator<Item = i32>) -> Self {
        let mut lo = i32::MAX;
        let mut hi = i32::MIN;
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo > hi {
            return Self { min: 0, max: 0 };
        }
        Self {
            min: lo.clamp(-ALPHABET_LIMIT, ALPHABET_LIMIT),
            max: hi.clamp(-ALPHABET_LIMIT, ALPHABET_LIMIT),
        }
    }

    /// Number of regular symbols.
    pub fn len(&self) -> u32 {
        (self.max as i64 - self.min as i64 + 1) as u32
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Table index of the escape entry.
    pub fn escape(&self) -> u32 {
        self.len()
    }

    pub fn contains(&self, v: i32) -> bool {
        (self.min..=self.max).contains(&v)
    }
}

/// Round-half-away-from-zero of `value / step`, saturating at the `i32` range.
pub fn quantize_value(value: f32, step: f32) -> i32 {
    (value as f64 / step as f64).round() as i32
}

pub fn dequantize_value(symbol: i32, step: f32) -> f32 {
    (symbol as f64 * step as f64) as f32
}

pub fn quantize(values: &[f32], step: f32) -> Vec<i32> {
    values.iter().map(|v| quantize_value(*v, step)).collect()
}

pub fn dequantize(symbols: &[i32], step: f32) -> Vec<f32> {
    symbols.iter().map(|s| dequantize_value(*s, step)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(quantize_value(2.5, 1.0), 3);
        assert_eq!(quantize_value(-2.5, 1.0), -3);
        assert_eq!(quantize_value(0.49, 1.0), 0);
        assert_eq!(quantize_value(0.3, 0.1), 3);
        assert_eq!(quantize(&[1e20, -1e20], 1.0), vec![i32::MAX, i32::MIN]);
    }

    #[test]
    fn dequantize_within_half_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let v: f32 = rng.random_range(-100.0..100.0);
            let q: f32 = rng.random_range(0.001..3.0);
            let back = dequantize_value(quantize_value(v, q), q);
            assert!((back - v).abs() <= q / 2.0 * (1.0 + 1e-5) + 1e-5, "{v} {q} {back}");
        }
    }

    #[test]
    fn alphabet_from_data() {
        assert_eq!(Alphabet::from_values([3, -7, 2]), Alphabet { min: -7, max: 3 });
        assert_eq!(Alphabet::from_values([-900, 1000]), Alphabet { min: -255, max: 255 });
        assert_eq!(Alphabet::from_values([]), Alphabet { min: 0, max: 0 });
        assert_eq!(Alphabet::from_values([400]), Alphabet { min: 255, max: 255 });
        assert!(Alphabet::new(1, 0).is_err());
        assert!(Alphabet::new(0, 5000).is_err());
        assert_eq!(Alphabet::new(-2, 2).unwrap().escape(), 5);
    }
}
