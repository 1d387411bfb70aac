//! Byte-oriented rANS over per-symbol tables.
//!
//! Symbols are encoded last to first starting from state `RANS_LOW`; the
//! emitted bytes are reversed at the end so the decoder reads forward. The
//! payload starts with the final encoder state (4 bytes, most significant
//! first). Decoding all symbols must return the state to `RANS_LOW`, which is
//! stored as the footer and checked together with the symbol count, the
//! escape count and full consumption of the payload.

use super::{RansError, Span, SymbolModel, PRECISION_BITS, RANS_LOW, TOTAL_FREQ};
use crate::bytes::{Reader, Writer};

/// Coded symbols of one plane (or one section-wide stream of planes).
///
/// Wire layout, little-endian: `u32 count | u32 payload length | payload |
/// u16 escape count | i32 escapes | u32 footer`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedPlane {
    pub count: u32,
    pub payload: Vec<u8>,
    /// Raw values of escaped symbols, in symbol order.
    pub escapes: Vec<i32>,
    pub footer: u32,
}

impl CodedPlane {
    pub fn empty() -> Self {
        Self {
            count: 0,
            payload: Vec::new(),
            escapes: Vec::new(),
            footer: RANS_LOW,
        }
    }

    /// Serialised size in bytes.
    pub fn wire_len(&self) -> usize {
        4 + 4 + self.payload.len() + 2 + 4 * self.escapes.len() + 4
    }

    pub(crate) fn write(&self, w: &mut Writer) -> Result<(), RansError> {
        if self.escapes.len() > u16::MAX as usize {
            return Err(RansError::TooManyEscapes(self.escapes.len()));
        }
        let len = u32::try_from(self.payload.len()).map_err(|_| RansError::Malformed("payload over 4 GiB".into()))?;
        w.u32(self.count);
        w.u32(len);
        w.bytes(&self.payload);
        w.u16(self.escapes.len() as u16);
        for e in &self.escapes {
            w.i32(*e);
        }
        w.u32(self.footer);
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, RansError> {
        let mut w = Writer::with_capacity(self.wire_len());
        self.write(&mut w)?;
        Ok(w.into_inner())
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self, RansError> {
        let count = r.u32().ok_or(RansError::Truncated)?;
        let len = r.u32().ok_or(RansError::Truncated)? as usize;
        let payload = r.take(len).ok_or(RansError::Truncated)?.to_vec();
        let n_esc = r.u16().ok_or(RansError::Truncated)? as usize;
        let mut escapes = Vec::with_capacity(n_esc);
        for _ in 0..n_esc {
            escapes.push(r.i32().ok_or(RansError::Truncated)?);
        }
        let footer = r.u32().ok_or(RansError::Truncated)?;
        Ok(Self {
            count,
            payload,
            escapes,
            footer,
        })
    }

    /// Parses a plane from the front of `bytes`; returns it and the bytes used.
    pub fn parse(bytes: &[u8]) -> Result<(Self, usize), RansError> {
        let mut r = Reader::new(bytes);
        let plane = Self::read(&mut r)?;
        Ok((plane, r.position()))
    }
}

/// Collects symbol spans in coding order and produces a [`CodedPlane`].
#[derive(Debug, Default, Clone)]
pub struct RansEncoder {
    spans: Vec<Span>,
    escapes: Vec<i32>,
}

impl RansEncoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            spans: Vec::with_capacity(n),
            escapes: Vec::new(),
        }
    }

    /// Queues `value` coded with `model`.
    pub fn put<M: SymbolModel + ?Sized>(&mut self, model: &M, value: i32) {
        let (span, escaped) = model.span_of(value);
        self.spans.push(span);
        if escaped {
            self.escapes.push(value);
        }
    }

    /// Appends the symbols queued in `other` after those of `self`.
    pub fn append(&mut self, mut other: RansEncoder) {
        self.spans.append(&mut other.spans);
        self.escapes.append(&mut other.escapes);
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn finish(self) -> CodedPlane {
        let count = u32::try_from(self.spans.len()).expect("fewer than 2^32 symbols per plane");
        if count == 0 {
            return CodedPlane {
                escapes: self.escapes,
                ..CodedPlane::empty()
            };
        }
        let mut out = Vec::with_capacity(self.spans.len() / 2 + 8);
        let mut x = RANS_LOW;
        let x_max_base = (RANS_LOW >> PRECISION_BITS) << 8;
        for s in self.spans.iter().rev() {
            debug_assert!(s.freq >= 1 && s.start + s.freq <= TOTAL_FREQ);
            let x_max = x_max_base * s.freq;
            while x >= x_max {
                out.push(x as u8);
                x >>= 8;
            }
            x = ((x / s.freq) << PRECISION_BITS) + (x % s.freq) + s.start;
        }
        out.extend_from_slice(&x.to_le_bytes());
        out.reverse();
        CodedPlane {
            count,
            payload: out,
            escapes: self.escapes,
            footer: RANS_LOW,
        }
    }
}

/// Forward decoder; the caller supplies the table of each symbol in turn.
#[derive(Debug)]
pub struct RansDecoder<'a> {
    payload: &'a [u8],
    pos: usize,
    state: u32,
    remaining: u32,
    escapes: &'a [i32],
    esc_pos: usize,
    footer: u32,
}

impl<'a> RansDecoder<'a> {
    pub fn new(plane: &'a CodedPlane) -> Result<Self, RansError> {
        if plane.footer != RANS_LOW {
            return Err(RansError::FooterMismatch {
                expected: RANS_LOW,
                found: plane.footer,
            });
        }
        let (state, pos) = if plane.count == 0 {
            (RANS_LOW, 0)
        } else {
            let head: [u8; 4] = plane
                .payload
                .get(..4)
                .ok_or(RansError::Truncated)?
                .try_into()
                .expect("four bytes");
            let s = u32::from_be_bytes(head);
            if s < RANS_LOW {
                return Err(RansError::Malformed("initial state below the normalisation bound".into()));
            }
            (s, 4)
        };
        Ok(Self {
            payload: &plane.payload,
            pos,
            state,
            remaining: plane.count,
            escapes: &plane.escapes,
            esc_pos: 0,
            footer: plane.footer,
        })
    }

    pub fn remaining(&self) -> u32 {
        self.remaining
    }

    /// Decodes the next symbol with `model`.
    #[inline]
    pub fn get<M: SymbolModel + ?Sized>(&mut self, model: &M) -> Result<i32, RansError> {
        if self.remaining == 0 {
            return Err(RansError::Exhausted);
        }
        let slot = self.state & (TOTAL_FREQ - 1);
        let (index, span) = model.lookup(slot);
        let mut x = span.freq * (self.state >> PRECISION_BITS) + slot - span.start;
        while x < RANS_LOW {
            let b = *self.payload.get(self.pos).ok_or(RansError::Truncated)?;
            self.pos += 1;
            x = (x << 8) | b as u32;
        }
        self.state = x;
        self.remaining -= 1;
        let a = model.alphabet();
        if index == a.escape() {
            let v = *self.escapes.get(self.esc_pos).ok_or(RansError::MissingEscape)?;
            self.esc_pos += 1;
            if a.contains(v) {
                return Err(RansError::BadEscape(v));
            }
            Ok(v)
        } else {
            Ok(a.min + index as i32)
        }
    }

    /// Confirms every symbol, byte and escape was consumed and the state
    /// returned to the footer value.
    pub fn finish(self) -> Result<(), RansError> {
        if self.remaining != 0 {
            return Err(RansError::Leftover {
                remaining: self.remaining,
            });
        }
        if self.pos != self.payload.len() {
            return Err(RansError::TrailingBytes(self.payload.len() - self.pos));
        }
        if self.esc_pos != self.escapes.len() {
            return Err(RansError::UnusedEscapes(self.escapes.len() - self.esc_pos));
        }
        if self.state != self.footer {
            return Err(RansError::FooterMismatch {
                expected: self.footer,
                found: self.state,
            });
        }
        Ok(())
    }
}

/// Codes `symbols[i]` with `tables[i]`.
pub fn rans_encode<M: SymbolModel>(symbols: &[i32], tables: &[M]) -> CodedPlane {
    assert_eq!(symbols.len(), tables.len(), "one table per symbol");
    let mut enc = RansEncoder::with_capacity(symbols.len());
    for (s, t) in symbols.iter().zip(tables) {
        enc.put(t, *s);
    }
    enc.finish()
}

/// Inverse of [`rans_encode`] given the same tables.
pub fn rans_decode<M: SymbolModel>(plane: &CodedPlane, tables: &[M]) -> Result<Vec<i32>, RansError> {
    if plane.count as usize != tables.len() {
        return Err(RansError::Malformed(format!(
            "plane holds {} symbols but {} tables were supplied",
            plane.count,
            tables.len()
        )));
    }
    let mut dec = RansDecoder::new(plane)?;
    let out = tables.iter().map(|t| dec.get(t)).collect::<Result<Vec<_>, _>>()?;
    dec.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::symbol_bits;
    use crate::rans::{build_cdf, Alphabet, GaussianCdf};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_plane() {
        let tables: Vec<GaussianCdf> = Vec::new();
        let p = rans_encode(&[], &tables);
        assert_eq!(p.count, 0);
        assert!(p.payload.is_empty());
        assert_eq!(rans_decode(&p, &tables).unwrap(), Vec::<i32>::new());
        let bytes = p.to_bytes().unwrap();
        assert_eq!(bytes.len(), p.wire_len());
        assert_eq!(CodedPlane::parse(&bytes).unwrap(), (p, bytes.len()));
    }

    #[test]
    fn all_escape_plane() {
        let a = Alphabet::new(-2, 2).unwrap();
        let values = vec![1000, -77, i32::MIN, i32::MAX, 3, -3];
        let tables: Vec<_> = values.iter().map(|_| build_cdf(0.0, 1.0, 1.0, a)).collect();
        let p = rans_encode(&values, &tables);
        assert_eq!(p.escapes, values);
        assert_eq!(rans_decode(&p, &tables).unwrap(), values);
    }

    #[test]
    fn truncation_and_flips_are_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Alphabet::new(-40, 40).unwrap();
        let tables: Vec<_> = (0..3000).map(|_| GaussianCdf::new(rng.random_range(-5.0..5.0), 3.0, 1.0, a)).collect();
        let values: Vec<i32> = (0..3000).map(|_| rng.random_range(-12..12)).collect();
        let p = rans_encode(&values, &tables);
        assert_eq!(rans_decode(&p, &tables).unwrap(), values);

        let mut cut = p.clone();
        cut.payload.truncate(p.payload.len() - 3);
        assert!(rans_decode(&cut, &tables).is_err());

        let bytes = p.to_bytes().unwrap();
        assert!(CodedPlane::parse(&bytes[..bytes.len() - 1]).is_err());

        // rANS resynchronises after a corrupted stretch, so a flip can slip
        // past the footer with a few wrong symbols; it can never reproduce
        // the original sequence, and most flips fail the final check.
        let mut detected = 0;
        for i in 0..200 {
            let mut bad = p.clone();
            let at = (i * 7919) % bad.payload.len();
            bad.payload[at] ^= 1 << (i % 8);
            match rans_decode(&bad, &tables) {
                Ok(v) => assert_ne!(v, values, "flip at {at}"),
                Err(_) => detected += 1,
            }
        }
        assert!(detected >= 180, "{detected}");
    }

    #[test]
    fn self_distributed_rate_is_near_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Alphabet::new(-255, 255).unwrap();
        let n = 10_000;
        let mut tables = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        let mut bits = 0.0;
        for _ in 0..n {
            let mu: f64 = rng.random_range(-20.0..20.0);
            let sigma: f64 = rng.random_range(0.2..6.0);
            let t = build_cdf(mu, sigma, 1.0, a);
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            let v = (mu + sigma * z).round() as i32;
            bits += symbol_bits(mu, sigma, 1.0, v as i64);
            values.push(v);
            tables.push(t);
        }
        let p = rans_encode(&values, &tables);
        let coded = p.wire_len() as f64;
        let est = bits / 8.0;
        assert!((coded - est).abs() <= 0.01 * est + 64.0, "coded {coded} estimate {est}");
        assert_eq!(rans_decode(&p, &tables).unwrap(), values);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]
        #[test]
        fn lossless(
            seed in any::<u64>(),
            len in 0usize..400,
            min in -20i32..5,
            width in 0i32..30,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Alphabet::new(min, min + width).unwrap();
            let tables: Vec<GaussianCdf> = (0..len)
                .map(|_| GaussianCdf::new(
                    rng.random_range(-30.0..30.0),
                    rng.random_range(-9.0f64..4.0).exp(),
                    rng.random_range(-3.0f64..1.0).exp(),
                    a,
                ))
                .collect();
            let values: Vec<i32> = (0..len).map(|_| rng.random_range(-40..40)).collect();
            let p = rans_encode(&values, &tables);
            prop_assert_eq!(rans_decode(&p, &tables).unwrap(), values);
            let bytes = p.to_bytes().unwrap();
            prop_assert_eq!(CodedPlane::parse(&bytes).unwrap().0, p);
        }
    }
}
