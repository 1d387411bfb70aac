//! Coding of the four entropy-coded sections.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::format::{SectionId, SymbolCrc};
use crate::entropy::{symbol_bits, AttrParams, PlaneDistribution};
use crate::error::{Error, Result};
use crate::nn::{Grid, NnError, WeightsBundle};
use crate::rans::{Alphabet, CodedPlane, GaussianCdf, RansDecoder, RansEncoder, RansError};

/// Step of the `m_de` symbols, in value units.
pub(crate) const MDE_STEP: f64 = 1.0 / 15.0;

/// Alphabet of the `m_de` symbols.
pub(crate) fn mde_alphabet() -> Alphabet {
    Alphabet { min: 0, max: 15 }
}

/// A coded section before it is placed in the file.
#[derive(Debug, Clone)]
pub(crate) struct CodedSection {
    pub plane: CodedPlane,
    pub symbol_crc: u32,
    pub estimated_bits: f64,
}

/// Time spent predicting distributions and entropy decoding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PhaseTimes {
    pub prediction: Duration,
    pub entropy: Duration,
}

pub(crate) fn desync(id: SectionId) -> impl Fn(RansError) -> Error {
    move |source| Error::Desync {
        section: id.name(),
        source,
    }
}

pub(crate) type Predictor<'w> = dyn Fn(&[&Grid]) -> std::result::Result<PlaneDistribution, NnError> + Sync + 'w;

/// A sequence of planes coded auto-regressively: plane `j` is predicted
/// from planes `j - 2` and `j - 1` (zero planes before the first), and its
/// first `coded[j]` channels are coded channel-major over the first `cells`
/// cells of each channel.
pub(crate) struct PlaneSequence<'w> {
    pub id: SectionId,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub cells: usize,
    pub coded: Vec<usize>,
    pub alphabet: Alphabet,
    pub predict: &'w Predictor<'w>,
}

impl PlaneSequence<'_> {
    fn zero(&self) -> Grid {
        Grid::zeros(self.channels, self.height, self.width)
    }

    fn context<'g>(&self, planes: &'g [Grid], j: usize, zero: &'g Grid) -> [&'g Grid; 2] {
        let at = |k: Option<usize>| k.map_or(zero, |k| &planes[k]);
        [at(j.checked_sub(2)), at(j.checked_sub(1))]
    }

    /// Symbols per plane; fault positions index into this range.
    pub fn plane_symbols(&self, j: usize) -> usize {
        self.coded[j] * self.cells
    }

    pub fn encode(&self, planes: &[Grid]) -> Result<CodedSection> {
        let zero = self.zero();
        let plane_len = self.height * self.width;
        let parts = (0..planes.len())
            .into_par_iter()
            .map(|j| -> Result<(RansEncoder, f64, Vec<i32>)> {
                let dist = (self.predict)(&self.context(planes, j, &zero))?;
                let mut enc = RansEncoder::with_capacity(self.plane_symbols(j));
                let mut cdf = GaussianCdf::new(0.0, 1.0, 1.0, self.alphabet);
                let mut bits = 0.0;
                let mut symbols = Vec::with_capacity(self.plane_symbols(j));
                for ch in 0..self.coded[j] {
                    for cell in 0..self.cells {
                        let at = ch * plane_len + cell;
                        let v = planes[j].data[at] as i32;
                        let (mu, sigma) = (dist.mu.data[at] as f64, dist.sigma.data[at] as f64);
                        cdf.rebuild(mu, sigma, 1.0, self.alphabet);
                        enc.put(&cdf, v);
                        bits += symbol_bits(mu, sigma, 1.0, v as i64);
                        symbols.push(v);
                    }
                }
                Ok((enc, bits, symbols))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut enc = RansEncoder::new();
        let mut crc = SymbolCrc::default();
        let mut estimated_bits = 0.0;
        for (e, bits, symbols) in parts {
            enc.append(e);
            estimated_bits += bits;
            crc.extend(&symbols);
        }
        Ok(CodedSection {
            plane: enc.finish(),
            symbol_crc: crc.finish(),
            estimated_bits,
        })
    }

    /// Decodes `n_planes` planes. `fault` adds a value to one decoded symbol
    /// right after its plane is complete, before it serves as context.
    pub fn decode(
        &self,
        coded: &CodedPlane,
        symbol_crc: u32,
        n_planes: usize,
        fault: Option<(usize, usize, i32)>,
        times: &mut PhaseTimes,
    ) -> Result<Vec<Grid>> {
        let zero = self.zero();
        let plane_len = self.height * self.width;
        let mut dec = RansDecoder::new(coded).map_err(desync(self.id))?;
        let mut cdf = GaussianCdf::new(0.0, 1.0, 1.0, self.alphabet);
        let mut planes: Vec<Grid> = Vec::with_capacity(n_planes);
        for j in 0..n_planes {
            let t0 = Instant::now();
            let dist = (self.predict)(&self.context(&planes, j, &zero))?;
            let t1 = Instant::now();
            let mut plane = self.zero();
            for ch in 0..self.coded[j] {
                for cell in 0..self.cells {
                    let at = ch * plane_len + cell;
                    cdf.rebuild(dist.mu.data[at] as f64, dist.sigma.data[at] as f64, 1.0, self.alphabet);
                    plane.data[at] = dec.get(&cdf).map_err(desync(self.id))? as f32;
                }
            }
            if let Some((fj, pos, delta)) = fault {
                let count = self.plane_symbols(j);
                if fj == j && count > 0 {
                    let p = pos % count;
                    let at = (p / self.cells) * plane_len + p % self.cells;
                    plane.data[at] = (plane.data[at] as i32).wrapping_add(delta) as f32;
                }
            }
            times.prediction += t1 - t0;
            times.entropy += t1.elapsed();
            planes.push(plane);
        }
        dec.finish().map_err(desync(self.id))?;
        let mut crc = SymbolCrc::default();
        for (j, plane) in planes.iter().enumerate() {
            for ch in 0..self.coded[j] {
                for cell in 0..self.cells {
                    crc.push(plane.data[ch * plane_len + cell] as i32);
                }
            }
        }
        if crc.finish() != symbol_crc {
            return Err(Error::SymbolChecksum { section: self.id.name() });
        }
        Ok(planes)
    }
}

/// Per-anchor coding with distributions from the attribute model: for each
/// listed channel, one symbol per anchor.
pub(crate) struct AnchorChannels<'p> {
    pub id: SectionId,
    pub params: &'p [AttrParams],
    /// `(model channel, step override, alphabet)` per coded channel.
    pub channels: Vec<(usize, Option<f64>, Alphabet)>,
}

impl AnchorChannels<'_> {
    fn dist(&self, i: usize, (ch, step, _): &(usize, Option<f64>, Alphabet)) -> (f64, f64, f64) {
        let p = &self.params[i];
        (p.mu[*ch] as f64, p.sigma[*ch] as f64, step.unwrap_or(p.step[*ch] as f64))
    }

    /// `symbols[i][j]` is anchor `i`, coded channel `j`.
    pub fn encode(&self, symbols: &[Vec<i32>]) -> CodedSection {
        let parts: Vec<(RansEncoder, f64, Vec<i32>)> = self
            .channels
            .par_iter()
            .enumerate()
            .map(|(j, c)| {
                let mut enc = RansEncoder::with_capacity(symbols.len());
                let mut cdf = GaussianCdf::new(0.0, 1.0, 1.0, c.2);
                let mut bits = 0.0;
                let mut column = Vec::with_capacity(symbols.len());
                for (i, s) in symbols.iter().enumerate() {
                    let (mu, sigma, step) = self.dist(i, c);
                    cdf.rebuild(mu, sigma, step, c.2);
                    enc.put(&cdf, s[j]);
                    bits += symbol_bits(mu, sigma, step, s[j] as i64);
                    column.push(s[j]);
                }
                (enc, bits, column)
            })
            .collect();
        let mut enc = RansEncoder::new();
        let mut crc = SymbolCrc::default();
        let mut estimated_bits = 0.0;
        for (e, bits, column) in parts {
            enc.append(e);
            estimated_bits += bits;
            crc.extend(&column);
        }
        CodedSection {
            plane: enc.finish(),
            symbol_crc: crc.finish(),
            estimated_bits,
        }
    }

    pub fn decode(&self, coded: &CodedPlane, symbol_crc: u32, times: &mut PhaseTimes) -> Result<Vec<Vec<i32>>> {
        let t0 = Instant::now();
        let n = self.params.len();
        let mut out = vec![Vec::with_capacity(self.channels.len()); n];
        let mut dec = RansDecoder::new(coded).map_err(desync(self.id))?;
        let mut cdf = GaussianCdf::new(0.0, 1.0, 1.0, Alphabet { min: 0, max: 0 });
        let mut crc = SymbolCrc::default();
        for c in &self.channels {
            for (i, row) in out.iter_mut().enumerate() {
                let (mu, sigma, step) = self.dist(i, c);
                cdf.rebuild(mu, sigma, step, c.2);
                let v = dec.get(&cdf).map_err(desync(self.id))?;
                crc.push(v);
                row.push(v);
            }
        }
        dec.finish().map_err(desync(self.id))?;
        times.entropy += t0.elapsed();
        if crc.finish() != symbol_crc {
            return Err(Error::SymbolChecksum { section: self.id.name() });
        }
        Ok(out)
    }
}

/// Shared by encoder and decoder so both see the same weights.
pub(crate) fn predictors(w: &WeightsBundle) -> (Box<Predictor<'_>>, Box<Predictor<'_>>) {
    (
        Box::new(move |ctx: &[&Grid]| crate::entropy::predict_fragment(ctx, w)),
        Box::new(move |ctx: &[&Grid]| crate::entropy::predict_stream_frame(ctx, w)),
    )
}
