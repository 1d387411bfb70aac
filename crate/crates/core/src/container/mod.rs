//! The `GIFS` bitstream: quantization, section coding and the decoder, plus
//! the uncompressed `GIFU` model file and PLY export of decoded frames.

mod codec;
mod format;
mod gifu;
mod ply;
mod quant;

use std::time::{Duration, Instant};

use rayon::prelude::*;

pub use codec::PhaseTimes;
pub use format::{SectionId, GIFS_MAGIC, GIFS_VERSION};
pub use gifu::{read_model, write_model, GIFU_MAGIC, GIFU_VERSION};
pub use ply::export_ply;

use codec::{mde_alphabet, predictors, Predictor, AnchorChannels, CodedSection, PlaneSequence, MDE_STEP};
use format::{read_coded, write_coded, Header, SectionEntry};
use quant::{attr_symbol, attr_values, coded_attr_channels, position_value, Quantized};

use crate::entropy::{attr_layout, predict_attr_params, AttrParams, CONTEXT_FRAMES, FRAGMENT_WIDTH};
use crate::error::{Error, Result};
use crate::model::{near_square, Anchor, GopConfig, GopModel};
use crate::nn::{load_weights, save_weights, Grid};
use crate::rans::{dequantize_value, Alphabet};
use crate::reorg::{dequantize_mde, pack_vgf, unpack_vgf, LayoutMaps, EMPTY};

/// The model exactly as the decoder will reconstruct it: features and
/// streams rounded, attributes on their adaptive steps, positions on 16-bit
/// levels, pruned streams zeroed, and anchors renumbered in grid order.
pub fn quantize_gop(model: &GopModel, seed: u64) -> Result<GopModel> {
    Ok(quant::quantize(model, seed)?.model)
}

/// Which decoded context plane a [`ContextFault`] hits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultPlane {
    /// Feature fragment `j` of V_TI.
    Fragment(usize),
    /// Frame `t` of V_GF.
    StreamFrame(usize),
}

/// Adds `delta` to one decoded symbol right after its plane is decoded,
/// before later planes use it as context. `position` indexes the plane's
/// symbols in coding order, modulo their count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextFault {
    pub plane: FaultPlane,
    pub position: usize,
    pub delta: i32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecodeOptions {
    /// Test hook for corrupting a context plane.
    pub fault: Option<ContextFault>,
}

/// Wall-clock split of a decode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecodeStats {
    /// Entropy-model inference (conv and MLP forward passes).
    pub prediction: Duration,
    /// CDF construction and rANS decoding.
    pub entropy: Duration,
    pub total: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionReport {
    pub id: SectionId,
    pub bytes: usize,
    /// Sum of the per-symbol code lengths under the predicted distributions;
    /// `None` for raw sections.
    pub estimated_bits: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeReport {
    pub header_bytes: usize,
    pub total_bytes: usize,
    pub sections: Vec<SectionReport>,
    /// Streams left after pruning.
    pub present_streams: usize,
    /// Packed V_GF values before padding: present streams x P x N.
    pub vgf_pixels: usize,
}

impl EncodeReport {
    pub fn section(&self, id: SectionId) -> &SectionReport {
        self.sections.iter().find(|s| s.id == id).expect("every section is reported")
    }
}

/// Bytes per section grouped into the four reporting categories.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeBreakdown {
    pub header_bytes: usize,
    pub total_bytes: usize,
    pub sections: Vec<(SectionId, usize)>,
    pub n_anchors: usize,
    pub frames: usize,
}

impl SizeBreakdown {
    fn bytes_of(&self, ids: &[SectionId]) -> usize {
        self.sections.iter().filter(|(id, _)| ids.contains(id)).map(|(_, b)| b).sum()
    }

    /// V_TI features.
    pub fn time_independent_feature(&self) -> usize {
        self.bytes_of(&[SectionId::VtiFeat])
    }

    /// Positions, `m_de` and the other V_TI attributes.
    pub fn attributes(&self) -> usize {
        self.bytes_of(&[SectionId::Positions, SectionId::MasksMde, SectionId::VtiAttr])
    }

    /// V_GF.
    pub fn time_dependent_feature(&self) -> usize {
        self.bytes_of(&[SectionId::Vgf])
    }

    pub fn neural_networks(&self) -> usize {
        self.bytes_of(&[SectionId::Weights])
    }

    /// `(label, bytes)` in report order.
    pub fn categories(&self) -> [(&'static str, usize); 4] {
        [
            ("time_independent_feature", self.time_independent_feature()),
            ("attributes", self.attributes()),
            ("time_dependent_feature", self.time_dependent_feature()),
            ("neural_networks", self.neural_networks()),
        ]
    }

    pub fn bits_per_anchor_per_frame(&self) -> f64 {
        let denom = (self.n_anchors * self.frames).max(1) as f64;
        self.total_bytes as f64 * 8.0 / denom
    }
}

/// Reads the section sizes of a bitstream from its header.
pub fn size_breakdown(bytes: &[u8]) -> Result<SizeBreakdown> {
    let (h, header_bytes) = Header::read(bytes)?;
    Ok(SizeBreakdown {
        header_bytes,
        total_bytes: bytes.len(),
        sections: h.sections.iter().map(|s| (s.id, s.length as usize)).collect(),
        n_anchors: h.config.n_anchors,
        frames: h.config.frames,
    })
}

fn fragment_count(cfg: &GopConfig) -> usize {
    cfg.feature_channels.div_ceil(FRAGMENT_WIDTH)
}

fn feature_sequence<'w>(
    cfg: &GopConfig,
    alphabet: Alphabet,
    predict: &'w Predictor<'w>,
) -> PlaneSequence<'w> {
    let c = cfg.feature_channels;
    PlaneSequence {
        id: SectionId::VtiFeat,
        channels: FRAGMENT_WIDTH,
        height: cfg.grid_h,
        width: cfg.grid_w,
        cells: cfg.n_anchors,
        coded: (0..fragment_count(cfg)).map(|j| (c - j * FRAGMENT_WIDTH).min(FRAGMENT_WIDTH)).collect(),
        alphabet,
        predict,
    }
}

fn stream_sequence<'w>(
    cfg: &GopConfig,
    gf_dims: (usize, usize),
    present: usize,
    alphabet: Alphabet,
    predict: &'w Predictor<'w>,
) -> PlaneSequence<'w> {
    PlaneSequence {
        id: SectionId::Vgf,
        channels: cfg.stream_channels,
        height: gf_dims.0,
        width: gf_dims.1,
        cells: present,
        coded: vec![cfg.stream_channels; cfg.frames],
        alphabet,
        predict,
    }
}

/// Features as fragments of `FRAGMENT_WIDTH` channel planes over the grid.
fn feature_fragments(model: &GopModel) -> Vec<Grid> {
    let cfg = &model.config;
    let plane = cfg.grid_h * cfg.grid_w;
    (0..fragment_count(cfg))
        .map(|j| {
            let mut g = Grid::zeros(FRAGMENT_WIDTH, cfg.grid_h, cfg.grid_w);
            for (cell, a) in model.anchors.iter().enumerate() {
                for (ch, v) in a.feature.iter().skip(j * FRAGMENT_WIDTH).take(FRAGMENT_WIDTH).enumerate() {
                    g.data[ch * plane + cell] = *v;
                }
            }
            g
        })
        .collect()
}

fn attr_channels(cfg: &GopConfig, alphabets: &[Alphabet]) -> Vec<(usize, Option<f64>, Alphabet)> {
    let l = attr_layout(cfg.gaussians_per_anchor);
    coded_attr_channels(&l).into_iter().zip(alphabets).map(|(ch, a)| (ch, None, *a)).collect()
}

fn mask_channel(cfg: &GopConfig) -> Vec<(usize, Option<f64>, Alphabet)> {
    let l = attr_layout(cfg.gaussians_per_anchor);
    vec![(l.masks, Some(MDE_STEP), mde_alphabet())]
}

/// Encodes `model` into a `GIFS` bitstream; `seed` fixes the grid sort.
pub fn encode_gop(model: &GopModel, seed: u64) -> Result<Vec<u8>> {
    Ok(encode_gop_with_report(model, seed)?.0)
}

/// [`encode_gop`] plus per-section coded sizes and rate estimates.
pub fn encode_gop_with_report(model: &GopModel, seed: u64) -> Result<(Vec<u8>, EncodeReport)> {
    let q: Quantized = quant::quantize(model, seed)?;
    let m = &q.model;
    let cfg = m.config;
    let (fragment_model, stream_model) = predictors(&m.weights);

    let feat_alphabet = Alphabet::from_values(m.anchors.iter().flat_map(|a| a.feature.iter().map(|v| *v as i32)));
    let stream_alphabet = Alphabet::from_values(
        q.layout
            .gf_order
            .iter()
            .flat_map(|a| m.streams[*a as usize].values.iter().map(|v| *v as i32)),
    );
    let n_attr = coded_attr_channels(&attr_layout(cfg.gaussians_per_anchor)).len();
    let attr_alphabets: Vec<Alphabet> =
        (0..n_attr).map(|j| Alphabet::from_values(q.attrs.iter().map(|s| s[j]))).collect();

    let weights = save_weights(&m.weights);
    let mut positions = Vec::with_capacity(cfg.n_anchors * 6);
    for p in &q.positions {
        for s in p {
            positions.extend_from_slice(&s.to_le_bytes());
        }
    }
    let masks = AnchorChannels {
        id: SectionId::MasksMde,
        params: &q.params,
        channels: mask_channel(&cfg),
    }
    .encode(&q.mde.iter().map(|s| vec![*s]).collect::<Vec<_>>());
    let attrs = AnchorChannels {
        id: SectionId::VtiAttr,
        params: &q.params,
        channels: attr_channels(&cfg, &attr_alphabets),
    }
    .encode(&q.attrs);
    let feat = feature_sequence(&cfg, feat_alphabet, &*fragment_model).encode(&feature_fragments(m))?;
    let frames = pack_vgf(m, &q.layout)?;
    let present = q.layout.gf_order.len();
    let vgf = stream_sequence(&cfg, q.layout.gf_dims, present, stream_alphabet, &*stream_model).encode(&frames)?;

    let coded = |c: &CodedSection| -> Result<(Vec<u8>, Option<f64>)> {
        Ok((write_coded(&c.plane, c.symbol_crc)?, Some(c.estimated_bits)))
    };
    let bodies: Vec<(SectionId, Vec<u8>, Option<f64>)> = {
        let mut v = vec![(SectionId::Weights, weights, None), (SectionId::Positions, positions, None)];
        for (id, c) in [
            (SectionId::MasksMde, &masks),
            (SectionId::VtiAttr, &attrs),
            (SectionId::VtiFeat, &feat),
            (SectionId::Vgf, &vgf),
        ] {
            let (b, est) = coded(c)?;
            v.push((id, b, est));
        }
        v
    };

    let header_len = Header::wire_len(attr_alphabets.len());
    let mut offset = header_len;
    let mut sections = Vec::with_capacity(bodies.len());
    for (id, body, _) in &bodies {
        let length = u32::try_from(body.len()).map_err(|_| Error::Format(format!("section {} over 4 GiB", id.name())))?;
        sections.push(SectionEntry {
            id: *id,
            offset: u32::try_from(offset).map_err(|_| Error::Format("bitstream over 4 GiB".into()))?,
            length,
            crc: crc32fast::hash(body),
        });
        offset += body.len();
    }
    let header = Header {
        config: cfg,
        gf_dims: q.layout.gf_dims,
        empty_cells: cfg.grid_h * cfg.grid_w - cfg.n_anchors,
        context_frames: CONTEXT_FRAMES as u8,
        fragment_width: FRAGMENT_WIDTH as u8,
        seed,
        pos_min: q.range.map(|r| r.0),
        pos_max: q.range.map(|r| r.1),
        feat_alphabet,
        stream_alphabet,
        attr_alphabets,
        sections,
    };
    let mut out = header.write()?;
    debug_assert_eq!(out.len(), header_len);
    out.reserve(offset - header_len);
    for (_, body, _) in &bodies {
        out.extend_from_slice(body);
    }
    let report = EncodeReport {
        header_bytes: header_len,
        total_bytes: out.len(),
        sections: bodies
            .iter()
            .map(|(id, body, est)| SectionReport {
                id: *id,
                bytes: body.len(),
                estimated_bits: *est,
            })
            .collect(),
        present_streams: present,
        vgf_pixels: present * cfg.stream_channels * cfg.frames,
    };
    Ok((out, report))
}

/// Reconstructs the quantized model from a `GIFS` bitstream.
pub fn decode_gop(bytes: &[u8]) -> Result<GopModel> {
    Ok(decode_gop_with(bytes, &DecodeOptions::default())?.0)
}

/// [`decode_gop`] with test hooks and a timing split.
pub fn decode_gop_with(bytes: &[u8], options: &DecodeOptions) -> Result<(GopModel, DecodeStats)> {
    let start = Instant::now();
    let mut times = PhaseTimes::default();
    let (h, _) = Header::read(bytes)?;
    let cfg = h.config;
    if h.context_frames as usize != CONTEXT_FRAMES || h.fragment_width as usize != FRAGMENT_WIDTH {
        return Err(Error::Format(format!(
            "bitstream uses {} context planes and fragments of {}, decoder supports {CONTEXT_FRAMES} and {FRAGMENT_WIDTH}",
            h.context_frames, h.fragment_width
        )));
    }
    let n = cfg.n_anchors;
    let l = attr_layout(cfg.gaussians_per_anchor);

    let weights = load_weights(h.section(bytes, SectionId::Weights)?)?;
    weights.check(&cfg)?;
    let (fragment_model, stream_model) = predictors(&weights);

    let raw = h.section(bytes, SectionId::Positions)?;
    if raw.len() != n * 6 {
        return Err(Error::Format(format!("POSITIONS holds {} bytes for {n} anchors", raw.len())));
    }
    let ranges: [(f32, f32); 3] = [0, 1, 2].map(|d| (h.pos_min[d], h.pos_max[d]));
    let positions: Vec<[f32; 3]> = raw
        .chunks_exact(6)
        .map(|c| [0, 1, 2].map(|d| position_value(u16::from_le_bytes([c[2 * d], c[2 * d + 1]]), ranges[d])))
        .collect();

    let fault = |want: fn(FaultPlane) -> Option<usize>| {
        options.fault.and_then(|f| want(f.plane).map(|j| (j, f.position, f.delta)))
    };

    let (plane, crc) = read_coded(h.section(bytes, SectionId::VtiFeat)?, SectionId::VtiFeat)?;
    let feat_seq = feature_sequence(&cfg, h.feat_alphabet, &*fragment_model);
    let fragments = feat_seq.decode(
        &plane,
        crc,
        fragment_count(&cfg),
        fault(|p| match p {
            FaultPlane::Fragment(j) => Some(j),
            _ => None,
        }),
        &mut times,
    )?;
    let grid_plane = cfg.grid_h * cfg.grid_w;
    let features: Vec<Vec<f32>> = (0..n)
        .map(|cell| {
            (0..cfg.feature_channels)
                .map(|c| fragments[c / FRAGMENT_WIDTH].data[(c % FRAGMENT_WIDTH) * grid_plane + cell])
                .collect()
        })
        .collect();

    let t0 = Instant::now();
    let params: Vec<AttrParams> = features
        .par_iter()
        .map(|f| predict_attr_params(f, &weights))
        .collect::<std::result::Result<_, _>>()?;
    times.prediction += t0.elapsed();

    let (plane, crc) = read_coded(h.section(bytes, SectionId::MasksMde)?, SectionId::MasksMde)?;
    let mde: Vec<i32> = AnchorChannels {
        id: SectionId::MasksMde,
        params: &params,
        channels: mask_channel(&cfg),
    }
    .decode(&plane, crc, &mut times)?
    .into_iter()
    .map(|s| s[0])
    .collect();

    let (plane, crc) = read_coded(h.section(bytes, SectionId::VtiAttr)?, SectionId::VtiAttr)?;
    let attrs = AnchorChannels {
        id: SectionId::VtiAttr,
        params: &params,
        channels: attr_channels(&cfg, &h.attr_alphabets),
    }
    .decode(&plane, crc, &mut times)?;

    let ti_grid: Vec<u32> = (0..grid_plane).map(|c| if c < n { c as u32 } else { EMPTY }).collect();
    let layout = LayoutMaps::from_grid(cfg.grid_h, cfg.grid_w, ti_grid, &mde);
    if layout.gf_dims != h.gf_dims || layout.gf_dims != near_square(layout.gf_order.len()) {
        return Err(Error::Format(format!(
            "header V_GF dims {:?} disagree with {} decoded streams",
            h.gf_dims,
            layout.gf_order.len()
        )));
    }
    let (plane, crc) = read_coded(h.section(bytes, SectionId::Vgf)?, SectionId::Vgf)?;
    let present = layout.gf_order.len();
    let frames = if present == 0 {
        if plane.count != 0 {
            return Err(Error::Format("VGF carries symbols but every stream is pruned".into()));
        }
        vec![Grid::zeros(cfg.stream_channels, 0, 0); cfg.frames]
    } else {
        stream_sequence(&cfg, layout.gf_dims, present, h.stream_alphabet, &*stream_model).decode(
            &plane,
            crc,
            cfg.frames,
            fault(|p| match p {
                FaultPlane::StreamFrame(t) => Some(t),
                _ => None,
            }),
            &mut times,
        )?
    };
    let streams = unpack_vgf(&frames, &layout, &cfg)?;

    let coded = coded_attr_channels(&l);
    let anchors: Vec<Anchor> = (0..n)
        .map(|i| {
            let mut v = vec![0.0f32; l.total];
            for (j, &ch) in coded.iter().enumerate() {
                v[ch] = dequantize_value(attrs[i][j], params[i].step[ch]);
            }
            let tri = |b: usize| [v[b], v[b + 1], v[b + 2]];
            Anchor {
                position: positions[i],
                attr_scale: tri(l.attr_scale),
                offset_scale: tri(l.offset_scale),
                offsets: (0..cfg.gaussians_per_anchor).map(|k| tri(l.offsets + 3 * k)).collect(),
                m_de: dequantize_mde(mde[i]),
                m_knn: v[l.masks + 1],
                m_dy: v[l.masks + 2],
                feature: features[i].clone(),
            }
        })
        .collect();
    drop((fragment_model, stream_model));
    let model = GopModel {
        config: cfg,
        anchors,
        streams,
        weights,
        quantized: true,
    };
    let stats = DecodeStats {
        prediction: times.prediction,
        entropy: times.entropy,
        total: start.elapsed(),
    };
    Ok((model, stats))
}

/// Re-derives the attribute symbols of a decoded anchor; used by tests to
/// check that dequantized values are fixed points of quantization.
#[doc(hidden)]
pub fn attribute_symbols(model: &GopModel, i: usize) -> Result<Vec<i32>> {
    let l = attr_layout(model.config.gaussians_per_anchor);
    let a = &model.anchors[i];
    let p = predict_attr_params(&a.feature, &model.weights)?;
    let values = attr_values(a, &l);
    Ok(coded_attr_channels(&l).into_iter().map(|ch| attr_symbol(&l, ch, values[ch], p.step[ch])).collect())
}
