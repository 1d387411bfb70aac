//! Inference-time quantization of a GOP and its canonical grid order.

use rayon::prelude::*;

use crate::entropy::{attr_layout, predict_attr_params, AttrLayout, AttrParams};
use crate::error::{Error, Result};
use crate::model::{validate, Anchor, FeatureStream, GopModel};
use crate::rans::{dequantize_value, quantize_value};
use crate::reorg::{build_layout, dequantize_mde, quantize_mde, LayoutMaps, EMPTY};

pub(crate) const POSITION_LEVELS: f64 = 65535.0;

/// Attribute-model output channels coded in the attribute section, in
/// coding order: S1, S2, offsets, `m_knn`, `m_dy`.
pub(crate) fn coded_attr_channels(l: &AttrLayout) -> Vec<usize> {
    (l.attr_scale..l.masks).chain([l.masks + 1, l.masks + 2]).collect()
}

/// Per-axis `(min, max)` of the anchor positions.
pub(crate) type PositionRange = [(f32, f32); 3];

pub(crate) fn position_symbol(v: f32, (lo, hi): (f32, f32)) -> u16 {
    let range = hi as f64 - lo as f64;
    if range <= 0.0 {
        return 0;
    }
    ((v as f64 - lo as f64) / range * POSITION_LEVELS).round().clamp(0.0, POSITION_LEVELS) as u16
}

pub(crate) fn position_value(s: u16, (lo, hi): (f32, f32)) -> f32 {
    (lo as f64 + (hi as f64 - lo as f64) * (s as f64 / POSITION_LEVELS)) as f32
}

/// Symbol of an attribute value at step `q`, clamped into the range the
/// channel may take: S1 stays positive, masks stay in `[0, 1]`.
pub(crate) fn attr_symbol(l: &AttrLayout, ch: usize, v: f32, q: f32) -> i32 {
    let s = quantize_value(v, q);
    if (l.attr_scale..l.offset_scale).contains(&ch) {
        s.max(1)
    } else if ch > l.masks {
        let mut s = s.max(0);
        while s > 0 && dequantize_value(s, q) > 1.0 {
            s -= 1;
        }
        s
    } else {
        s
    }
}

/// A quantized GOP in canonical grid order (anchor `i` sits in cell `i`),
/// together with the symbols the coder needs.
#[derive(Debug, Clone)]
pub(crate) struct Quantized {
    pub model: GopModel,
    pub layout: LayoutMaps,
    pub range: PositionRange,
    pub positions: Vec<[u16; 3]>,
    pub mde: Vec<i32>,
    /// Per anchor, symbols of [`coded_attr_channels`].
    pub attrs: Vec<Vec<i32>>,
    pub params: Vec<AttrParams>,
}

fn quantize_anchor(a: &Anchor, s: &FeatureStream, weights: &crate::nn::WeightsBundle, l: &AttrLayout)
    -> Result<(Anchor, FeatureStream, AttrParams)> {
    let feature: Vec<f32> = a.feature.iter().map(|v| quantize_value(*v, 1.0) as f32).collect();
    let params = predict_attr_params(&feature, weights)?;
    let q = |ch: usize, v: f32| dequantize_value(attr_symbol(l, ch, v, params.step[ch]), params.step[ch]);
    let mde = quantize_mde(a.m_de);
    let anchor = Anchor {
        position: a.position,
        attr_scale: [0, 1, 2].map(|d| q(l.attr_scale + d, a.attr_scale[d])),
        offset_scale: [0, 1, 2].map(|d| q(l.offset_scale + d, a.offset_scale[d])),
        offsets: a
            .offsets
            .iter()
            .enumerate()
            .map(|(j, o)| [0, 1, 2].map(|d| q(l.offsets + 3 * j + d, o[d])))
            .collect(),
        m_de: dequantize_mde(mde),
        m_knn: q(l.masks + 1, a.m_knn),
        m_dy: q(l.masks + 2, a.m_dy),
        feature,
    };
    let stream = if mde == 0 {
        FeatureStream::zeros(s.frames(), s.channels)
    } else {
        FeatureStream {
            channels: s.channels,
            values: s.values.iter().map(|v| quantize_value(*v, 1.0) as f32).collect(),
            present: true,
        }
    };
    Ok((anchor, stream, params))
}

fn record_key(a: &Anchor, s: &FeatureStream) -> Vec<u32> {
    let mut k = Vec::with_capacity(12 + 3 * a.offsets.len() + a.feature.len() + s.values.len());
    k.extend(a.position.iter().map(|v| v.to_bits()));
    k.extend(a.attr_scale.iter().chain(&a.offset_scale).map(|v| v.to_bits()));
    k.extend(a.offsets.iter().flatten().map(|v| v.to_bits()));
    k.extend([a.m_de, a.m_knn, a.m_dy].map(f32::to_bits));
    k.extend(a.feature.iter().map(|v| v.to_bits()));
    k.extend(s.values.iter().map(|v| v.to_bits()));
    k
}

pub(crate) fn quantize(model: &GopModel, seed: u64) -> Result<Quantized> {
    let report = validate(model);
    if !report.is_empty() {
        return Err(Error::Validation(report));
    }
    let cfg = model.config;
    let l = attr_layout(cfg.gaussians_per_anchor);

    let mut range: PositionRange = [(f32::INFINITY, f32::NEG_INFINITY); 3];
    for a in &model.anchors {
        for (r, v) in range.iter_mut().zip(a.position) {
            r.0 = r.0.min(v);
            r.1 = r.1.max(v);
        }
    }

    let mut records: Vec<(Anchor, FeatureStream, AttrParams)> = model
        .anchors
        .par_iter()
        .zip(model.streams.par_iter())
        .map(|(a, s)| {
            let (mut a, s, p) = quantize_anchor(a, s, &model.weights, &l)?;
            a.position = [0, 1, 2].map(|d| position_value(position_symbol(a.position[d], range[d]), range[d]));
            Ok((a, s, p))
        })
        .collect::<Result<_>>()?;

    let mut keyed: Vec<(Vec<u32>, usize)> =
        records.par_iter().enumerate().map(|(i, (a, s, _))| (record_key(a, s), i)).collect();
    keyed.par_sort_unstable();
    let mut slots: Vec<Option<(Anchor, FeatureStream, AttrParams)>> = records.drain(..).map(Some).collect();
    let canonical: Vec<(Anchor, FeatureStream, AttrParams)> =
        keyed.into_iter().map(|(_, i)| slots[i].take().expect("each record once")).collect();

    let mut q = GopModel {
        config: cfg,
        anchors: Vec::with_capacity(cfg.n_anchors),
        streams: Vec::with_capacity(cfg.n_anchors),
        weights: model.weights.clone(),
        quantized: true,
    };
    let mut params = Vec::with_capacity(cfg.n_anchors);
    let mut slots: Vec<Option<AttrParams>> = Vec::with_capacity(cfg.n_anchors);
    for (a, s, p) in canonical {
        q.anchors.push(a);
        q.streams.push(s);
        slots.push(Some(p));
    }
    let sorted = build_layout(&q, seed)?;

    // Renumber so that the anchor in cell i is anchor i.
    let mut anchors = Vec::with_capacity(cfg.n_anchors);
    let mut streams = Vec::with_capacity(cfg.n_anchors);
    for &a in sorted.ti_grid.iter().filter(|a| **a != EMPTY) {
        anchors.push(q.anchors[a as usize].clone());
        streams.push(q.streams[a as usize].clone());
        params.push(slots[a as usize].take().expect("each anchor once"));
    }
    q.anchors = anchors;
    q.streams = streams;

    let n = cfg.n_anchors;
    let mde: Vec<i32> = q.anchors.iter().map(|a| quantize_mde(a.m_de)).collect();
    let ti_grid: Vec<u32> = (0..cfg.grid_h * cfg.grid_w).map(|c| if c < n { c as u32 } else { EMPTY }).collect();
    let layout = LayoutMaps::from_grid(cfg.grid_h, cfg.grid_w, ti_grid, &mde);

    let channels = coded_attr_channels(&l);
    let attrs = q
        .anchors
        .iter()
        .zip(&params)
        .map(|(a, p)| {
            let values = attr_values(a, &l);
            channels.iter().map(|&ch| attr_symbol(&l, ch, values[ch], p.step[ch])).collect()
        })
        .collect();
    let positions = q.anchors.iter().map(|a| [0, 1, 2].map(|d| position_symbol(a.position[d], range[d]))).collect();
    Ok(Quantized {
        model: q,
        layout,
        range,
        positions,
        mde,
        attrs,
        params,
    })
}

/// Attribute values of an anchor indexed by attribute-model channel.
pub(crate) fn attr_values(a: &Anchor, l: &AttrLayout) -> Vec<f32> {
    let mut v = vec![0.0; l.total];
    v[l.position..l.position + 3].copy_from_slice(&a.position);
    v[l.attr_scale..l.attr_scale + 3].copy_from_slice(&a.attr_scale);
    v[l.offset_scale..l.offset_scale + 3].copy_from_slice(&a.offset_scale);
    for (j, o) in a.offsets.iter().enumerate() {
        v[l.offsets + 3 * j..l.offsets + 3 * j + 3].copy_from_slice(o);
    }
    v[l.masks] = a.m_de;
    v[l.masks + 1] = a.m_knn;
    v[l.masks + 2] = a.m_dy;
    v
}
