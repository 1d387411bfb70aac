//! Forward path from a GOP model to the Gaussian primitives of one timestamp.
//!
//! Per anchor and timestamp `t`:
//!
//! 1. `f_hat_t = m_de * f_t` (a zero mask prunes the stream);
//! 2. neighbour aggregation `g~ = (1 - m_knn) * mean(g over neighbours) + m_knn * g`
//!    for `g` in `{f, f_hat_t}`;
//! 3. the attribute head maps `[f; f_hat_t]` to K primitives;
//! 4. the motion head maps `[f~; f~_t; enc(t)]` to `(q, tau)`, giving
//!    `R = q2m(normalize((1,0,0,0) + m_dy q))` and `T = m_dy tau`;
//! 5. `p_i = R (S2 * o_i) + x + T`.

mod knn;

pub use knn::{build_knn, NeighborIndex};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Anchor, FeatureStream, GaussianFrame, GaussianPrimitive, GopModel, ATTRIBUTE_WIDTH, MOTION_WIDTH, TIME_ENCODING_WIDTH};
use crate::nn::{mlp_forward, sigmoid, NnError, WeightsBundle};

/// Rotation and translation of one anchor at one timestamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorMotion {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl AnchorMotion {
    pub const IDENTITY: AnchorMotion = AnchorMotion {
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: [0.0; 3],
    };
}

/// Decoded appearance of one primitive, before placement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimitiveAttributes {
    pub opacity: f32,
    pub scaling: [f32; 3],
    pub rotation: [f32; 4],
    pub color: [f32; 3],
}

/// Scales every frame by `m_de`; a zero mask yields a pruned zero stream.
pub fn apply_de_mask(stream: &FeatureStream, m_de: f32) -> FeatureStream {
    if m_de == 0.0 {
        return FeatureStream::zeros(stream.frames(), stream.channels);
    }
    FeatureStream {
        channels: stream.channels,
        values: stream.values.iter().map(|v| v * m_de).collect(),
        present: stream.present,
    }
}

/// Masked frame `t` of one anchor, written into `out`.
fn masked_frame(anchor: &Anchor, stream: &FeatureStream, t: usize, out: &mut [f32]) {
    if anchor.m_de == 0.0 || !stream.present {
        out.fill(0.0);
    } else {
        for (o, v) in out.iter_mut().zip(stream.frame(t)) {
            *o = v * anchor.m_de;
        }
    }
}

/// `out_i = (1 - m_knn_i) * mean_{j in N(i)} feat_j + m_knn_i * feat_i`, with
/// `features` stored anchor-major at `width` values per anchor. Anchors
/// without neighbours keep their own feature.
pub fn aggregate(features: &[f32], width: usize, nbrs: &NeighborIndex, m_knn: &[f32]) -> Vec<f32> {
    let n = m_knn.len();
    let mut out = vec![0.0f32; n * width];
    if width == 0 {
        return out;
    }
    out.par_chunks_mut(width).enumerate().for_each(|(i, dst)| {
        let own = &features[i * width..(i + 1) * width];
        let list = if nbrs.k == 0 { &[][..] } else { nbrs.of(i) };
        if list.is_empty() {
            dst.copy_from_slice(own);
            return;
        }
        let m = m_knn[i] as f64;
        let inv = 1.0 / list.len() as f64;
        for c in 0..width {
            let mut sum = 0.0f64;
            for &j in list {
                sum += features[j as usize * width + c] as f64;
            }
            let mean = sum * inv;
            dst[c] = ((1.0 - m) * mean + m * own[c] as f64) as f32;
        }
    });
    out
}

/// Sinusoidal encoding of normalised time: `sin, cos` at `pi`, `2 pi`, `4 pi`.
pub fn time_encoding(t: f32) -> [f32; TIME_ENCODING_WIDTH] {
    let mut out = [0.0; TIME_ENCODING_WIDTH];
    for octave in 0..TIME_ENCODING_WIDTH / 2 {
        let a = std::f64::consts::PI * (1u32 << octave) as f64 * t as f64;
        out[2 * octave] = a.sin() as f32;
        out[2 * octave + 1] = a.cos() as f32;
    }
    out
}

/// Hamilton `(w, x, y, z)` quaternion to rotation matrix, after normalising.
/// Quaternions with norm below `1e-8` map to the identity.
pub fn quat_to_matrix(q: [f64; 4]) -> [[f64; 3]; 3] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(n >= 1e-8) {
        return AnchorMotion::IDENTITY.rotation;
    }
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn concat(parts: &[&[f32]]) -> Vec<f32> {
    let mut v = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        v.extend_from_slice(p);
    }
    v
}

/// Attribute head: `[f; f_hat_t]` to one [`PrimitiveAttributes`] per Gaussian.
pub fn predict_attributes(
    feature: &[f32],
    f_hat_t: &[f32],
    attr_scale: [f32; 3],
    weights: &WeightsBundle,
) -> Result<Vec<PrimitiveAttributes>, NnError> {
    let out = mlp_forward(&weights.att_head, &concat(&[feature, f_hat_t]))?;
    if out.len() % ATTRIBUTE_WIDTH != 0 {
        return Err(NnError::DimMismatch(format!(
            "attribute head emits {} values, not a multiple of {ATTRIBUTE_WIDTH}",
            out.len()
        )));
    }
    Ok(out
        .chunks_exact(ATTRIBUTE_WIDTH)
        .map(|raw| {
            let sig = |v: f32| sigmoid(v as f64);
            let q: [f64; 4] = [raw[4], raw[5], raw[6], raw[7]].map(|v| v as f64);
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rotation = if n >= 1e-8 {
                q.map(|v| (v / n) as f32)
            } else {
                [1.0, 0.0, 0.0, 0.0]
            };
            PrimitiveAttributes {
                opacity: sig(raw[0]) as f32,
                scaling: [0, 1, 2].map(|a| ((sig(raw[1 + a]) * attr_scale[a] as f64) as f32).max(f32::MIN_POSITIVE)),
                rotation,
                color: [8, 9, 10].map(|c| sig(raw[c]) as f32),
            }
        })
        .collect())
}

/// Motion head: `[f~; f~_t; enc(t)]` to the anchor's rigid motion.
pub fn predict_motion(
    f_tilde: &[f32],
    f_tilde_t: &[f32],
    t: f32,
    m_dy: f32,
    weights: &WeightsBundle,
) -> Result<AnchorMotion, NnError> {
    let enc = time_encoding(t);
    let out = mlp_forward(&weights.mot_head, &concat(&[f_tilde, f_tilde_t, &enc]))?;
    if out.len() != MOTION_WIDTH {
        return Err(NnError::DimMismatch(format!(
            "motion head emits {} values, expected {MOTION_WIDTH}",
            out.len()
        )));
    }
    let m = m_dy as f64;
    let q = [
        1.0 + m * out[0] as f64,
        m * out[1] as f64,
        m * out[2] as f64,
        m * out[3] as f64,
    ];
    Ok(AnchorMotion {
        rotation: quat_to_matrix(q),
        translation: [4, 5, 6].map(|i| m * out[i] as f64),
    })
}

/// `p_i = R (S2 * o_i) + x + T` for every offset of the anchor.
pub fn gaussian_positions(anchor: &Anchor, motion: &AnchorMotion) -> Vec<[f32; 3]> {
    let r = &motion.rotation;
    anchor
        .offsets
        .iter()
        .map(|o| {
            let v = [0, 1, 2].map(|a| anchor.offset_scale[a] as f64 * o[a] as f64);
            [0, 1, 2].map(|row| {
                let rv = r[row][0] * v[0] + r[row][1] * v[1] + r[row][2] * v[2];
                (rv + anchor.position[row] as f64 + motion.translation[row]) as f32
            })
        })
        .collect()
}

/// Precomputes the time-independent parts of the forward path (neighbours
/// and aggregated features) so many timestamps can be expanded cheaply.
#[derive(Debug)]
pub struct FrameDecoder<'m> {
    model: &'m GopModel,
    neighbors: NeighborIndex,
    m_knn: Vec<f32>,
    /// Aggregated time-independent features, anchor-major.
    f_tilde: Vec<f32>,
}

impl<'m> FrameDecoder<'m> {
    pub fn new(model: &'m GopModel) -> Result<Self> {
        let cfg = &model.config;
        if model.anchors.len() != cfg.n_anchors || model.streams.len() != cfg.n_anchors {
            return Err(Error::InvalidConfig(format!(
                "model holds {} anchors and {} streams for n_anchors = {}",
                model.anchors.len(),
                model.streams.len(),
                cfg.n_anchors
            )));
        }
        model.weights.check(cfg)?;
        let c = cfg.feature_channels;
        for (i, a) in model.anchors.iter().enumerate() {
            if a.feature.len() != c || a.offsets.len() != cfg.gaussians_per_anchor {
                return Err(Error::InvalidConfig(format!("anchor {i} does not match the config")));
            }
        }
        let positions: Vec<[f32; 3]> = model.anchors.iter().map(|a| a.position).collect();
        let neighbors = knn::knn_or_empty(&positions, cfg.knn_k);
        let m_knn: Vec<f32> = model.anchors.iter().map(|a| a.m_knn).collect();
        let features: Vec<f32> = model.anchors.iter().flat_map(|a| a.feature.iter().copied()).collect();
        let f_tilde = aggregate(&features, c, &neighbors, &m_knn);
        Ok(Self {
            model,
            neighbors,
            m_knn,
            f_tilde,
        })
    }

    pub fn neighbors(&self) -> &NeighborIndex {
        &self.neighbors
    }

    pub fn decode(&self, t_index: usize) -> Result<GaussianFrame> {
        let model = self.model;
        let cfg = &model.config;
        if t_index >= cfg.frames {
            return Err(Error::TimeIndex {
                index: t_index,
                frames: cfg.frames,
            });
        }
        let (c, p) = (cfg.feature_channels, cfg.stream_channels);
        for (i, s) in model.streams.iter().enumerate() {
            if s.channels != p || s.values.len() != cfg.frames * p {
                return Err(Error::InvalidConfig(format!("stream {i} does not match the config")));
            }
        }
        let t = cfg.time_of(t_index);
        let mut f_hat = vec![0.0f32; cfg.n_anchors * p];
        f_hat
            .par_chunks_mut(p)
            .zip(model.anchors.par_iter().zip(&model.streams))
            .for_each(|(dst, (a, s))| masked_frame(a, s, t_index, dst));
        let f_tilde_t = aggregate(&f_hat, p, &self.neighbors, &self.m_knn);

        let per_anchor: Vec<Vec<GaussianPrimitive>> = model
            .anchors
            .par_iter()
            .enumerate()
            .map(|(i, a)| -> Result<Vec<GaussianPrimitive>> {
                let fh = &f_hat[i * p..(i + 1) * p];
                let attrs = predict_attributes(&a.feature, fh, a.attr_scale, &model.weights)?;
                let motion = predict_motion(
                    &self.f_tilde[i * c..(i + 1) * c],
                    &f_tilde_t[i * p..(i + 1) * p],
                    t,
                    a.m_dy,
                    &model.weights,
                )?;
                let positions = gaussian_positions(a, &motion);
                Ok(attrs
                    .into_iter()
                    .zip(positions)
                    .map(|(at, position)| GaussianPrimitive {
                        position,
                        opacity: at.opacity,
                        scaling: at.scaling,
                        rotation: at.rotation,
                        color: at.color,
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(GaussianFrame {
            timestamp: t,
            primitives: per_anchor.into_iter().flatten().collect(),
        })
    }
}

/// Gaussian primitives of `model` at frame `t_index`.
pub fn decode_frame(model: &GopModel, t_index: usize) -> Result<GaussianFrame> {
    FrameDecoder::new(model)?.decode(t_index)
}
