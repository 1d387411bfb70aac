//! Domain model for one group of pictures (GOP): anchors, feature streams,
//! network weights and the decoded per-timestamp Gaussian primitives.

mod synth;
mod validate;

pub use synth::generate_synthetic;
pub use validate::{validate, ValidationReport, Violation};

use crate::error::{Error, Result};
use crate::nn::WeightsBundle;

/// Neighbour count used when a config does not ask for another one.
pub const DEFAULT_KNN: usize = 4;

/// Width of the sinusoidal time encoding appended to the motion-head input.
pub const TIME_ENCODING_WIDTH: usize = 6;

/// Per-primitive width of the attribute-head output:
/// opacity (1), scaling (3), rotation (4), color (3).
pub const ATTRIBUTE_WIDTH: usize = 11;

/// Motion-head output width: quaternion perturbation (4) and translation (3).
pub const MOTION_WIDTH: usize = 7;

/// Shape of a GOP. All counts are fixed for the whole GOP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GopConfig {
    pub n_anchors: usize,
    /// Gaussians decoded per anchor (K).
    pub gaussians_per_anchor: usize,
    /// Time-independent feature channels (C).
    pub feature_channels: usize,
    /// Time-dependent feature channels per frame (P).
    pub stream_channels: usize,
    /// Timestamps in the GOP (N).
    pub frames: usize,
    pub knn_k: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl GopConfig {
    /// Config with a near-square time-independent grid and the default
    /// neighbour count.
    pub fn new(
        n_anchors: usize,
        gaussians_per_anchor: usize,
        feature_channels: usize,
        stream_channels: usize,
        frames: usize,
    ) -> Self {
        let (grid_h, grid_w) = near_square(n_anchors.max(1));
        Self {
            n_anchors,
            gaussians_per_anchor,
            feature_channels,
            stream_channels,
            frames,
            knn_k: DEFAULT_KNN,
            grid_h,
            grid_w,
        }
    }

    pub fn check(&self) -> Result<()> {
        let counts = [
            ("n_anchors", self.n_anchors),
            ("gaussians_per_anchor", self.gaussians_per_anchor),
            ("feature_channels", self.feature_channels),
            ("stream_channels", self.stream_channels),
            ("frames", self.frames),
            ("knn_k", self.knn_k),
            ("grid_h", self.grid_h),
            ("grid_w", self.grid_w),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
            if v > u32::MAX as usize {
                return Err(Error::InvalidConfig(format!("{name} does not fit in 32 bits")));
            }
        }
        if self.grid_h.checked_mul(self.grid_w).is_none_or(|cells| cells < self.n_anchors) {
            return Err(Error::GridTooSmall {
                grid_h: self.grid_h,
                grid_w: self.grid_w,
                n_anchors: self.n_anchors,
            });
        }
        Ok(())
    }

    /// Attribute channels of the time-independent video: x, S1, S2, offsets, masks.
    pub fn attribute_channels(&self) -> usize {
        12 + 3 * self.gaussians_per_anchor
    }

    /// All channels of the time-independent video (attributes plus features).
    pub fn vti_channels(&self) -> usize {
        self.attribute_channels() + self.feature_channels
    }

    /// Normalised time of a frame index, `t / (N - 1)`; zero for a one-frame GOP.
    pub fn time_of(&self, t_index: usize) -> f32 {
        if self.frames <= 1 {
            0.0
        } else {
            (t_index as f64 / (self.frames - 1) as f64) as f32
        }
    }
}

/// Smallest `(h, w)` with `w = ceil(sqrt(len))` and `h = ceil(len / w)`.
pub fn near_square(len: usize) -> (usize, usize) {
    if len == 0 {
        return (0, 0);
    }
    let mut w = (len as f64).sqrt() as usize;
    while w * w < len {
        w += 1;
    }
    (len.div_ceil(w), w)
}

/// A canonical-space anchor carrying the parameters of its K Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub position: [f32; 3],
    /// Per-anchor scaling factor applied to decoded Gaussian scales (S1).
    pub attr_scale: [f32; 3],
    /// Per-anchor scaling factor applied to the offsets (S2).
    pub offset_scale: [f32; 3],
    pub offsets: Vec<[f32; 3]>,
    pub m_de: f32,
    pub m_knn: f32,
    pub m_dy: f32,
    /// Time-independent feature, C channels.
    pub feature: Vec<f32>,
}

/// The time-dependent feature of one anchor: N frames of P channels,
/// stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStream {
    pub channels: usize,
    pub values: Vec<f32>,
    /// `false` when the stream was pruned; all values are then zero.
    pub present: bool,
}

impl FeatureStream {
    pub fn zeros(frames: usize, channels: usize) -> Self {
        Self {
            channels,
            values: vec![0.0; frames * channels],
            present: false,
        }
    }

    pub fn frames(&self) -> usize {
        self.values.len().checked_div(self.channels).unwrap_or(0)
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.values[t * self.channels..(t + 1) * self.channels]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f32] {
        &mut self.values[t * self.channels..(t + 1) * self.channels]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

/// Full uncompressed representation of one GOP.
#[derive(Debug, Clone, PartialEq)]
pub struct GopModel {
    pub config: GopConfig,
    pub anchors: Vec<Anchor>,
    /// Parallel to `anchors`.
    pub streams: Vec<FeatureStream>,
    pub weights: WeightsBundle,
    /// Set once features and streams hold integer symbols (inference-time rounding).
    pub quantized: bool,
}

impl GopModel {
    pub fn present_streams(&self) -> usize {
        self.streams.iter().filter(|s| s.present).count()
    }
}

/// One decoded Gaussian primitive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPrimitive {
    pub position: [f32; 3],
    pub opacity: f32,
    pub scaling: [f32; 3],
    /// Unit quaternion, `(w, x, y, z)`.
    pub rotation: [f32; 4],
    pub color: [f32; 3],
}

/// The `n_anchors * K` primitives of one timestamp, anchor-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFrame {
    /// Normalised time in `[0, 1]`.
    pub timestamp: f32,
    pub primitives: Vec<GaussianPrimitive>,
}

impl GaussianFrame {
    /// Lists every primitive that breaks the renderer contract
    /// (unit rotation, positive scale, color in the unit cube).
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, p) in self.primitives.iter().enumerate() {
            let norm = p.rotation.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                out.push(format!("primitive {i}: rotation norm {norm}"));
            }
            if p.scaling.iter().any(|s| !(*s > 0.0)) {
                out.push(format!("primitive {i}: non-positive scaling {:?}", p.scaling));
            }
            if p.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
                out.push(format!("primitive {i}: color out of range {:?}", p.color));
            }
            if !(0.0..=1.0).contains(&p.opacity) {
                out.push(format!("primitive {i}: opacity out of range {}", p.opacity));
            }
            if p.position.iter().any(|v| !v.is_finite()) {
                out.push(format!("primitive {i}: non-finite position"));
            }
        }
        out
    }
}
