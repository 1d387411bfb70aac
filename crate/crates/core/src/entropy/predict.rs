use super::{CONTEXT_FRAMES, SIGMA_FLOOR, STEP_FLOOR};
use crate::nn::{mlp_forward, softplus, ConvLayer, Grid, NnError, WeightsBundle};

/// Predicted `(mu, sigma)` for every value of a plane stack.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneDistribution {
    pub mu: Grid,
    pub sigma: Grid,
}

/// Channel offsets of the attribute part of the time-independent video.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttrLayout {
    pub position: usize,
    pub attr_scale: usize,
    pub offset_scale: usize,
    pub offsets: usize,
    /// `m_de`, `m_knn`, `m_dy`, in that order.
    pub masks: usize,
    pub total: usize,
}

pub fn attr_layout(k: usize) -> AttrLayout {
    AttrLayout {
        position: 0,
        attr_scale: 3,
        offset_scale: 6,
        offsets: 9,
        masks: 9 + 3 * k,
        total: 12 + 3 * k,
    }
}

/// Per-channel distribution and adaptive step of one anchor's attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct AttrParams {
    pub mu: Vec<f32>,
    pub sigma: Vec<f32>,
    pub step: Vec<f32>,
}

#[inline]
fn positive(raw: f32, floor: f64) -> f32 {
    (softplus(raw as f64) + floor) as f32
}

fn run_conv(layers: &[ConvLayer], context: &[&Grid], out_ch: usize) -> Result<PlaneDistribution, NnError> {
    if context.len() != CONTEXT_FRAMES {
        return Err(NnError::DimMismatch(format!(
            "expected {CONTEXT_FRAMES} context planes, got {}",
            context.len()
        )));
    }
    let mut x = Grid::concat(context)?;
    for layer in layers {
        x = layer.forward(&x)?;
    }
    if x.channels != 2 * out_ch {
        return Err(NnError::DimMismatch(format!(
            "entropy network emits {} channels, expected {}",
            x.channels,
            2 * out_ch
        )));
    }
    let plane = x.plane_len() * out_ch;
    let mut mu = Grid::zeros(out_ch, x.height, x.width);
    let mut sigma = Grid::zeros(out_ch, x.height, x.width);
    mu.data.copy_from_slice(&x.data[..plane]);
    for (s, raw) in sigma.data.iter_mut().zip(&x.data[plane..]) {
        *s = positive(*raw, SIGMA_FLOOR);
    }
    Ok(PlaneDistribution { mu, sigma })
}

/// Distribution of the next stream frame from the previous `CONTEXT_FRAMES`
/// frames, oldest first. Missing history is passed as zero grids.
pub fn predict_stream_frame(context: &[&Grid], weights: &WeightsBundle) -> Result<PlaneDistribution, NnError> {
    let p = context.first().map_or(0, |g| g.channels);
    run_conv(&weights.ent_stream, context, p)
}

/// Distribution of the next feature fragment from the previous
/// `CONTEXT_FRAMES` fragments, oldest first.
pub fn predict_fragment(context: &[&Grid], weights: &WeightsBundle) -> Result<PlaneDistribution, NnError> {
    let g = context.first().map_or(0, |g| g.channels);
    run_conv(&weights.ent_fragment, context, g)
}

/// `(mu, sigma, Q)` for each attribute channel of an anchor with quantized
/// feature `feature`.
pub fn predict_attr_params(feature: &[f32], weights: &WeightsBundle) -> Result<AttrParams, NnError> {
    let out = mlp_forward(&weights.ent_attr, feature)?;
    if out.len() % 3 != 0 {
        return Err(NnError::DimMismatch(format!(
            "attribute entropy model emits {} values, not a multiple of 3",
            out.len()
        )));
    }
    let a = out.len() / 3;
    Ok(AttrParams {
        mu: out[..a].to_vec(),
        sigma: out[a..2 * a].iter().map(|r| positive(*r, SIGMA_FLOOR)).collect(),
        step: out[2 * a..].iter().map(|r| positive(*r, STEP_FLOOR)).collect(),
    })
}
