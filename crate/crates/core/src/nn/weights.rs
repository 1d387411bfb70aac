//! The network weights of a GOP and their portable binary form ("GIFW").
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "GIFW" | u16 version | u16 network count
//! per network:
//!   u8 name length | name (ASCII) | u8 kind (0 dense, 1 conv) | u16 layer count
//!   per layer:
//!     u32 in | u32 out | u8 activation
//!     f32 weights (dense: out*in, conv: out*in*3*3; row-major)
//!     f32 bias (out)
//! ```

use super::{Activation, ConvLayer, DenseLayer, NnError};
use crate::bytes::{Reader, Writer};
use crate::model::{GopConfig, ATTRIBUTE_WIDTH, MOTION_WIDTH, TIME_ENCODING_WIDTH};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"GIFW";
pub const WEIGHTS_VERSION: u16 = 1;

/// Hidden width of the attribute, motion and attribute-entropy MLPs.
pub const MLP_HIDDEN: usize = 64;
/// Hidden channels of the convolutional entropy models.
pub const CONV_HIDDEN: usize = 32;

const NAMES: [&str; 5] = ["att_head", "mot_head", "ent_stream", "ent_fragment", "ent_attr"];

/// Weights of every network used by one GOP.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightsBundle {
    /// `[f; f_hat_t] -> K x (opacity, scaling, rotation, color)`.
    pub att_head: Vec<DenseLayer>,
    /// `[f_tilde; f_tilde_t; time encoding] -> (q_t, tau_t)`.
    pub mot_head: Vec<DenseLayer>,
    /// `k` previous stream frames -> `(mu, sigma)` of the next frame.
    pub ent_stream: Vec<ConvLayer>,
    /// `k` previous feature fragments -> `(mu, sigma)` of the next fragment.
    pub ent_fragment: Vec<ConvLayer>,
    /// Quantized feature -> `(mu, sigma, Q)` per attribute channel.
    pub ent_attr: Vec<DenseLayer>,
}

fn chain_dense(name: &str, layers: &[DenseLayer], input: usize, output: usize) -> Result<(), NnError> {
    let mut width = input;
    for (i, l) in layers.iter().enumerate() {
        l.check_storage()?;
        if l.in_dim != width {
            return Err(NnError::DimChain {
                network: name.into(),
                layer: i,
                expected: l.in_dim,
                found: width,
            });
        }
        width = l.out_dim;
    }
    if width != output {
        return Err(NnError::DimMismatch(format!("{name} produces {width} outputs, expected {output}")));
    }
    Ok(())
}

fn chain_conv(name: &str, layers: &[ConvLayer], input: usize, output: usize) -> Result<(), NnError> {
    let mut width = input;
    for (i, l) in layers.iter().enumerate() {
        l.check_storage()?;
        if l.in_ch != width {
            return Err(NnError::DimChain {
                network: name.into(),
                layer: i,
                expected: l.in_ch,
                found: width,
            });
        }
        width = l.out_ch;
    }
    if width != output {
        return Err(NnError::DimMismatch(format!("{name} produces {width} channels, expected {output}")));
    }
    Ok(())
}

fn internal_chain_dense(name: &str, layers: &[DenseLayer]) -> Result<(), NnError> {
    for (i, pair) in layers.windows(2).enumerate() {
        if pair[1].in_dim != pair[0].out_dim {
            return Err(NnError::DimChain {
                network: name.into(),
                layer: i + 1,
                expected: pair[1].in_dim,
                found: pair[0].out_dim,
            });
        }
    }
    layers.iter().try_for_each(DenseLayer::check_storage)
}

fn internal_chain_conv(name: &str, layers: &[ConvLayer]) -> Result<(), NnError> {
    for (i, pair) in layers.windows(2).enumerate() {
        if pair[1].in_ch != pair[0].out_ch {
            return Err(NnError::DimChain {
                network: name.into(),
                layer: i + 1,
                expected: pair[1].in_ch,
                found: pair[0].out_ch,
            });
        }
    }
    layers.iter().try_for_each(ConvLayer::check_storage)
}

impl WeightsBundle {
    /// All-zero weights with the standard architecture for `cfg`.
    pub fn zeros(cfg: &GopConfig) -> Self {
        let (c, p, k) = (cfg.feature_channels, cfg.stream_channels, cfg.gaussians_per_anchor);
        let g = crate::entropy::FRAGMENT_WIDTH;
        let ctx = crate::entropy::CONTEXT_FRAMES;
        use Activation::{None as Linear, Relu};
        Self {
            att_head: vec![
                DenseLayer::zeros(c + p, MLP_HIDDEN, Relu),
                DenseLayer::zeros(MLP_HIDDEN, ATTRIBUTE_WIDTH * k, Linear),
            ],
            mot_head: vec![
                DenseLayer::zeros(c + p + TIME_ENCODING_WIDTH, MLP_HIDDEN, Relu),
                DenseLayer::zeros(MLP_HIDDEN, MOTION_WIDTH, Linear),
            ],
            ent_stream: vec![
                ConvLayer::zeros(ctx * p, CONV_HIDDEN, Relu),
                ConvLayer::zeros(CONV_HIDDEN, 2 * p, Linear),
            ],
            ent_fragment: vec![
                ConvLayer::zeros(ctx * g, CONV_HIDDEN, Relu),
                ConvLayer::zeros(CONV_HIDDEN, 2 * g, Linear),
            ],
            ent_attr: vec![
                DenseLayer::zeros(c, MLP_HIDDEN, Relu),
                DenseLayer::zeros(MLP_HIDDEN, 3 * cfg.attribute_channels(), Linear),
            ],
        }
    }

    /// Checks that every network chains correctly and matches the GOP shape.
    pub fn check(&self, cfg: &GopConfig) -> Result<(), NnError> {
        let (c, p, k) = (cfg.feature_channels, cfg.stream_channels, cfg.gaussians_per_anchor);
        let g = crate::entropy::FRAGMENT_WIDTH;
        let ctx = crate::entropy::CONTEXT_FRAMES;
        chain_dense("att_head", &self.att_head, c + p, ATTRIBUTE_WIDTH * k)?;
        chain_dense("mot_head", &self.mot_head, c + p + TIME_ENCODING_WIDTH, MOTION_WIDTH)?;
        chain_conv("ent_stream", &self.ent_stream, ctx * p, 2 * p)?;
        chain_conv("ent_fragment", &self.ent_fragment, ctx * g, 2 * g)?;
        chain_dense("ent_attr", &self.ent_attr, c, 3 * cfg.attribute_channels())
    }

    fn check_internal(&self) -> Result<(), NnError> {
        internal_chain_dense("att_head", &self.att_head)?;
        internal_chain_dense("mot_head", &self.mot_head)?;
        internal_chain_conv("ent_stream", &self.ent_stream)?;
        internal_chain_conv("ent_fragment", &self.ent_fragment)?;
        internal_chain_dense("ent_attr", &self.ent_attr)
    }

    pub fn parameter_count(&self) -> usize {
        let dense = |ls: &[DenseLayer]| ls.iter().map(|l| l.weight.len() + l.bias.len()).sum::<usize>();
        let conv = |ls: &[ConvLayer]| ls.iter().map(|l| l.kernel.len() + l.bias.len()).sum::<usize>();
        dense(&self.att_head)
            + dense(&self.mot_head)
            + conv(&self.ent_stream)
            + conv(&self.ent_fragment)
            + dense(&self.ent_attr)
    }
}

fn write_dense(w: &mut Writer, name: &str, layers: &[DenseLayer]) {
    write_net_header(w, name, 0, layers.len());
    for l in layers {
        w.u32(l.in_dim as u32);
        w.u32(l.out_dim as u32);
        w.u8(l.activation.code());
        w.f32s(&l.weight);
        w.f32s(&l.bias);
    }
}

fn write_conv(w: &mut Writer, name: &str, layers: &[ConvLayer]) {
    write_net_header(w, name, 1, layers.len());
    for l in layers {
        w.u32(l.in_ch as u32);
        w.u32(l.out_ch as u32);
        w.u8(l.activation.code());
        w.f32s(&l.kernel);
        w.f32s(&l.bias);
    }
}

fn write_net_header(w: &mut Writer, name: &str, kind: u8, layers: usize) {
    w.u8(name.len() as u8);
    w.bytes(name.as_bytes());
    w.u8(kind);
    w.u16(layers as u16);
}

pub fn save_weights(bundle: &WeightsBundle) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(WEIGHTS_MAGIC);
    w.u16(WEIGHTS_VERSION);
    w.u16(NAMES.len() as u16);
    write_dense(&mut w, "att_head", &bundle.att_head);
    write_dense(&mut w, "mot_head", &bundle.mot_head);
    write_conv(&mut w, "ent_stream", &bundle.ent_stream);
    write_conv(&mut w, "ent_fragment", &bundle.ent_fragment);
    write_dense(&mut w, "ent_attr", &bundle.ent_attr);
    w.into_inner()
}

enum Net {
    Dense(Vec<DenseLayer>),
    Conv(Vec<ConvLayer>),
}

fn read_u32_dim(r: &mut Reader) -> Result<usize, NnError> {
    let v = r.u32().ok_or(NnError::Truncated)? as usize;
    // Guards allocation on corrupt input; real layers are tiny.
    if v > 1 << 20 {
        return Err(NnError::Malformed(format!("implausible layer width {v}")));
    }
    Ok(v)
}

fn read_net(r: &mut Reader) -> Result<(String, Net), NnError> {
    let len = r.u8().ok_or(NnError::Truncated)? as usize;
    let name = r.take(len).ok_or(NnError::Truncated)?;
    let name = String::from_utf8(name.to_vec()).map_err(|_| NnError::Malformed("network name is not UTF-8".into()))?;
    let kind = r.u8().ok_or(NnError::Truncated)?;
    let count = r.u16().ok_or(NnError::Truncated)? as usize;
    let activation = |r: &mut Reader| -> Result<Activation, NnError> {
        let code = r.u8().ok_or(NnError::Truncated)?;
        Activation::from_code(code).ok_or_else(|| NnError::Malformed(format!("unknown activation {code}")))
    };
    let net = match kind {
        0 => {
            let mut layers = Vec::with_capacity(count.min(64));
            for _ in 0..count {
                let in_dim = read_u32_dim(r)?;
                let out_dim = read_u32_dim(r)?;
                let act = activation(r)?;
                let weight = r.f32s(in_dim * out_dim).ok_or(NnError::Truncated)?;
                let bias = r.f32s(out_dim).ok_or(NnError::Truncated)?;
                layers.push(DenseLayer {
                    in_dim,
                    out_dim,
                    weight,
                    bias,
                    activation: act,
                });
            }
            Net::Dense(layers)
        }
        1 => {
            let mut layers = Vec::with_capacity(count.min(64));
            for _ in 0..count {
                let in_ch = read_u32_dim(r)?;
                let out_ch = read_u32_dim(r)?;
                let act = activation(r)?;
                let kernel = r.f32s(in_ch * out_ch * 9).ok_or(NnError::Truncated)?;
                let bias = r.f32s(out_ch).ok_or(NnError::Truncated)?;
                layers.push(ConvLayer {
                    in_ch,
                    out_ch,
                    kernel,
                    bias,
                    activation: act,
                });
            }
            Net::Conv(layers)
        }
        k => return Err(NnError::Malformed(format!("unknown network kind {k}"))),
    };
    Ok((name, net))
}

pub fn load_weights(bytes: &[u8]) -> Result<WeightsBundle, NnError> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4).ok_or(NnError::Truncated)?;
    if magic != WEIGHTS_MAGIC {
        return Err(NnError::BadMagic);
    }
    let version = r.u16().ok_or(NnError::Truncated)?;
    if version != WEIGHTS_VERSION {
        return Err(NnError::UnsupportedVersion(version));
    }
    let count = r.u16().ok_or(NnError::Truncated)? as usize;
    let mut slots: [Option<Net>; 5] = Default::default();
    for _ in 0..count {
        let (name, net) = read_net(&mut r)?;
        let idx = NAMES
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| NnError::Malformed(format!("unknown network {name:?}")))?;
        if slots[idx].is_some() {
            return Err(NnError::Malformed(format!("network {name} appears twice")));
        }
        slots[idx] = Some(net);
    }
    if !r.is_empty() {
        return Err(NnError::Malformed(format!("{} trailing bytes", r.remaining())));
    }
    let mut take = |i: usize| slots[i].take().ok_or_else(|| NnError::Malformed(format!("missing network {}", NAMES[i])));
    let dense = |n: Net, name: &str| match n {
        Net::Dense(l) => Ok(l),
        Net::Conv(_) => Err(NnError::Malformed(format!("{name} must be dense"))),
    };
    let conv = |n: Net, name: &str| match n {
        Net::Conv(l) => Ok(l),
        Net::Dense(_) => Err(NnError::Malformed(format!("{name} must be convolutional"))),
    };
    let bundle = WeightsBundle {
        att_head: dense(take(0)?, NAMES[0])?,
        mot_head: dense(take(1)?, NAMES[1])?,
        ent_stream: conv(take(2)?, NAMES[2])?,
        ent_fragment: conv(take(3)?, NAMES[3])?,
        ent_attr: dense(take(4)?, NAMES[4])?,
    };
    bundle.check_internal()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::generate_synthetic;

    fn bundle() -> WeightsBundle {
        generate_synthetic(4, &GopConfig::new(6, 2, 8, 4, 3), 0.5).unwrap().weights
    }

    #[test]
    fn save_load_roundtrip_is_bit_exact() {
        let b = bundle();
        let bytes = save_weights(&b);
        let back = load_weights(&bytes).unwrap();
        assert_eq!(back, b);
        assert_eq!(save_weights(&back), bytes);
    }

    #[test]
    fn truncated_is_reported() {
        let bytes = save_weights(&bundle());
        for cut in [3, 7, 20, bytes.len() / 2, bytes.len() - 1] {
            assert_eq!(load_weights(&bytes[..cut]), Err(NnError::Truncated), "cut at {cut}");
        }
    }

    #[test]
    fn wrong_magic_is_reported() {
        let mut bytes = save_weights(&bundle());
        bytes[0] = b'X';
        assert_eq!(load_weights(&bytes), Err(NnError::BadMagic));
    }

    #[test]
    fn broken_chain_is_reported() {
        let mut b = bundle();
        b.att_head[1] = DenseLayer::zeros(7, b.att_head[1].out_dim, Activation::None);
        let err = load_weights(&save_weights(&b)).unwrap_err();
        assert!(matches!(err, NnError::DimChain { layer: 1, .. }), "{err:?}");
    }

    #[test]
    fn zeros_match_config() {
        let cfg = GopConfig::new(10, 5, 24, 4, 8);
        let z = WeightsBundle::zeros(&cfg);
        z.check(&cfg).unwrap();
        let mut other = cfg;
        other.stream_channels = 8;
        assert!(z.check(&other).is_err());
    }
}
